//! Scenario configuration documents, presets and overrides.
//!
//! A document is layered: a base (a named preset, or the defaults), then the
//! tables of a TOML file, then `key=value` overrides. Every physical quantity
//! carries its unit in the key name. The fully resolved document is echoed
//! into each JSON summary and can be fed back in as a config file.

use std::path::Path;

use fhloc::channel::ChannelKind;
use fhloc::locator::{Algorithm, GnOptions, GridSpec, JacobianMode, SensorArray};
use fhloc::montecarlo::{Area, ChannelSettings, Processing, Scenario};
use fhloc::signal::FhssParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub num_trials: usize,
    pub n_avg: usize,
    pub master_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub sync_bound_ns: f64,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Sensor 0 is the TDoA reference.
    pub sensors_m: Vec<[f64; 2]>,
    pub area_x_min_m: f64,
    pub area_x_max_m: f64,
    pub area_y_min_m: f64,
    pub area_y_max_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub num_pulses: usize,
    pub pulse_period_ms: f64,
    pub pulse_width_ms: f64,
    pub hop_band_low_mhz: f64,
    pub hop_band_high_mhz: f64,
    pub center_freq_mhz: f64,
    pub sample_rate_mhz: f64,
    pub symbol_rate_mhz: f64,
    pub fsk_deviation_khz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    pub emitter_height_m: f64,
    pub sensor_height_m: f64,
    pub reflection_coeff_re: f64,
    pub reflection_coeff_im: f64,
    pub rms_delay_spread_ns: f64,
    pub num_taps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub decimation: usize,
    pub guard_us: f64,
    pub search_margin_ns: f64,
    /// 0 disables the receive filter.
    pub passband_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocatorConfig {
    pub grid_resolution_m: f64,
    pub gn_tolerance_m: f64,
    pub gn_max_iterations: usize,
    pub gn_jacobian: JacobianMode,
    pub gn_confine_to_area: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub campaign: CampaignConfig,
    pub geometry: GeometryConfig,
    pub signal: SignalConfig,
    pub channel: ChannelConfig,
    pub estimator: EstimatorConfig,
    pub locator: LocatorConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::from_scenario(&Scenario::default())
    }
}

impl ScenarioConfig {
    pub fn from_scenario(s: &Scenario) -> Self {
        let f = &s.fhss;
        let c = &s.channel;
        let p = &s.processing;
        Self {
            campaign: CampaignConfig {
                num_trials: s.num_trials,
                n_avg: s.n_avg,
                master_seed: s.master_seed,
                algorithms: s.algorithms.clone(),
                sync_bound_ns: s.sync_bound * 1e9,
                snr_db: s.snr_db,
            },
            geometry: GeometryConfig {
                sensors_m: s.sensors.positions().iter().map(|v| [v[0], v[1]]).collect(),
                area_x_min_m: s.area.x_min,
                area_x_max_m: s.area.x_max,
                area_y_min_m: s.area.y_min,
                area_y_max_m: s.area.y_max,
            },
            signal: SignalConfig {
                num_pulses: f.num_pulses,
                pulse_period_ms: f.pulse_period * 1e3,
                pulse_width_ms: f.pulse_width * 1e3,
                hop_band_low_mhz: f.hop_band.0 / 1e6,
                hop_band_high_mhz: f.hop_band.1 / 1e6,
                center_freq_mhz: f.center_freq / 1e6,
                sample_rate_mhz: f.sample_rate / 1e6,
                symbol_rate_mhz: f.symbol_rate / 1e6,
                fsk_deviation_khz: f.fsk_deviation / 1e3,
            },
            channel: ChannelConfig {
                kind: c.kind,
                emitter_height_m: c.emitter_height,
                sensor_height_m: c.sensor_height,
                reflection_coeff_re: c.reflection_coeff[0],
                reflection_coeff_im: c.reflection_coeff[1],
                rms_delay_spread_ns: c.rms_delay_spread * 1e9,
                num_taps: c.num_taps,
            },
            estimator: EstimatorConfig {
                decimation: p.decimation,
                guard_us: p.guard * 1e6,
                search_margin_ns: p.search_margin * 1e9,
                passband_mhz: p.passband.map_or(0.0, |w| w / 1e6),
            },
            locator: LocatorConfig {
                grid_resolution_m: s.grid.resolution,
                gn_tolerance_m: s.gn.tolerance,
                gn_max_iterations: s.gn.max_iterations,
                gn_jacobian: s.gn.jacobian,
                gn_confine_to_area: s.gn.region.is_some(),
            },
        }
    }

    /// Builds and validates the simulation scenario.
    pub fn to_scenario(&self) -> Result<Scenario, CliError> {
        let invalid = |m: String| CliError::Invariant(m);
        let g = &self.geometry;
        let pts: Vec<(f64, f64)> = g.sensors_m.iter().map(|p| (p[0], p[1])).collect();
        let sensors = SensorArray::from_xy(&pts).map_err(|e| invalid(e.to_string()))?;
        let area = Area { x_min: g.area_x_min_m, x_max: g.area_x_max_m, y_min: g.area_y_min_m, y_max: g.area_y_max_m };
        let sig = &self.signal;
        let ch = &self.channel;
        let est = &self.estimator;
        let loc = &self.locator;
        let scenario = Scenario {
            sensors,
            area,
            channel: ChannelSettings {
                kind: ch.kind,
                emitter_height: ch.emitter_height_m,
                sensor_height: ch.sensor_height_m,
                reflection_coeff: [ch.reflection_coeff_re, ch.reflection_coeff_im],
                rms_delay_spread: ch.rms_delay_spread_ns / 1e9,
                num_taps: ch.num_taps,
            },
            snr_db: self.campaign.snr_db,
            sync_bound: self.campaign.sync_bound_ns / 1e9,
            fhss: FhssParams {
                num_pulses: sig.num_pulses,
                pulse_period: sig.pulse_period_ms / 1e3,
                pulse_width: sig.pulse_width_ms / 1e3,
                hop_band: (sig.hop_band_low_mhz * 1e6, sig.hop_band_high_mhz * 1e6),
                center_freq: sig.center_freq_mhz * 1e6,
                sample_rate: sig.sample_rate_mhz * 1e6,
                symbol_rate: sig.symbol_rate_mhz * 1e6,
                fsk_deviation: sig.fsk_deviation_khz * 1e3,
                seed: 0,
            },
            n_avg: self.campaign.n_avg,
            num_trials: self.campaign.num_trials,
            grid: GridSpec {
                x_min: area.x_min,
                x_max: area.x_max,
                y_min: area.y_min,
                y_max: area.y_max,
                resolution: loc.grid_resolution_m,
            },
            algorithms: self.campaign.algorithms.clone(),
            master_seed: self.campaign.master_seed,
            gn: GnOptions {
                tolerance: loc.gn_tolerance_m,
                max_iterations: loc.gn_max_iterations,
                jacobian: loc.gn_jacobian,
                region: loc.gn_confine_to_area.then(|| area.region()),
            },
            processing: Processing {
                decimation: est.decimation,
                guard: est.guard_us / 1e6,
                search_margin: est.search_margin_ns / 1e9,
                passband: (est.passband_mhz > 0.0).then_some(est.passband_mhz * 1e6),
            },
        };
        if est.passband_mhz < 0.0 {
            return Err(invalid("passband_mhz must be nonnegative".into()));
        }
        scenario.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(scenario)
    }
}

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn(&mut Scenario),
}

fn trgr(alpha_ns: f64, n_avg: usize) -> impl Fn(&mut Scenario) {
    move |s| {
        s.channel.kind = ChannelKind::Trgr;
        s.sync_bound = alpha_ns / 1e9;
        s.n_avg = n_avg;
    }
}

pub const PRESETS: &[Preset] = &[
    Preset { name: "fig2_alpha0", description: "TRGR, sync bound 0 ns, N_avg = 1", build: |s| trgr(0.0, 1)(s) },
    Preset { name: "fig2_alpha10", description: "TRGR, sync bound 10 ns, N_avg = 1", build: |s| trgr(10.0, 1)(s) },
    Preset { name: "fig2_alpha20", description: "TRGR, sync bound 20 ns, N_avg = 1", build: |s| trgr(20.0, 1)(s) },
    Preset {
        name: "fig3",
        description: "TRGR, sync bound 20 ns, N_avg = 20 (override n_avg=1 for the baseline curve)",
        build: |s| trgr(20.0, 20)(s),
    },
    Preset {
        name: "fig4",
        description: "TRGR TDoA errors, sync bound 0 ns (for tdoa-diag)",
        build: |s| trgr(0.0, 1)(s),
    },
    Preset {
        name: "fig5",
        description: "WLAN channel F, sync bound 0 ns, N_avg = 20 (override n_avg=1 for the baseline curve)",
        build: |s| {
            s.channel.kind = ChannelKind::WlanF;
            s.n_avg = 20;
        },
    },
    Preset {
        name: "fig6",
        description: "WLAN channel F TDoA errors (for tdoa-diag)",
        build: |s| s.channel.kind = ChannelKind::WlanF,
    },
];

pub fn preset(name: &str) -> Result<ScenarioConfig, CliError> {
    let p =
        PRESETS.iter().find(|p| p.name == name).ok_or_else(|| CliError::Config(format!("unknown preset {name:?}")))?;
    let mut s = Scenario::default();
    (p.build)(&mut s);
    Ok(ScenarioConfig::from_scenario(&s))
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies one `key=value` override. `key` is either `section.key` or a bare
/// key, which must name exactly one entry across all sections.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| CliError::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (s.to_string(), f.to_string()),
        None => {
            let owners: Vec<&String> =
                doc.iter().filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key))).map(|(k, _)| k).collect();
            match owners.as_slice() {
                [one] => ((*one).clone(), key.to_string()),
                [] => return Err(CliError::Config(format!("unknown override key {key:?}"))),
                _ => return Err(CliError::Config(format!("override key {key:?} is ambiguous"))),
            }
        }
    };
    let table = doc
        .get_mut(&section)
        .and_then(|v| v.as_table_mut())
        .ok_or_else(|| CliError::Config(format!("unknown section {section:?}")))?;
    if !table.contains_key(&field) {
        return Err(CliError::Config(format!("unknown override key {key:?}")));
    }
    table.insert(field, value);
    Ok(())
}

/// Parses a config document. A top-level `preset = "<name>"` selects the
/// base; a JSON document (such as a run summary) is read through its
/// `scenario` echo.
pub fn parse_document(text: &str, json: bool) -> Result<(Option<String>, toml::Table), CliError> {
    let mut table: toml::Table = if json {
        let mut v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        if let Some(echo) = v.get_mut("scenario") {
            v = echo.take();
        }
        toml::Table::try_from(v).map_err(|e| CliError::Config(format!("invalid config: {e}")))?
    } else {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid TOML: {e}")))?
    };
    let preset = match table.remove("preset") {
        None => None,
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err(CliError::Config("preset must be a string".into())),
    };
    Ok((preset, table))
}

/// Resolves the layered configuration.
pub fn load(path: Option<&Path>, preset_name: Option<&str>, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut file_preset = None;
    let mut layer = toml::Table::new();
    if let Some(p) = path {
        let text =
            std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
        let json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        (file_preset, layer) = parse_document(&text, json)?;
    }
    let base = match (preset_name, file_preset.as_deref()) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Config(format!("preset {a:?} conflicts with {b:?} in the config file")));
        }
        (Some(name), _) | (None, Some(name)) => preset(name)?,
        (None, None) => ScenarioConfig::default(),
    };
    let mut doc = toml::Table::try_from(&base).expect("config serializes");
    merge(&mut doc, layer);
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    doc.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("invalid config: {}", e.message())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_scenario() {
        let cfg = ScenarioConfig::default();
        let s = cfg.to_scenario().unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(ScenarioConfig::from_scenario(&s), cfg);
    }

    #[test]
    fn every_preset_is_valid() {
        for p in PRESETS {
            preset(p.name).unwrap().to_scenario().unwrap();
        }
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let (_, layer) = parse_document("[campaign]\nnum_trails = 3\n", false).unwrap();
        let mut doc = toml::Table::try_from(ScenarioConfig::default()).unwrap();
        merge(&mut doc, layer);
        assert!(doc.try_into::<ScenarioConfig>().is_err());
        let (_, layer) = parse_document("[extras]\nx = 1\n", false).unwrap();
        let mut doc = toml::Table::try_from(ScenarioConfig::default()).unwrap();
        merge(&mut doc, layer);
        assert!(doc.try_into::<ScenarioConfig>().is_err());
    }

    #[test]
    fn overrides_by_bare_and_dotted_key() {
        let mut doc = toml::Table::try_from(ScenarioConfig::default()).unwrap();
        apply_override(&mut doc, "num_trials=2").unwrap();
        apply_override(&mut doc, "channel.kind = wlan_f").unwrap();
        apply_override(&mut doc, "sync_bound_ns=12.5").unwrap();
        let cfg: ScenarioConfig = doc.clone().try_into().unwrap();
        assert_eq!(cfg.campaign.num_trials, 2);
        assert_eq!(cfg.channel.kind, ChannelKind::WlanF);
        assert_eq!(cfg.campaign.sync_bound_ns, 12.5);
        assert!(apply_override(&mut doc, "no_such_key=1").is_err());
        assert!(apply_override(&mut doc, "num_trials").is_err());
    }

    #[test]
    fn integer_literals_accepted_for_real_keys() {
        let (_, layer) = parse_document("[campaign]\nsync_bound_ns = 10\n", false).unwrap();
        let mut doc = toml::Table::try_from(ScenarioConfig::default()).unwrap();
        merge(&mut doc, layer);
        let cfg: ScenarioConfig = doc.try_into().unwrap();
        assert_eq!(cfg.campaign.sync_bound_ns, 10.0);
    }

    #[test]
    fn json_echo_is_accepted() {
        let cfg = preset("fig5").unwrap();
        let summary = serde_json::json!({ "schema_version": 1, "scenario": cfg });
        let (_, layer) = parse_document(&summary.to_string(), true).unwrap();
        let back: ScenarioConfig = layer.try_into().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invariant_violations_are_reported() {
        let mut cfg = ScenarioConfig::default();
        cfg.campaign.n_avg = 0;
        assert!(matches!(cfg.to_scenario(), Err(CliError::Invariant(_))));
        let mut cfg = ScenarioConfig::default();
        cfg.geometry.sensors_m = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(cfg.to_scenario(), Err(CliError::Invariant(_))));
    }
}
