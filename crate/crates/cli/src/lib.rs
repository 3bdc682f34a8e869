//! Command implementations behind the `fhloc` binary.

pub mod config;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fhloc::locator::Algorithm;
use fhloc::montecarlo::{run_campaign, run_tdoa_diag, CampaignError, CampaignResult};
use fhloc::signal::{generate_pulse_train, rms_bandwidth, FhssParams};
use fhloc::tdoa::crlb_single_pulse;
use serde::Serialize;
use thiserror::Error;

use config::ScenarioConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    Invariant(String),
    #[error("campaign aborted: {0}")]
    Aborted(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Aborted(_) => 4,
        }
    }
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::InvalidScenario(m) => CliError::Invariant(m),
            e @ CampaignError::Aborted { .. } => CliError::Aborted(e.to_string()),
        }
    }
}

/// Files staged in the output directory and renamed into place together.
struct Staged {
    dir: PathBuf,
    files: Vec<(tempfile::NamedTempFile, &'static str)>,
}

impl Staged {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn add(&mut self, name: &'static str, bytes: &[u8]) -> Result<(), CliError> {
        let mut tmp = tempfile::Builder::new().prefix(".fhloc-").tempfile_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        self.files.push((tmp, name));
        Ok(())
    }

    fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let mut out = Vec::new();
        for (tmp, name) in self.files {
            let path = self.dir.join(name);
            tmp.persist(&path).map_err(|e| CliError::Io(e.error))?;
            out.push(path);
        }
        Ok(out)
    }
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    }
    w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("summary serializes");
    v.push(b'\n');
    v
}

#[derive(Serialize)]
struct ResultRow {
    trial: usize,
    algorithm: Algorithm,
    error_m: f64,
    truth_x: f64,
    truth_y: f64,
    est_x: f64,
    est_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub p50_m: Option<f64>,
    pub p90_m: Option<f64>,
    pub p95_m: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    schema_version: u32,
    command: &'static str,
    scenario_digest: String,
    num_trials: usize,
    algorithms: Vec<AlgorithmSummary>,
    scenario: &'a ScenarioConfig,
}

pub struct RunReport {
    pub campaign: CampaignResult,
    pub summaries: Vec<AlgorithmSummary>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    /// Per-algorithm percentile table for the terminal.
    pub fn table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<10} {:>10} {:>10} {:>10} {:>9}", "algorithm", "p50 [m]", "p90 [m]", "p95 [m]", "failures")
            .unwrap();
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        for a in &self.summaries {
            writeln!(
                s,
                "{:<10} {:>10} {:>10} {:>10} {:>9}",
                a.algorithm.name(),
                fmt(a.p50_m),
                fmt(a.p90_m),
                fmt(a.p95_m),
                a.failures
            )
            .unwrap();
        }
        s
    }
}

/// Runs a localization campaign and writes `results.csv` and `summary.json`.
pub fn cmd_run(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunReport, CliError> {
    let scenario = cfg.to_scenario()?;
    let campaign = run_campaign(&scenario)?;

    let mut rows = Vec::new();
    for t in &campaign.trials {
        for (alg, est) in &t.estimates {
            if let Ok(e) = est {
                rows.push(ResultRow {
                    trial: t.trial,
                    algorithm: *alg,
                    error_m: (&e.position - &t.truth).norm(),
                    truth_x: t.truth[0],
                    truth_y: t.truth[1],
                    est_x: e.position[0],
                    est_y: e.position[1],
                });
            }
        }
    }
    let summaries: Vec<AlgorithmSummary> = campaign
        .cdfs
        .iter()
        .map(|c| AlgorithmSummary {
            algorithm: c.algorithm,
            p50_m: c.percentile(50.0).ok(),
            p90_m: c.percentile(90.0).ok(),
            p95_m: c.percentile(95.0).ok(),
            successes: c.errors().len(),
            failures: c.failures,
        })
        .collect();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        command: "run",
        scenario_digest: scenario.digest(),
        num_trials: scenario.num_trials,
        algorithms: summaries.clone(),
        scenario: cfg,
    };

    let mut staged = Staged::new(out_dir)?;
    staged.add("results.csv", &csv_bytes(rows)?)?;
    staged.add("summary.json", &json_bytes(&summary))?;
    let files = staged.commit()?;
    Ok(RunReport { campaign, summaries, files })
}

#[derive(Serialize)]
struct DiagRow {
    trial: usize,
    sensor_pair: String,
    pulse: usize,
    error_ns: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    bin_low_ns: f64,
    bin_high_ns: f64,
    count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagSummary {
    pub count: usize,
    pub failures: usize,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub p05_ns: f64,
    pub p50_ns: f64,
    pub p95_ns: f64,
    pub fraction_within_8ns: f64,
    pub fraction_within_10ns: f64,
}

#[derive(Serialize)]
struct DiagFile<'a> {
    schema_version: u32,
    command: &'static str,
    scenario_digest: String,
    errors: &'a DiagSummary,
    scenario: &'a ScenarioConfig,
}

pub struct DiagReport {
    pub errors_ns: Vec<f64>,
    pub summary: DiagSummary,
    pub files: Vec<PathBuf>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-pulse TDoA errors with no solver: writes `tdoa_errors.csv`,
/// `tdoa_histogram.csv` (bins of `bin_ns`) and `tdoa_summary.json`.
pub fn cmd_tdoa_diag(cfg: &ScenarioConfig, out_dir: &Path, bin_ns: f64) -> Result<DiagReport, CliError> {
    if !(bin_ns > 0.0 && bin_ns.is_finite()) {
        return Err(CliError::Invariant("histogram bin width must be positive".into()));
    }
    let scenario = cfg.to_scenario()?;
    let trials = run_tdoa_diag(&scenario)?;
    let mut rows = Vec::new();
    for t in &trials {
        for (pair, pulse, err) in t.pulse_errors() {
            rows.push(DiagRow { trial: t.trial, sensor_pair: format!("0-{pair}"), pulse, error_ns: err * 1e9 });
        }
    }
    let failures = trials.iter().filter(|t| t.result.is_err()).count();
    let errors_ns: Vec<f64> = rows.iter().map(|r| r.error_ns).collect();
    if errors_ns.is_empty() {
        return Err(CliError::Aborted("no TDoA estimates".into()));
    }
    let mut sorted = errors_ns.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = errors_ns.iter().sum::<f64>() / n;
    let std = (errors_ns.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let within = |b: f64| errors_ns.iter().filter(|e| e.abs() <= b).count() as f64 / n;
    let summary = DiagSummary {
        count: errors_ns.len(),
        failures,
        mean_ns: mean,
        std_ns: std,
        p05_ns: quantile(&sorted, 0.05),
        p50_ns: quantile(&sorted, 0.5),
        p95_ns: quantile(&sorted, 0.95),
        fraction_within_8ns: within(8.0),
        fraction_within_10ns: within(10.0),
    };

    let first = (sorted[0] / bin_ns).floor() as i64;
    let last = (sorted[sorted.len() - 1] / bin_ns).floor() as i64;
    let mut counts = vec![0usize; (last - first + 1) as usize];
    for e in &sorted {
        counts[((e / bin_ns).floor() as i64 - first) as usize] += 1;
    }
    let hist = counts.iter().enumerate().map(|(i, &count)| {
        let lo = (first + i as i64) as f64 * bin_ns;
        HistogramRow { bin_low_ns: lo, bin_high_ns: lo + bin_ns, count }
    });

    let file = DiagFile {
        schema_version: SCHEMA_VERSION,
        command: "tdoa-diag",
        scenario_digest: scenario.digest(),
        errors: &summary,
        scenario: cfg,
    };
    let mut staged = Staged::new(out_dir)?;
    staged.add("tdoa_errors.csv", &csv_bytes(rows)?)?;
    staged.add("tdoa_histogram.csv", &csv_bytes(hist)?)?;
    staged.add("tdoa_summary.json", &json_bytes(&file))?;
    let files = staged.commit()?;
    Ok(DiagReport { errors_ns, summary, files })
}

/// Inputs of the CRLB table. `None` fields take their value from the
/// default waveform.
#[derive(Debug, Clone, Default)]
pub struct CrlbParams {
    pub rms_bandwidth_hz: Option<f64>,
    pub noise_bandwidth_hz: Option<f64>,
    pub pulse_width_s: Option<f64>,
    pub num_pulses: Option<usize>,
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrlbRow {
    pub snr_db: f64,
    pub sigma_single_s: f64,
    pub sigma_accumulated_s: f64,
}

/// RMS bandwidth of one default pulse, Hz.
pub fn default_rms_bandwidth() -> f64 {
    let params = FhssParams { num_pulses: 1, pulse_period: 2e-3, ..FhssParams::default() };
    let (sig, _) = generate_pulse_train(&params).expect("default waveform is valid");
    rms_bandwidth(&sig)
}

pub fn crlb_rows(p: &CrlbParams) -> Result<Vec<CrlbRow>, CliError> {
    let defaults = FhssParams::default();
    let b_rms = p.rms_bandwidth_hz.unwrap_or_else(default_rms_bandwidth);
    let b_n = p.noise_bandwidth_hz.unwrap_or(defaults.signal_bandwidth());
    let tp = p.pulse_width_s.unwrap_or(defaults.pulse_width);
    let n = p.num_pulses.unwrap_or(defaults.num_pulses);
    if n == 0 {
        return Err(CliError::Invariant("num_pulses must be positive".into()));
    }
    p.snr_db
        .iter()
        .map(|&db| {
            let g = 10f64.powf(db / 10.0);
            let sigma = crlb_single_pulse(b_rms, b_n, tp, g, g).map_err(|e| CliError::Invariant(e.to_string()))?;
            Ok(CrlbRow { snr_db: db, sigma_single_s: sigma, sigma_accumulated_s: sigma / (n as f64).sqrt() })
        })
        .collect()
}

pub fn crlb_table(rows: &[CrlbRow], num_pulses: usize) -> String {
    let mut s = String::new();
    writeln!(s, "{:>8} {:>16} {:>16}", "snr_db", "sigma_1 [ns]", format!("sigma_{num_pulses} [ns]")).unwrap();
    for r in rows {
        writeln!(s, "{:>8.1} {:>16.4} {:>16.4}", r.snr_db, r.sigma_single_s * 1e9, r.sigma_accumulated_s * 1e9)
            .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Config(String::new()).exit_code(),
            CliError::Invariant(String::new()).exit_code(),
            CliError::Aborted(String::new()).exit_code(),
            CliError::Io(std::io::Error::other("x")).exit_code(),
        ];
        for (i, c) in codes.iter().enumerate() {
            assert!(!codes[..i].contains(c));
            assert_ne!(*c, 0);
        }
    }

    #[test]
    fn crlb_matches_core_formula() {
        let p = CrlbParams { snr_db: vec![10.0], ..CrlbParams::default() };
        let rows = crlb_rows(&p).unwrap();
        let g = 10.0;
        let want = crlb_single_pulse(default_rms_bandwidth(), 2.5e6, 2e-3, g, g).unwrap();
        assert_eq!(rows[0].sigma_single_s, want);
        assert!((rows[0].sigma_accumulated_s * 10f64.sqrt() - want).abs() < 1e-20);
    }

    #[test]
    fn crlb_scales_with_bandwidth_and_snr() {
        let base = CrlbParams { rms_bandwidth_hz: Some(300e3), snr_db: vec![30.0, 40.0], ..CrlbParams::default() };
        let rows = crlb_rows(&base).unwrap();
        assert!((rows[0].sigma_single_s / rows[1].sigma_single_s - 10f64.sqrt()).abs() < 0.01);
        let doubled = crlb_rows(&CrlbParams { rms_bandwidth_hz: Some(600e3), ..base.clone() }).unwrap();
        assert!((rows[0].sigma_single_s / doubled[0].sigma_single_s - 2.0).abs() < 1e-12);
        assert!(crlb_rows(&CrlbParams { rms_bandwidth_hz: Some(-1.0), ..base }).is_err());
    }

    #[test]
    fn quantile_endpoints() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
    }
}
