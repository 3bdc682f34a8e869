//! End-to-end Monte Carlo trials: random emitter placement, per-round channel
//! and noise draws, CAF TDoA estimation, sync-error injection, position
//! solvers, and error CDFs.
//!
//! Every random draw comes from a ChaCha8 stream keyed by
//! `(master_seed, trial, round, purpose)`, so results do not depend on the
//! schedule and a round's signal does not depend on `n_avg` or the sync
//! bound. [`run_campaigns`] exploits that to share TDoA measurements between
//! scenarios that only differ in sync bound, averaging depth or solvers.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{
    apply_channel, draw_wlan_f, inject_sync_error, trgr_taps, ChannelError, ChannelKind, ChannelRealization,
    LinkGeometry, NoiseSpec,
};
use crate::locator::{
    average_estimates, distance, solve_ls_bf, solve_ls_bf_gn, solve_ml_grid, Algorithm, GnOptions, GridSpec,
    LocationEstimate, LocatorError, Position, Region, SensorArray,
};
use crate::signal::{draw_pulses, hop_segment, FhssParams, SignalError};
use crate::tdoa::{estimate_tdoa, CafConfig, Capture, EstimatorError, TdoaMeasurement};
use crate::SPEED_OF_LIGHT;

/// Axis-aligned rectangle, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Area {
    pub fn square(side: f64) -> Self {
        Self { x_min: 0.0, x_max: side, y_min: 0.0, y_max: side }
    }

    pub fn diagonal(&self) -> f64 {
        (self.x_max - self.x_min).hypot(self.y_max - self.y_min)
    }

    pub fn region(&self) -> Region {
        Region { bounds: vec![(self.x_min, self.x_max), (self.y_min, self.y_max)] }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == 2 && (self.x_min..=self.x_max).contains(&p[0]) && (self.y_min..=self.y_max).contains(&p[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSettings {
    pub kind: ChannelKind,
    /// Antenna heights above ground for TRGR, meters.
    pub emitter_height: f64,
    pub sensor_height: f64,
    /// Ground reflection coefficient `[re, im]`.
    pub reflection_coeff: [f64; 2],
    /// WLAN-F exponential profile RMS delay spread, seconds.
    pub rms_delay_spread: f64,
    pub num_taps: usize,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Trgr,
            emitter_height: 1.5,
            sensor_height: 2.0,
            reflection_coeff: [-1.0, 0.0],
            rms_delay_spread: 150e-9,
            num_taps: 169,
        }
    }
}

/// Receiver-side simulation shortcuts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Processing {
    /// Each hop is simulated dehopped at `sample_rate / decimation`; the CAF
    /// refines its peak on a grid `decimation` times finer, which restores
    /// the full-rate lag resolution.
    pub decimation: usize,
    /// Silence kept on both sides of every pulse record, seconds.
    pub guard: f64,
    /// Added to `diagonal / c` to form the CAF search half-width, seconds.
    pub search_margin: f64,
    /// CAF receive filter width, Hz.
    pub passband: Option<f64>,
}

impl Default for Processing {
    fn default() -> Self {
        Self { decimation: 32, guard: 4e-6, search_margin: 500e-9, passband: Some(2.5e6) }
    }
}

/// Complete description of one Monte Carlo campaign.
///
/// `fhss.seed` is ignored: every round draws its own hops and payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sensors: SensorArray,
    pub area: Area,
    pub channel: ChannelSettings,
    /// In-pulse SNR at every sensor, dB.
    pub snr_db: f64,
    /// Sync error bound `α`, seconds.
    pub sync_bound: f64,
    pub fhss: FhssParams,
    pub n_avg: usize,
    pub num_trials: usize,
    pub grid: GridSpec,
    pub algorithms: Vec<Algorithm>,
    pub master_seed: u64,
    pub gn: GnOptions,
    pub processing: Processing,
}

impl Default for Scenario {
    /// Four sensors on the corners of a 50 m square, TRGR, 10 dB, `α = 0`.
    fn default() -> Self {
        let side = 50.0;
        Self {
            sensors: SensorArray::from_xy(&[(0.0, 0.0), (side, 0.0), (0.0, side), (side, side)]).unwrap(),
            area: Area::square(side),
            channel: ChannelSettings::default(),
            snr_db: 10.0,
            sync_bound: 0.0,
            fhss: FhssParams::default(),
            n_avg: 1,
            num_trials: 500,
            grid: GridSpec { x_min: 0.0, x_max: side, y_min: 0.0, y_max: side, resolution: 0.5 },
            algorithms: Algorithm::ALL.to_vec(),
            master_seed: 0,
            gn: GnOptions { region: Some(Area::square(side).region()), ..GnOptions::default() },
            processing: Processing::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::InvalidScenario(m));
        if self.sensors.dim() != 2 {
            return bad("sensors must be planar".into());
        }
        let a = &self.area;
        if ![a.x_min, a.x_max, a.y_min, a.y_max].iter().all(|v| v.is_finite())
            || a.x_max <= a.x_min
            || a.y_max <= a.y_min
        {
            return bad("area must be a finite rectangle with positive extent".into());
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if !(self.sync_bound >= 0.0 && self.sync_bound.is_finite()) {
            return bad("sync bound must be finite and nonnegative".into());
        }
        if self.n_avg == 0 || self.num_trials == 0 {
            return bad("n_avg and num_trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        for (i, alg) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(alg) {
                return bad(format!("algorithm {alg} listed twice"));
            }
        }
        self.fhss.validate().map_err(|e| CampaignError::InvalidScenario(e.to_string()))?;
        if self.algorithms.contains(&Algorithm::Ml) {
            self.grid.validate().map_err(|e| CampaignError::InvalidScenario(e.to_string()))?;
        }
        if !(self.gn.tolerance > 0.0) {
            return bad("gn tolerance must be positive".into());
        }
        let c = &self.channel;
        match c.kind {
            ChannelKind::Awgn => {}
            ChannelKind::Trgr => {
                if !(c.emitter_height > 0.0 && c.sensor_height > 0.0) {
                    return bad("TRGR antenna heights must be positive".into());
                }
                if !c.reflection_coeff.iter().all(|v| v.is_finite()) {
                    return bad("reflection coefficient must be finite".into());
                }
            }
            ChannelKind::WlanF => {
                if !(c.rms_delay_spread > 0.0) || c.num_taps == 0 {
                    return bad("WLAN-F needs a positive delay spread and at least one tap".into());
                }
            }
        }
        let p = &self.processing;
        if p.decimation == 0 {
            return bad("decimation must be at least 1".into());
        }
        if !(p.search_margin >= 0.0 && p.guard.is_finite()) {
            return bad("search margin must be nonnegative".into());
        }
        let needed = self.max_path_delay() + self.search_window();
        if !(p.guard >= needed) {
            return bad(format!(
                "guard {:.3e} s is shorter than the delay span plus search window {:.3e} s",
                p.guard, needed
            ));
        }
        Ok(())
    }

    /// CAF search half-width, seconds.
    pub fn search_window(&self) -> f64 {
        self.area.diagonal() / SPEED_OF_LIGHT + self.processing.search_margin
    }

    fn max_path_delay(&self) -> f64 {
        let excess = match self.channel.kind {
            ChannelKind::Awgn => 0.0,
            ChannelKind::Trgr => (self.channel.emitter_height + self.channel.sensor_height) / SPEED_OF_LIGHT,
            ChannelKind::WlanF => self.channel.num_taps as f64 / self.fhss.sample_rate,
        };
        let mut far: f64 = 0.0;
        let a = &self.area;
        for v in self.sensors.positions() {
            for corner in [[a.x_min, a.y_min], [a.x_max, a.y_min], [a.x_min, a.y_max], [a.x_max, a.y_max]] {
                far = far.max(distance(&corner, v.as_slice()));
            }
        }
        let height = self.channel.emitter_height - self.channel.sensor_height;
        far.hypot(height) / SPEED_OF_LIGHT + excess
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Everything that determines the TDoA measurements of a round.
    fn measurement_key(&self) -> String {
        let mut s = self.clone();
        s.sync_bound = 0.0;
        s.n_avg = 1;
        s.algorithms.clear();
        s.grid = Scenario::default().grid;
        s.gn = GnOptions::default();
        serde_json::to_string(&s).expect("scenario serializes")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Locator(#[from] LocatorError),
}

/// A failed trial, tagged with its seed so it can be replayed.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("trial seed {trial_seed:#018x}: {source}")]
pub struct TrialFailure {
    pub trial_seed: u64,
    pub source: PipelineError,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CampaignError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("{algorithm}: {failures} of {trials} trials failed; first: {first}")]
    Aborted { algorithm: Algorithm, failures: usize, trials: usize, first: TrialFailure },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Position = 1,
    Signal = 2,
    Channel = 3,
    Noise = 4,
    Sync = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under `master_seed`.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    splitmix(splitmix(master_seed) ^ trial as u64)
}

fn stream(trial_seed: u64, round: usize, purpose: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(trial_seed ^ purpose as u64) ^ round as u64))
}

/// Emitter position of a trial, uniform over the area.
pub fn draw_emitter(scenario: &Scenario, trial_seed: u64) -> Position {
    let mut rng = stream(trial_seed, 0, Stream::Position);
    let a = &scenario.area;
    let x = rng.random_range(a.x_min..=a.x_max);
    let y = rng.random_range(a.y_min..=a.y_max);
    Position::from_vec(vec![x, y])
}

fn link_channel<R: Rng>(
    scenario: &Scenario,
    emitter: &Position,
    sensor: &Position,
    rng: &mut R,
) -> Result<(f64, ChannelRealization), ChannelError> {
    let c = &scenario.channel;
    match c.kind {
        ChannelKind::Awgn => {
            Ok((distance(emitter.as_slice(), sensor.as_slice()) / SPEED_OF_LIGHT, ChannelRealization::awgn()))
        }
        ChannelKind::Trgr => {
            let geom = LinkGeometry {
                emitter_pos: emitter.as_slice().to_vec(),
                sensor_pos: sensor.as_slice().to_vec(),
                emitter_height: c.emitter_height,
                sensor_height: c.sensor_height,
                reflection_coeff: Complex64::new(c.reflection_coeff[0], c.reflection_coeff[1]),
            };
            Ok((geom.direct_path() / SPEED_OF_LIGHT, trgr_taps(&geom)?))
        }
        ChannelKind::WlanF => Ok((
            distance(emitter.as_slice(), sensor.as_slice()) / SPEED_OF_LIGHT,
            draw_wlan_f(scenario.fhss.sample_rate, c.rms_delay_spread, c.num_taps, rng)?,
        )),
    }
}

/// TDoA measurement of one round before sync errors, plus the true TDoAs
/// implied by the propagation delays that were simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMeasurement {
    pub measured: TdoaMeasurement,
    pub truth: Vec<f64>,
}

/// Simulates round `round` of a trial: fresh hops, one channel realization
/// per sensor, noise, and the CAF estimate over all pulses.
pub fn measure_round(
    scenario: &Scenario,
    trial_seed: u64,
    round: usize,
    emitter: &Position,
) -> Result<RoundMeasurement, PipelineError> {
    let mut params = scenario.fhss.clone();
    params.seed = stream(trial_seed, round, Stream::Signal).random();
    let pulses = draw_pulses(&params)?;
    let mut chan_rng = stream(trial_seed, round, Stream::Channel);
    let mut noise_rng = stream(trial_seed, round, Stream::Noise);

    let links = scenario
        .sensors
        .positions()
        .iter()
        .map(|v| link_channel(scenario, emitter, v, &mut chan_rng))
        .collect::<Result<Vec<_>, _>>()?;
    let noise = NoiseSpec { snr_db: scenario.snr_db, signal_bandwidth: params.signal_bandwidth() };

    let mut segments: Vec<Vec<_>> = vec![Vec::with_capacity(pulses.len()); links.len()];
    for pulse in &pulses {
        let tx = hop_segment(&params, pulse, scenario.processing.decimation, scenario.processing.guard)?;
        for ((delay, chan), out) in links.iter().zip(segments.iter_mut()) {
            out.push(apply_channel(&tx, chan, *delay, &noise, &mut noise_rng)?);
        }
    }
    let captures: Vec<Capture> = segments.into_iter().map(Capture::Segments).collect();
    let config = CafConfig {
        search_window: scenario.search_window(),
        oversample: scenario.processing.decimation,
        passband: scenario.processing.passband,
    };
    let measured = estimate_tdoa(&captures, &pulses, &config)?;
    let truth = links[1..].iter().map(|(d, _)| d - links[0].0).collect();
    Ok(RoundMeasurement { measured, truth })
}

fn solve(scenario: &Scenario, algorithm: Algorithm, m: &TdoaMeasurement) -> Result<LocationEstimate, LocatorError> {
    match algorithm {
        Algorithm::LsBf => solve_ls_bf(&scenario.sensors, m),
        Algorithm::Ml => solve_ml_grid(&scenario.sensors, m, &scenario.grid),
        Algorithm::LsBfGn => solve_ls_bf_gn(&scenario.sensors, m, &scenario.gn),
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub trial_seed: u64,
    pub truth: Position,
    /// One entry per enabled algorithm, in scenario order.
    pub estimates: Vec<(Algorithm, Result<LocationEstimate, TrialFailure>)>,
}

impl TrialResult {
    pub fn error(&self, algorithm: Algorithm) -> Option<f64> {
        self.estimates
            .iter()
            .find(|(a, _)| *a == algorithm)
            .and_then(|(_, r)| r.as_ref().ok())
            .map(|e| (&e.position - &self.truth).norm())
    }
}

fn locate(
    scenario: &Scenario,
    trial: usize,
    seed: u64,
    truth: Position,
    rounds: &[Result<RoundMeasurement, PipelineError>],
) -> TrialResult {
    let fail = |e: PipelineError| TrialFailure { trial_seed: seed, source: e };
    // sync errors for every round up front so every algorithm sees the same draws
    let corrupted: Result<Vec<TdoaMeasurement>, TrialFailure> = rounds[..scenario.n_avg]
        .iter()
        .enumerate()
        .map(|(r, m)| {
            let m = m.as_ref().map_err(|e| fail(e.clone()))?;
            let mut rng = stream(seed, r, Stream::Sync);
            inject_sync_error(&m.measured, scenario.sync_bound, &mut rng).map_err(|e| fail(e.into()))
        })
        .collect();

    let estimates = scenario
        .algorithms
        .iter()
        .map(|&alg| {
            let result = corrupted.clone().and_then(|ms| {
                let fixes = ms
                    .iter()
                    .map(|m| solve(scenario, alg, m).map_err(|e| fail(e.into())))
                    .collect::<Result<Vec<_>, _>>()?;
                combine(fixes).map_err(|e| fail(e.into()))
            });
            (alg, result)
        })
        .collect();
    TrialResult { trial, trial_seed: seed, truth, estimates }
}

/// Averages per-round fixes; a single fix is returned untouched.
fn combine(mut fixes: Vec<LocationEstimate>) -> Result<LocationEstimate, LocatorError> {
    if fixes.len() == 1 {
        return Ok(fixes.pop().unwrap());
    }
    let positions: Vec<Position> = fixes.iter().map(|f| f.position.clone()).collect();
    let position = average_estimates(&positions)?;
    let n = fixes.len() as f64;
    Ok(LocationEstimate {
        position,
        algorithm: fixes[0].algorithm,
        residual: fixes.iter().map(|f| f.residual).sum::<f64>() / n,
        iterations: fixes.iter().map(|f| f.iterations).sum(),
        candidates: positions,
        rank_deficient: fixes.iter().any(|f| f.rank_deficient),
        residual_history: Vec::new(),
    })
}

/// Runs every round of one trial and locates the emitter with each enabled
/// solver.
pub fn run_trial(scenario: &Scenario, trial: usize, trial_seed: u64) -> TrialResult {
    let truth = draw_emitter(scenario, trial_seed);
    let rounds: Vec<_> = (0..scenario.n_avg).map(|r| measure_round(scenario, trial_seed, r, &truth)).collect();
    locate(scenario, trial, trial_seed, truth, &rounds)
}

/// Sorted localization errors of one algorithm over a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCdf {
    pub algorithm: Algorithm,
    errors: Vec<f64>,
    pub failures: usize,
    pub num_trials: usize,
    pub scenario_digest: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CdfError {
    #[error("no errors recorded")]
    Empty,
    #[error("percentile {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("error values must be finite and nonnegative")]
    InvalidError,
}

impl ErrorCdf {
    pub fn new(
        algorithm: Algorithm,
        mut errors: Vec<f64>,
        failures: usize,
        num_trials: usize,
        scenario_digest: String,
    ) -> Result<Self, CdfError> {
        if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CdfError::InvalidError);
        }
        errors.sort_by(f64::total_cmp);
        Ok(Self { algorithm, errors, failures, num_trials, scenario_digest })
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// Empirical quantile with linear interpolation between order
    /// statistics, the `k`-th of `n` sitting at `100·(k-1)/(n-1)`.
    pub fn percentile(&self, p: f64) -> Result<f64, CdfError> {
        if !(0.0..=100.0).contains(&p) {
            return Err(CdfError::OutOfRange(p));
        }
        let n = self.errors.len();
        if n == 0 {
            return Err(CdfError::Empty);
        }
        let h = p / 100.0 * (n - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        Ok(self.errors[lo] + (h - lo as f64) * (self.errors[hi] - self.errors[lo]))
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub scenario: Scenario,
    pub trials: Vec<TrialResult>,
    pub cdfs: Vec<ErrorCdf>,
}

impl CampaignResult {
    pub fn cdf(&self, algorithm: Algorithm) -> Option<&ErrorCdf> {
        self.cdfs.iter().find(|c| c.algorithm == algorithm)
    }

    pub fn p90(&self, algorithm: Algorithm) -> Option<f64> {
        self.cdf(algorithm).and_then(|c| c.percentile(90.0).ok())
    }
}

fn aggregate(scenario: &Scenario, trials: Vec<TrialResult>) -> Result<CampaignResult, CampaignError> {
    let digest = scenario.digest();
    let mut cdfs = Vec::new();
    for &alg in &scenario.algorithms {
        let mut errors = Vec::with_capacity(trials.len());
        let mut failures = Vec::new();
        for t in &trials {
            let (_, r) = t.estimates.iter().find(|(a, _)| *a == alg).expect("every algorithm is reported");
            match r {
                Ok(e) => errors.push((&e.position - &t.truth).norm()),
                Err(f) => failures.push(f.clone()),
            }
        }
        if failures.len() * 10 > trials.len() {
            return Err(CampaignError::Aborted {
                algorithm: alg,
                failures: failures.len(),
                trials: trials.len(),
                first: failures.swap_remove(0),
            });
        }
        let cdf = ErrorCdf::new(alg, errors, failures.len(), trials.len(), digest.clone())
            .map_err(|e| CampaignError::InvalidScenario(e.to_string()))?;
        cdfs.push(cdf);
    }
    Ok(CampaignResult { scenario: scenario.clone(), trials, cdfs })
}

/// Runs `num_trials` independent trials in parallel on the current rayon
/// pool. Aborts when more than 10% of the trials of any algorithm fail.
pub fn run_campaign(scenario: &Scenario) -> Result<CampaignResult, CampaignError> {
    run_campaigns(std::slice::from_ref(scenario)).pop().expect("one result per scenario")
}

/// Runs several campaigns, simulating each distinct set of TDoA
/// measurements once. Scenarios that differ only in sync bound, `n_avg`,
/// grid, Gauss-Newton options or algorithm selection share their rounds.
pub fn run_campaigns(scenarios: &[Scenario]) -> Vec<Result<CampaignResult, CampaignError>> {
    let mut out: Vec<Option<Result<CampaignResult, CampaignError>>> = vec![None; scenarios.len()];
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in scenarios.iter().enumerate() {
        match s.validate() {
            Ok(()) => groups.entry(s.measurement_key()).or_default().push(i),
            Err(e) => out[i] = Some(Err(e)),
        }
    }
    for members in groups.values() {
        let base = &scenarios[members[0]];
        let rounds = members.iter().map(|&i| scenarios[i].n_avg).max().unwrap();
        let trials = members.iter().map(|&i| scenarios[i].num_trials).max().unwrap();
        let data: Vec<(u64, Position, Vec<_>)> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(base.master_seed, t);
                let truth = draw_emitter(base, seed);
                let ms = (0..rounds).map(|r| measure_round(base, seed, r, &truth)).collect();
                (seed, truth, ms)
            })
            .collect();
        for &i in members {
            let s = &scenarios[i];
            let results: Vec<TrialResult> = data[..s.num_trials]
                .par_iter()
                .enumerate()
                .map(|(t, (seed, truth, ms))| locate(s, t, *seed, truth.clone(), ms))
                .collect();
            out[i] = Some(aggregate(s, results));
        }
    }
    out.into_iter().map(|r| r.expect("every scenario handled")).collect()
}

/// TDoA-only record of one trial (round 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagTrial {
    pub trial: usize,
    pub trial_seed: u64,
    pub emitter: Position,
    pub result: Result<RoundMeasurement, TrialFailure>,
}

impl DiagTrial {
    /// Per-pulse errors `(sensor_pair, pulse, error_s)`, pairs and pulses 1-based.
    pub fn pulse_errors(&self) -> Vec<(usize, usize, f64)> {
        let Ok(r) = &self.result else { return Vec::new() };
        let Some(per_pulse) = &r.measured.per_pulse else { return Vec::new() };
        let mut out = Vec::new();
        for (j, (lags, truth)) in per_pulse.iter().zip(&r.truth).enumerate() {
            for (i, lag) in lags.iter().enumerate() {
                out.push((j + 1, i + 1, lag - truth));
            }
        }
        out
    }
}

/// TDoA estimation only, one round per trial, no sync error and no solver.
pub fn run_tdoa_diag(scenario: &Scenario) -> Result<Vec<DiagTrial>, CampaignError> {
    scenario.validate()?;
    let trials: Vec<DiagTrial> = (0..scenario.num_trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(scenario.master_seed, t);
            let emitter = draw_emitter(scenario, seed);
            let result =
                measure_round(scenario, seed, 0, &emitter).map_err(|e| TrialFailure { trial_seed: seed, source: e });
            DiagTrial { trial: t, trial_seed: seed, emitter, result }
        })
        .collect();
    let failures: Vec<&DiagTrial> = trials.iter().filter(|t| t.result.is_err()).collect();
    if failures.len() * 10 > trials.len() {
        return Err(CampaignError::Aborted {
            algorithm: Algorithm::LsBf,
            failures: failures.len(),
            trials: trials.len(),
            first: failures[0].result.clone().unwrap_err(),
        });
    }
    Ok(trials)
}
