//! Emitter-to-sensor propagation: tapped delay lines, additive noise and
//! sensor clock offsets.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::SampledSignal;
use crate::spectral;
use crate::tdoa::TdoaMeasurement;
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
    #[error("emitter and sensor share the same ground position")]
    ZeroGroundDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Awgn,
    Trgr,
    WlanF,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    /// Excess delay relative to the first path, seconds.
    pub delay: f64,
    pub gain: Complex64,
}

/// Path set of one emitter-to-sensor link, held constant for one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Tap>,
    pub kind: ChannelKind,
    pub coherence_time: f64,
}

/// Coherence time of the fading channels, seconds.
pub const DEFAULT_COHERENCE_TIME: f64 = 80e-3;

impl ChannelRealization {
    /// Single unit-gain path.
    pub fn awgn() -> Self {
        Self {
            taps: vec![Tap { delay: 0.0, gain: Complex64::new(1.0, 0.0) }],
            kind: ChannelKind::Awgn,
            coherence_time: f64::INFINITY,
        }
    }

    pub fn max_excess_delay(&self) -> f64 {
        self.taps.iter().map(|t| t.delay).fold(0.0, f64::max)
    }

    pub fn total_power(&self) -> f64 {
        self.taps.iter().map(|t| t.gain.norm_sqr()).sum()
    }

    fn tap_pairs(&self) -> Vec<(f64, Complex64)> {
        self.taps.iter().map(|t| (t.delay, t.gain)).collect()
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws a Rayleigh tapped delay line with an exponential power-delay
/// profile: taps every `1/sample_rate`, `P_l ∝ exp(-τ_l/σ_τ)`, and
/// `E[Σ|h_l|²] = 1`.
pub fn draw_wlan_f<R: Rng + ?Sized>(
    sample_rate: f64,
    rms_delay_spread: f64,
    num_taps: usize,
    rng: &mut R,
) -> Result<ChannelRealization, ChannelError> {
    if num_taps == 0 {
        return Err(ChannelError::InvalidParams("num_taps must be at least 1".into()));
    }
    if !(rms_delay_spread > 0.0) || !(sample_rate > 0.0) {
        return Err(ChannelError::InvalidParams("rms_delay_spread and sample_rate must be positive".into()));
    }
    let spacing = 1.0 / sample_rate;
    let profile: Vec<f64> = (0..num_taps).map(|l| (-(l as f64 * spacing) / rms_delay_spread).exp()).collect();
    let norm: f64 = profile.iter().sum();
    let taps = profile
        .iter()
        .enumerate()
        .map(|(l, p)| Tap { delay: l as f64 * spacing, gain: complex_gaussian(rng, p / norm) })
        .collect();
    Ok(ChannelRealization { taps, kind: ChannelKind::WlanF, coherence_time: DEFAULT_COHERENCE_TIME })
}

/// Placement of one emitter-sensor pair above a flat reflecting ground.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    /// Horizontal coordinates, meters.
    pub emitter_pos: Vec<f64>,
    pub sensor_pos: Vec<f64>,
    pub emitter_height: f64,
    pub sensor_height: f64,
    pub reflection_coeff: Complex64,
}

impl LinkGeometry {
    pub fn ground_distance(&self) -> f64 {
        self.emitter_pos.iter().zip(&self.sensor_pos).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    /// Line-of-sight path length.
    pub fn direct_path(&self) -> f64 {
        let dz = self.sensor_height - self.emitter_height;
        self.ground_distance().hypot(dz)
    }

    /// Ground-reflected path length (image method).
    pub fn reflected_path(&self) -> f64 {
        let dz = self.sensor_height + self.emitter_height;
        self.ground_distance().hypot(dz)
    }
}

/// Two-ray ground reflection taps, normalized so the direct ray has unit gain.
///
/// The reflected ray carries `Γ·d1/d2` at excess delay `(d2 - d1)/c`. Its
/// carrier phase comes from the passband delay applied in [`apply_channel`],
/// which evaluates it at the actual hop frequency.
pub fn trgr_taps(geom: &LinkGeometry) -> Result<ChannelRealization, ChannelError> {
    if !(geom.emitter_height > 0.0 && geom.sensor_height > 0.0) {
        return Err(ChannelError::InvalidParams("antenna heights must be positive".into()));
    }
    if geom.emitter_pos.len() != geom.sensor_pos.len() {
        return Err(ChannelError::InvalidParams("position dimensions differ".into()));
    }
    let ground = geom.ground_distance();
    if ground == 0.0 {
        return Err(ChannelError::ZeroGroundDistance);
    }
    let d1 = geom.direct_path();
    let d2 = geom.reflected_path();
    let mut taps = vec![Tap { delay: 0.0, gain: Complex64::new(1.0, 0.0) }];
    if geom.reflection_coeff != Complex64::new(0.0, 0.0) {
        taps.push(Tap { delay: (d2 - d1) / SPEED_OF_LIGHT, gain: geom.reflection_coeff * (d1 / d2) });
    }
    Ok(ChannelRealization { taps, kind: ChannelKind::Trgr, coherence_time: f64::INFINITY })
}

/// Receiver noise setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// In-pulse SNR measured in `signal_bandwidth`, dB. `+inf` disables noise.
    pub snr_db: f64,
    /// Bandwidth the SNR refers to, Hz.
    pub signal_bandwidth: f64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { snr_db: f64::INFINITY, signal_bandwidth: 1.0 }
    }

    /// Per-sample complex noise variance for a received in-pulse power
    /// `signal_power` at `sample_rate`.
    pub fn sample_variance(&self, signal_power: f64, sample_rate: f64) -> f64 {
        if self.snr_db == f64::INFINITY {
            return 0.0;
        }
        let snr = 10f64.powf(self.snr_db / 10.0);
        signal_power / snr * (sample_rate / self.signal_bandwidth)
    }
}

/// `Σ_k g_k · s(t - ε_k - τ_j)` with passband delays, plus complex AWGN.
///
/// The noise level is set from the received power inside the pulse windows
/// (the nonzero support of `sig`), so every sensor sees the configured SNR.
pub fn apply_channel<R: Rng + ?Sized>(
    sig: &SampledSignal,
    chan: &ChannelRealization,
    propagation_delay: f64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<SampledSignal, ChannelError> {
    if !(propagation_delay >= 0.0) {
        return Err(ChannelError::InvalidParams("propagation delay must be nonnegative".into()));
    }
    if chan.taps.is_empty() {
        return Err(ChannelError::InvalidParams("channel has no taps".into()));
    }
    if propagation_delay + chan.max_excess_delay() >= sig.duration() {
        return Err(ChannelError::InvalidParams("total delay exceeds the signal duration".into()));
    }
    let on_samples = sig.samples.iter().filter(|s| s.norm_sqr() > 0.0).count();
    let mut out = sig.clone();
    let len = out.len();
    let response = spectral::tap_response(&chan.tap_pairs(), len, sig.sample_rate, sig.carrier_freq, propagation_delay);
    spectral::fft(&mut out.samples);
    for (v, h) in out.samples.iter_mut().zip(&response) {
        *v *= h;
    }
    spectral::ifft(&mut out.samples);

    if on_samples > 0 {
        let power = out.energy() / on_samples as f64;
        let var = noise.sample_variance(power, sig.sample_rate);
        if var > 0.0 {
            for v in out.samples.iter_mut() {
                *v += complex_gaussian(rng, var);
            }
        }
    }
    Ok(out)
}

/// Adds an independent clock offset `δ_j ~ U[-α, α]` to every TDoA.
pub fn inject_sync_error<R: Rng + ?Sized>(
    tdoa: &TdoaMeasurement,
    bound: f64,
    rng: &mut R,
) -> Result<TdoaMeasurement, ChannelError> {
    if !(bound >= 0.0) {
        return Err(ChannelError::InvalidParams("sync bound must be nonnegative".into()));
    }
    let mut out = tdoa.clone();
    if bound > 0.0 {
        for v in out.values.iter_mut() {
            *v += rng.random_range(-bound..=bound);
        }
    }
    Ok(out)
}
