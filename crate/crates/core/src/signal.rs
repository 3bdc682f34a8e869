//! FHSS pulse-train synthesis and the band-limited delay operator.
//!
//! Samples are complex baseband. A [`SampledSignal`] records which RF
//! frequency maps to 0 Hz (`carrier_freq`): the full pulse train is centered
//! on the middle of the hop band, while the per-hop segments used by the
//! Monte Carlo engine are dehopped onto the pulse's own carrier and sampled
//! at a decimated rate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid FHSS parameters: {0}")]
    InvalidParams(String),
    #[error("delay {delay} s is not shorter than the signal duration {duration} s")]
    DelayTooLong { delay: f64, duration: f64 },
}

/// Emitter waveform description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhssParams {
    pub num_pulses: usize,
    /// Pulse repetition period, seconds.
    pub pulse_period: f64,
    /// Pulse on-time, seconds.
    pub pulse_width: f64,
    /// Absolute RF hop band `[low, high]`, Hz.
    pub hop_band: (f64, f64),
    /// Center of the hop band, Hz. Baseband 0 Hz of the full train.
    pub center_freq: f64,
    pub sample_rate: f64,
    pub symbol_rate: f64,
    /// 2FSK tone offset, Hz (tones at ±deviation).
    pub fsk_deviation: f64,
    pub seed: u64,
}

impl Default for FhssParams {
    fn default() -> Self {
        Self {
            num_pulses: 10,
            pulse_period: 8e-3,
            pulse_width: 2e-3,
            hop_band: (2400e6, 2480e6),
            center_freq: 2440e6,
            sample_rate: 160e6,
            symbol_rate: 1e6,
            fsk_deviation: 250e3,
            seed: 0,
        }
    }
}

impl FhssParams {
    pub fn validate(&self) -> Result<(), SignalError> {
        let bad = |m: &str| Err(SignalError::InvalidParams(m.to_string()));
        let finite = [
            self.pulse_period,
            self.pulse_width,
            self.hop_band.0,
            self.hop_band.1,
            self.center_freq,
            self.sample_rate,
            self.symbol_rate,
            self.fsk_deviation,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter");
        }
        if self.num_pulses == 0 {
            return bad("num_pulses must be at least 1");
        }
        if !(self.pulse_width > 0.0 && self.pulse_width <= self.pulse_period) {
            return bad("require 0 < pulse_width <= pulse_period");
        }
        let (lo, hi) = self.hop_band;
        if lo >= hi {
            return bad("hop band low edge must be below high edge");
        }
        let mid = 0.5 * (lo + hi);
        if (self.center_freq - mid).abs() > 1e-6 * mid.abs().max(1.0) {
            return bad("center_freq must be the midpoint of the hop band");
        }
        if self.sample_rate <= 0.0 || self.symbol_rate <= 0.0 || self.fsk_deviation < 0.0 {
            return bad("sample_rate and symbol_rate must be positive, fsk_deviation nonnegative");
        }
        if (hi - lo) + 2.0 * self.fsk_deviation >= self.sample_rate {
            return bad("hop band plus FSK deviation is not representable at this sample rate");
        }
        if self.symbol_rate > self.sample_rate {
            return bad("symbol_rate exceeds sample_rate");
        }
        Ok(())
    }

    /// Carson-rule bandwidth `2·(deviation + symbol_rate)` of one pulse, Hz.
    pub fn signal_bandwidth(&self) -> f64 {
        2.0 * (self.fsk_deviation + self.symbol_rate)
    }

    pub fn train_len(&self) -> usize {
        (self.num_pulses as f64 * self.pulse_period * self.sample_rate).round() as usize
    }

    pub fn symbols_per_pulse(&self) -> usize {
        ((self.pulse_width * self.symbol_rate).ceil() as usize).max(1)
    }
}

/// One hop of the train.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseDescriptor {
    /// 1-based pulse index.
    pub index: usize,
    pub hop_freq: f64,
    pub init_phase: f64,
    pub bits: Vec<bool>,
    /// Start of the pulse window, seconds.
    pub start_time: f64,
    /// Pulse width, seconds.
    pub width: f64,
}

impl PulseDescriptor {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.width
    }
}

/// Complex-baseband sample sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    /// Time of `samples[0]`, seconds.
    pub start_time: f64,
    /// RF frequency represented by 0 Hz, Hz.
    pub carrier_freq: f64,
}

impl SampledSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time_of(&self, n: usize) -> f64 {
        self.start_time + n as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Index range of the samples whose time falls in `[start, end)`.
    pub fn index_range(&self, start: f64, end: f64) -> std::ops::Range<usize> {
        let lo = ((start - self.start_time) * self.sample_rate).round().max(0.0) as usize;
        let hi = ((end - self.start_time) * self.sample_rate).round().max(0.0) as usize;
        lo.min(self.len())..hi.min(self.len())
    }
}

/// Draws hop frequency, initial phase and payload bits for every pulse.
///
/// The draws depend only on `params.seed`, so the full train and the per-hop
/// segments of one seed describe the same transmission.
pub fn draw_pulses(params: &FhssParams) -> Result<Vec<PulseDescriptor>, SignalError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let nsym = params.symbols_per_pulse();
    Ok((0..params.num_pulses)
        .map(|i| {
            let hop_freq = rng.random_range(params.hop_band.0..=params.hop_band.1);
            let init_phase = rng.random_range(0.0..2.0 * PI);
            let bits = (0..nsym).map(|_| rng.random::<bool>()).collect();
            PulseDescriptor {
                index: i + 1,
                hop_freq,
                init_phase,
                bits,
                start_time: i as f64 * params.pulse_period,
                width: params.pulse_width,
            }
        })
        .collect())
}

/// Continuous-phase 2FSK envelope of one pulse.
struct Envelope<'a> {
    bits: &'a [bool],
    symbol_rate: f64,
    deviation: f64,
    // accumulated phase at the start of each symbol
    symbol_phase: Vec<f64>,
}

impl<'a> Envelope<'a> {
    fn new(pulse: &'a PulseDescriptor, params: &FhssParams) -> Self {
        let step = 2.0 * PI * params.fsk_deviation / params.symbol_rate;
        let mut acc = 0.0;
        let symbol_phase = pulse
            .bits
            .iter()
            .map(|&b| {
                let p = acc;
                acc += if b { step } else { -step };
                p
            })
            .collect();
        Self { bits: &pulse.bits, symbol_rate: params.symbol_rate, deviation: params.fsk_deviation, symbol_phase }
    }

    /// Phase at time `dt` after the pulse start.
    fn phase(&self, dt: f64) -> f64 {
        let k = ((dt * self.symbol_rate).floor() as usize).min(self.bits.len() - 1);
        let sign = if self.bits[k] { 1.0 } else { -1.0 };
        self.symbol_phase[k] + sign * 2.0 * PI * self.deviation * (dt - k as f64 / self.symbol_rate)
    }
}

/// Adds pulse `pulse` into `sig`, expressed relative to `sig.carrier_freq`.
fn render_pulse(sig: &mut SampledSignal, pulse: &PulseDescriptor, params: &FhssParams) {
    let env = Envelope::new(pulse, params);
    let offset = pulse.hop_freq - sig.carrier_freq;
    let range = sig.index_range(pulse.start_time, pulse.end_time());
    for n in range {
        let t = sig.time_of(n);
        let dt = (t - pulse.start_time).max(0.0);
        let phase = env.phase(dt) + 2.0 * PI * offset * t + pulse.init_phase;
        sig.samples[n] = Complex64::from_polar(1.0, phase);
    }
}

/// Synthesizes the full `N`-pulse train at `params.sample_rate`, centered on
/// `params.center_freq`.
pub fn generate_pulse_train(params: &FhssParams) -> Result<(SampledSignal, Vec<PulseDescriptor>), SignalError> {
    let pulses = draw_pulses(params)?;
    let mut sig = SampledSignal {
        samples: vec![Complex64::new(0.0, 0.0); params.train_len()],
        sample_rate: params.sample_rate,
        start_time: 0.0,
        carrier_freq: params.center_freq,
    };
    for p in &pulses {
        render_pulse(&mut sig, p, params);
    }
    Ok((sig, pulses))
}

/// Renders one pulse dehopped onto its own carrier, sampled at
/// `params.sample_rate / decimation`, with `guard` seconds of silence on
/// both sides of the pulse window.
///
/// The segment grid is aligned with the full-rate grid, so `decimation = 1`
/// reproduces the train samples up to the frequency translation
/// `exp(j2π(f_i - f_center)t)`.
pub fn hop_segment(
    params: &FhssParams,
    pulse: &PulseDescriptor,
    decimation: usize,
    guard: f64,
) -> Result<SampledSignal, SignalError> {
    if decimation == 0 {
        return Err(SignalError::InvalidParams("decimation must be at least 1".into()));
    }
    let fs = params.sample_rate / decimation as f64;
    let guard_samples = (guard * fs).ceil().max(0.0) as usize;
    let pulse_samples = (pulse.width * fs).round() as usize;
    let len = spectral::fast_len(pulse_samples + 2 * guard_samples);
    let start_index = (pulse.start_time * fs).round() as i64 - guard_samples as i64;
    let mut sig = SampledSignal {
        samples: vec![Complex64::new(0.0, 0.0); len],
        sample_rate: fs,
        start_time: start_index as f64 / fs,
        carrier_freq: pulse.hop_freq,
    };
    render_pulse(&mut sig, pulse, params);
    Ok(sig)
}

/// Band-limited circular time shift of `sig` by `delay` seconds.
///
/// Applies the phase ramp `exp(-j2π f τ)` across every DFT bin. With
/// `rf_phase`, the carrier rotation `exp(-j2π f_c τ)` of a passband delay is
/// applied as well.
pub fn fractional_delay(sig: &SampledSignal, delay: f64, rf_phase: bool) -> Result<SampledSignal, SignalError> {
    if delay.abs() >= sig.duration() {
        return Err(SignalError::DelayTooLong { delay, duration: sig.duration() });
    }
    let mut out = sig.clone();
    if delay == 0.0 {
        return Ok(out);
    }
    let carrier = if rf_phase { sig.carrier_freq } else { 0.0 };
    spectral::fft(&mut out.samples);
    spectral::apply_delay_ramp(&mut out.samples, sig.sample_rate, carrier, delay);
    spectral::ifft(&mut out.samples);
    Ok(out)
}

/// RMS bandwidth of `sig` about its spectral centroid, Hz.
pub fn rms_bandwidth(sig: &SampledSignal) -> f64 {
    let mut spec = sig.samples.clone();
    spectral::fft(&mut spec);
    let len = spec.len();
    let (mut p, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, v) in spec.iter().enumerate() {
        let f = spectral::bin_freq(k, len, sig.sample_rate);
        let w = v.norm_sqr();
        p += w;
        m1 += w * f;
        m2 += w * f * f;
    }
    if p == 0.0 {
        return 0.0;
    }
    let mean = m1 / p;
    (m2 / p - mean * mean).max(0.0).sqrt()
}
