//! Per-pulse cross-ambiguity delay estimation and incoherent accumulation.
//!
//! Conventions: sensor index 0 is the reference. A TDoA value for sensor `j`
//! is the arrival time at `j` minus the arrival time at the reference, which
//! is the lag at which `|Σ_t s_ref*(t) s_j(t + τ)|` peaks.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::signal::{PulseDescriptor, SampledSignal};
use crate::spectral;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("reference pulse {pulse} of sensor {sensor} carries no energy")]
    EmptyPulse { sensor: usize, pulse: usize },
    #[error("signals are not on a common sample grid")]
    GridMismatch,
    #[error("need at least two sensors and one pulse")]
    TooFewInputs,
    #[error("sensor {sensor} has no capture for pulse {pulse}")]
    MissingCapture { sensor: usize, pulse: usize },
    #[error("invalid argument: {0}")]
    Domain(String),
}

/// Delay-domain CAF magnitude around its peak.
#[derive(Debug, Clone, PartialEq)]
pub struct CafResult {
    /// Evaluated lags, seconds, ascending.
    pub lags: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub peak_lag: f64,
    pub peak_value: f64,
}

/// How the CAF peak is searched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CafConfig {
    /// Lags are searched in `[-search_window, search_window]`, seconds.
    pub search_window: f64,
    /// Peak is located on a lag grid `oversample` times finer than the
    /// sample grid before parabolic refinement.
    pub oversample: usize,
    /// Receive filter width, Hz, centered on the hop frequency. Cross-spectrum
    /// bins outside it are discarded. `None` correlates the full band.
    pub passband: Option<f64>,
}

impl CafConfig {
    pub fn new(search_window: f64) -> Self {
        Self { search_window, oversample: 1, passband: None }
    }
}

/// Estimated TDoAs of sensors `1..n` against sensor 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TdoaMeasurement {
    /// One value per non-reference sensor, seconds.
    pub values: Vec<f64>,
    /// Per-pulse peak lags, `per_pulse[j][i]` for sensor `j + 1` and pulse `i`.
    pub per_pulse: Option<Vec<Vec<f64>>>,
    pub num_pulses: usize,
}

impl TdoaMeasurement {
    pub fn from_values(values: Vec<f64>, num_pulses: usize) -> Self {
        Self { values, per_pulse: None, num_pulses }
    }
}

fn check_grid(a: &SampledSignal, b: &SampledSignal) -> Result<(), EstimatorError> {
    let same_rate = (a.sample_rate - b.sample_rate).abs() <= 1e-9 * a.sample_rate;
    let same_start = (a.start_time - b.start_time).abs() * a.sample_rate < 1e-6;
    if same_rate && same_start && a.len() == b.len() && a.carrier_freq == b.carrier_freq {
        Ok(())
    } else {
        Err(EstimatorError::GridMismatch)
    }
}

/// Cross-ambiguity function of one pulse.
///
/// The reference is restricted to the pulse window; `other` is correlated
/// against it for every integer lag within the search window. The
/// magnitude-maximizing lag is then refined: on an `oversample`-times finer
/// band-limited lag grid when requested, and finally by a three-point
/// parabola through the magnitudes.
pub fn caf_single_pulse(
    reference: &SampledSignal,
    other: &SampledSignal,
    pulse: &PulseDescriptor,
    config: &CafConfig,
) -> Result<CafResult, EstimatorError> {
    check_grid(reference, other)?;
    if !(config.search_window >= 0.0) || config.oversample == 0 || config.passband.is_some_and(|w| !(w > 0.0)) {
        return Err(EstimatorError::Domain("bad search window or oversample factor".into()));
    }
    let fs = reference.sample_rate;
    let window = reference.index_range(pulse.start_time, pulse.end_time());
    let max_lag = (config.search_window * fs).floor() as usize;
    let xs = &reference.samples[window.clone()];
    if xs.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(EstimatorError::EmptyPulse { sensor: 0, pulse: pulse.index });
    }

    // x at offset max_lag; y covers [window.start - max_lag, window.end + max_lag)
    let len = spectral::fast_len(xs.len() + 2 * max_lag);
    let mut x = vec![Complex64::new(0.0, 0.0); len];
    x[max_lag..max_lag + xs.len()].copy_from_slice(xs);
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    let y0 = window.start as isize - max_lag as isize;
    for (i, v) in y.iter_mut().enumerate().take(xs.len() + 2 * max_lag) {
        let m = y0 + i as isize;
        if m >= 0 && (m as usize) < other.len() {
            *v = other.samples[m as usize];
        }
    }
    spectral::fft(&mut x);
    spectral::fft(&mut y);
    let mut cross: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| a.conj() * b).collect();
    if let Some(width) = config.passband {
        let center = pulse.hop_freq - reference.carrier_freq;
        for (k, c) in cross.iter_mut().enumerate() {
            if (spectral::bin_freq(k, len, fs) - center).abs() > 0.5 * width {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }
    let mut corr = cross.clone();
    spectral::ifft(&mut corr);

    let at = |m: isize| -> f64 {
        let idx = if m < 0 { (m + len as isize) as usize } else { m as usize };
        corr[idx].norm()
    };
    let w = max_lag as isize;
    let coarse: Vec<(isize, f64)> = (-w..=w).map(|m| (m, at(m))).collect();
    let (m0, v0) =
        coarse.iter().fold((0isize, f64::NEG_INFINITY), |best, &(m, v)| if v > best.1 { (m, v) } else { best });

    let mut points: Vec<(f64, f64)> = coarse.iter().map(|&(m, v)| (m as f64, v)).collect();
    let at_edge = m0 == -w || m0 == w;
    let peak_samples = if at_edge {
        m0 as f64
    } else if config.oversample == 1 {
        m0 as f64 + parabolic_offset(at(m0 - 1), v0, at(m0 + 1))
    } else {
        let u = config.oversample as isize;
        let guess = parabolic_offset(at(m0 - 1), v0, at(m0 + 1));
        let qc = (guess * u as f64).round() as isize;
        let bins = support(&cross);
        let eval = |q: isize| band_limited_lag(&bins, len, m0 as f64 + q as f64 / u as f64).norm();
        let mut lo = qc.min(0) - 1;
        let mut hi = qc.max(0) + 1;
        let mut fine: Vec<(isize, f64)> = (lo..=hi).map(|q| (q, eval(q))).collect();
        loop {
            let (qbest, _) = argmax(&fine);
            if qbest == lo && lo > -u {
                lo -= 1;
                fine.insert(0, (lo, eval(lo)));
            } else if qbest == hi && hi < u {
                hi += 1;
                fine.push((hi, eval(hi)));
            } else {
                break;
            }
        }
        let (qbest, vbest) = argmax(&fine);
        let idx = (qbest - lo) as usize;
        let delta = if idx > 0 && idx + 1 < fine.len() {
            parabolic_offset(fine[idx - 1].1, vbest, fine[idx + 1].1)
        } else {
            0.0
        };
        for &(q, v) in &fine {
            if q != 0 {
                points.push((m0 as f64 + q as f64 / u as f64, v));
            }
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        m0 as f64 + (qbest as f64 + delta) / u as f64
    };

    let peak_value = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(CafResult {
        lags: points.iter().map(|p| p.0 / fs).collect(),
        magnitudes: points.iter().map(|p| p.1).collect(),
        peak_lag: peak_samples / fs,
        peak_value,
    })
}

fn argmax(v: &[(isize, f64)]) -> (isize, f64) {
    v.iter().fold((v[0].0, f64::NEG_INFINITY), |b, &(q, m)| if m > b.1 { (q, m) } else { b })
}

/// Vertex offset of the parabola through `(-1, a)`, `(0, b)`, `(1, c)`.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::EPSILON * b.abs().max(1e-300) {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

/// Nonzero cross-spectrum bins as `(signed bin, value)`.
fn support(cross: &[Complex64]) -> Vec<(isize, Complex64)> {
    let len = cross.len() as isize;
    let half = (cross.len()).div_ceil(2) as isize;
    cross
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() > 0.0)
        .map(|(k, c)| {
            let k = k as isize;
            (if k < half { k } else { k - len }, *c)
        })
        .collect()
}

/// Circular correlation at a fractional lag (in samples) from the nonzero
/// bins of its `len`-point spectrum.
fn band_limited_lag(bins: &[(isize, Complex64)], len: usize, lag: f64) -> Complex64 {
    let step = 2.0 * PI * lag / len as f64;
    let rot = Complex64::from_polar(1.0, step);
    let mut acc = Complex64::new(0.0, 0.0);
    let mut ph = Complex64::new(1.0, 0.0);
    let mut next = None;
    for (i, &(k, c)) in bins.iter().enumerate() {
        // resync on gaps and periodically to bound rounding drift
        if next != Some(k) || i % 1024 == 0 {
            ph = Complex64::from_polar(1.0, step * k as f64);
        }
        acc += c * ph;
        ph *= rot;
        next = Some(k + 1);
    }
    acc / len as f64
}

/// Captured samples of one sensor.
#[derive(Debug, Clone)]
pub enum Capture {
    /// One record covering every pulse.
    Train(SampledSignal),
    /// One record per pulse, in pulse order.
    Segments(Vec<SampledSignal>),
}

impl Capture {
    fn for_pulse(&self, i: usize) -> Option<&SampledSignal> {
        match self {
            Capture::Train(s) => Some(s),
            Capture::Segments(v) => v.get(i),
        }
    }
}

/// Per-pulse CAF peaks averaged over the pulses (incoherent accumulation).
pub fn estimate_tdoa(
    received: &[Capture],
    pulses: &[PulseDescriptor],
    config: &CafConfig,
) -> Result<TdoaMeasurement, EstimatorError> {
    if received.len() < 2 || pulses.is_empty() {
        return Err(EstimatorError::TooFewInputs);
    }
    let mut per_pulse = Vec::with_capacity(received.len() - 1);
    for (j, capture) in received.iter().enumerate().skip(1) {
        let mut lags = Vec::with_capacity(pulses.len());
        for (i, pulse) in pulses.iter().enumerate() {
            let r = received[0].for_pulse(i).ok_or(EstimatorError::MissingCapture { sensor: 0, pulse: pulse.index })?;
            let s = capture.for_pulse(i).ok_or(EstimatorError::MissingCapture { sensor: j, pulse: pulse.index })?;
            let caf = caf_single_pulse(r, s, pulse, config).map_err(|e| match e {
                EstimatorError::EmptyPulse { pulse, .. } => EstimatorError::EmptyPulse { sensor: 0, pulse },
                other => other,
            })?;
            lags.push(caf.peak_lag);
        }
        per_pulse.push(lags);
    }
    let values = per_pulse.iter().map(|l| l.iter().sum::<f64>() / l.len() as f64).collect();
    Ok(TdoaMeasurement { values, per_pulse: Some(per_pulse), num_pulses: pulses.len() })
}

/// Single-pulse TDoA standard deviation `1/(B_s √(B_n T_p γ))` with
/// `1/γ = (1/γ1 + 1/γj + 1/(γ1 γj))/2`.
///
/// `rms_bandwidth` is the RMS bandwidth in Hz; it enters as the angular
/// bandwidth `2π·rms_bandwidth`. SNRs are linear.
pub fn crlb_single_pulse(
    rms_bandwidth: f64,
    noise_bandwidth: f64,
    pulse_width: f64,
    snr_ref: f64,
    snr_other: f64,
) -> Result<f64, EstimatorError> {
    let args = [rms_bandwidth, noise_bandwidth, pulse_width, snr_ref, snr_other];
    if args.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(EstimatorError::Domain("all CRLB arguments must be finite and positive".into()));
    }
    let inv_gamma = 0.5 * (1.0 / snr_ref + 1.0 / snr_other + 1.0 / (snr_ref * snr_other));
    let gamma = 1.0 / inv_gamma;
    Ok(1.0 / (2.0 * PI * rms_bandwidth * (noise_bandwidth * pulse_width * gamma).sqrt()))
}
