//! FFT plumbing shared by the signal, channel and estimator modules.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place forward DFT (unnormalized).
pub fn fft(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// In-place inverse DFT, normalized by `1/len`.
pub fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Signed frequency of DFT bin `k` for a transform of length `len`.
#[inline]
pub fn bin_freq(k: usize, len: usize, sample_rate: f64) -> f64 {
    let k = if 2 * k >= len { k as isize - len as isize } else { k as isize };
    k as f64 * sample_rate / len as f64
}

/// Smallest length `>= n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Calls `visit(k, exp(-j 2π (f_k + carrier) τ))` for every bin in order.
///
/// The phasor is advanced by a fixed rotation along each half of the
/// spectrum and recomputed every 256 bins to bound rounding drift.
fn for_each_ramp(len: usize, sample_rate: f64, carrier: f64, delay: f64, mut visit: impl FnMut(usize, Complex64)) {
    let half = len.div_ceil(2);
    let step = -2.0 * PI * sample_rate / len as f64 * delay;
    let rot = Complex64::from_polar(1.0, step);
    for range in [0..half, half..len] {
        let mut ph = Complex64::new(1.0, 0.0);
        for k in range {
            if (k - if k < half { 0 } else { half }) % 256 == 0 {
                ph = Complex64::from_polar(1.0, -2.0 * PI * (bin_freq(k, len, sample_rate) + carrier) * delay);
            }
            visit(k, ph);
            ph *= rot;
        }
    }
}

/// Multiplies bin `k` of `spec` by `exp(-j 2π (f_k + carrier) τ)`.
pub fn apply_delay_ramp(spec: &mut [Complex64], sample_rate: f64, carrier: f64, delay: f64) {
    for_each_ramp(spec.len(), sample_rate, carrier, delay, |k, ph| spec[k] *= ph);
}

/// Frequency response `H(f_k) = Σ_l g_l exp(-j 2π (f_k + carrier)(d_l + offset))`
/// evaluated on the DFT bins of a `len`-point transform at `sample_rate`.
///
/// Uniformly spaced tap sets with many taps go through a chirp-z transform;
/// short or irregular ones are summed directly.
pub fn tap_response(
    taps: &[(f64, Complex64)],
    len: usize,
    sample_rate: f64,
    carrier: f64,
    offset: f64,
) -> Vec<Complex64> {
    if taps.len() > 8 {
        if let Some(spacing) = uniform_spacing(taps) {
            return tap_response_czt(taps, spacing, len, sample_rate, carrier, offset);
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for &(delay, gain) in taps {
        for_each_ramp(len, sample_rate, carrier, delay + offset, |k, ph| out[k] += gain * ph);
    }
    out
}

fn uniform_spacing(taps: &[(f64, Complex64)]) -> Option<f64> {
    let first = taps[0].0;
    let spacing = taps[1].0 - first;
    if spacing <= 0.0 {
        return None;
    }
    let ok = taps.iter().enumerate().all(|(l, t)| ((t.0 - first) - l as f64 * spacing).abs() <= 1e-6 * spacing);
    ok.then_some(spacing)
}

// Bluestein evaluation of Σ_l c_l W^{k l} for the signed bins k = -len/2 .. len-len/2-1.
fn tap_response_czt(
    taps: &[(f64, Complex64)],
    spacing: f64,
    len: usize,
    sample_rate: f64,
    carrier: f64,
    offset: f64,
) -> Vec<Complex64> {
    let first = taps[0].0;
    let ntaps = taps.len();
    // W = exp(-j 2π α), α = spacing·sample_rate/len; chirp(x) = W^{x²/2}.
    let alpha = spacing * sample_rate / len as f64;
    let chirp = |x: f64| Complex64::from_polar(1.0, -PI * alpha * x * x);
    let k0 = -((len / 2) as isize);
    let conv_len = fast_len(len + ntaps - 1);

    let mut a = vec![Complex64::new(0.0, 0.0); conv_len];
    for (l, &(_, g)) in taps.iter().enumerate() {
        // carrier phase of tap l, then W^{l²/2}
        let c = g * Complex64::from_polar(1.0, -2.0 * PI * carrier * l as f64 * spacing);
        a[l] = c * chirp(l as f64);
    }
    // b_n = W^{-n²/2} for n = k0-(ntaps-1) .. k0+len-1, stored from index 0.
    let n0 = k0 - (ntaps as isize - 1);
    let mut b = vec![Complex64::new(0.0, 0.0); conv_len];
    for (i, v) in b.iter_mut().enumerate().take(len + ntaps - 1) {
        *v = chirp((n0 + i as isize) as f64).conj();
    }
    fft(&mut a);
    fft(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    ifft(&mut a);

    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for m in 0..len {
        let k = k0 + m as isize;
        // y_m = Σ_l a_l b_{k-l-n0} sits at index (ntaps-1)+m of the linear convolution
        let sum = a[ntaps - 1 + m] * chirp(k as f64);
        let f = k as f64 * sample_rate / len as f64 + carrier;
        let common = Complex64::from_polar(1.0, -2.0 * PI * f * (first + offset));
        let bin = if k < 0 { (k + len as isize) as usize } else { k as usize };
        out[bin] = sum * common;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_len_is_smooth() {
        assert_eq!(fast_len(1), 1);
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(10241), 10368);
        assert_eq!(fast_len(320_000), 320_000);
    }

    #[test]
    fn ramp_matches_direct_phase() {
        for len in [1, 2, 7, 1000, 10_368] {
            let mut spec = vec![Complex64::new(1.0, 0.0); len];
            let (fs, carrier, delay) = (5e6, 2.4437e9, 2.3456e-7);
            apply_delay_ramp(&mut spec, fs, carrier, delay);
            for (k, v) in spec.iter().enumerate() {
                let want = Complex64::from_polar(1.0, -2.0 * PI * (bin_freq(k, len, fs) + carrier) * delay);
                assert!((v - want).norm() < 1e-11, "len {len} bin {k}");
            }
        }
    }

    #[test]
    fn bin_freq_wraps_negative() {
        assert_eq!(bin_freq(0, 8, 8.0), 0.0);
        assert_eq!(bin_freq(3, 8, 8.0), 3.0);
        assert_eq!(bin_freq(4, 8, 8.0), -4.0);
        assert_eq!(bin_freq(7, 8, 8.0), -1.0);
    }

    #[test]
    fn czt_matches_direct_sum() {
        let taps: Vec<(f64, Complex64)> = (0..40)
            .map(|l| {
                let g = Complex64::new((l as f64 * 0.7).sin(), (l as f64 * 1.3).cos()) / (1.0 + l as f64);
                (l as f64 * 6.25e-9, g)
            })
            .collect();
        let (len, fs, carrier, offset) = (1000, 5e6, 2.431e9, 1.7e-7);
        let fast = tap_response(&taps, len, fs, carrier, offset);
        let mut direct = vec![Complex64::new(0.0, 0.0); len];
        for &(d, g) in &taps {
            for (k, v) in direct.iter_mut().enumerate() {
                let f = bin_freq(k, len, fs) + carrier;
                *v += g * Complex64::from_polar(1.0, -2.0 * PI * f * (d + offset));
            }
        }
        for (a, b) in fast.iter().zip(&direct) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
    }
}
