//! Closed-form least-squares Bancroft solver for range differences.
//!
//! With `r_j = r_0 + c·τ_j`, subtracting the reference's squared-range
//! equation from every other one leaves a system linear in `x` for a given
//! reference range `r_0`:
//!
//! ```text
//! 2 (v_j - v_0)ᵀ x = ‖v_j‖² - ‖v_0‖² - d_j² - 2 r_0 d_j,   d_j = c·τ_j
//! ```
//!
//! Its least-squares solution is affine in `r_0`, `x = P r_0 + Q`, and
//! substituting into `r_0² = ‖x - v_0‖²` gives a quadratic with two
//! candidate fixes. The candidate with the smaller TDoA residual wins.
//! Coordinates are shifted so `v_0` is the origin before solving.

use nalgebra::{DMatrix, DVector};

use super::{residual_slices, Algorithm, LocationEstimate, LocatorError, Position, SensorArray};
use crate::tdoa::TdoaMeasurement;
use crate::SPEED_OF_LIGHT;

pub(crate) fn pseudo_inverse_solve(a: &DMatrix<f64>, rhs: &[&DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
    if smax == 0.0 || rank < a.ncols() {
        return None;
    }
    rhs.iter().map(|b| svd.solve(*b, 1e-12 * smax).ok()).collect()
}

pub fn solve_ls_bf(sensors: &SensorArray, tdoa: &TdoaMeasurement) -> Result<LocationEstimate, LocatorError> {
    sensors.check(tdoa)?;
    let origin = sensors.reference().clone();
    let dim = sensors.dim();
    let rows = sensors.len() - 1;

    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut e = DVector::zeros(rows);
    for (j, (v, tau)) in sensors.positions()[1..].iter().zip(&tdoa.values).enumerate() {
        let rel = v - &origin;
        let d = SPEED_OF_LIGHT * tau;
        for k in 0..dim {
            a[(j, k)] = 2.0 * rel[k];
        }
        b[j] = rel.norm_squared() - d * d;
        e[j] = -2.0 * d;
    }
    let sol = pseudo_inverse_solve(&a, &[&b, &e]).ok_or(LocatorError::DegenerateGeometry)?;
    let (q, p) = (&sol[0], &sol[1]);

    // ‖P r + Q‖² = r²  (v_0 at the origin)
    let qa = p.norm_squared() - 1.0;
    let qb = 2.0 * p.dot(q);
    let qc = q.norm_squared();
    if !(qa.is_finite() && qb.is_finite() && qc.is_finite()) {
        return Err(LocatorError::NonFinite);
    }

    let roots: Vec<f64>;
    let mut complex_fallback = false;
    if qa.abs() < 1e-12 {
        if qb == 0.0 {
            return Err(LocatorError::NoRealRoot);
        }
        roots = vec![-qc / qb];
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let t = -0.5 * (qb + qb.signum() * sq);
            let (r1, r2) = if t != 0.0 { (t / qa, qc / t) } else { (0.0, 0.0) };
            roots = vec![r1, r2];
        } else {
            complex_fallback = true;
            roots = vec![-qb / (2.0 * qa)];
        }
    }

    let candidates: Vec<Position> = roots.iter().map(|r| p * *r + q + &origin).collect();
    let valid: Vec<usize> =
        if complex_fallback { Vec::new() } else { (0..roots.len()).filter(|&i| roots[i] >= 0.0).collect() };
    // negative or complex roots only: fall back to all real parts
    let pool: Vec<usize> = if valid.is_empty() { (0..candidates.len()).collect() } else { valid };

    let mut best: Option<(usize, f64)> = None;
    for &i in &pool {
        let res = residual_slices(candidates[i].as_slice(), sensors.positions(), &tdoa.values);
        if best.is_none_or(|(_, r)| res < r) {
            best = Some((i, res));
        }
    }
    let (idx, residual) = best.ok_or(LocatorError::NoRealRoot)?;
    let mut est = LocationEstimate::simple(candidates[idx].clone(), Algorithm::LsBf, residual);
    est.candidates = candidates;
    Ok(est)
}
