//! Gauss-Newton refinement of the Bancroft fix on the range-difference
//! equations `h_j(x) = ‖v_j - x‖ - ‖v_0 - x‖ = c·τ̂_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bancroft::pseudo_inverse_solve;
use super::{residual_slices, solve_ls_bf, Algorithm, LocationEstimate, LocatorError, Position, SensorArray};
use crate::tdoa::TdoaMeasurement;
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// `∂h_j/∂x = (x - v_j)ᵀ/‖x - v_j‖ - (x - v_0)ᵀ/‖x - v_0‖`, descent step
    /// `Δx = -J⁺(h - u)` with backtracking.
    #[default]
    Analytic,
    /// Constant baseline directions `(v_j - v_0)ᵀ/‖v_j - v_0‖` and the
    /// literal update `Δx = J⁺(h - u)`, without line search.
    ConstantBaseline,
}

/// Axis-aligned box, one `(lower, upper)` pair per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Vec<(f64, f64)>,
}

impl Region {
    pub fn clamp(&self, x: &Position) -> Position {
        Position::from_iterator(x.len(), x.iter().zip(&self.bounds).map(|(v, (lo, hi))| v.clamp(*lo, *hi)))
    }

    fn validate(&self, dim: usize) -> Result<(), LocatorError> {
        if self.bounds.len() != dim || self.bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(LocatorError::InvalidArray("region does not match the sensor dimension".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnOptions {
    /// Stop once the proposed step is shorter than this, meters.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub jacobian: JacobianMode,
    /// Confines the seed and every iterate to a box. Inconsistent TDoAs
    /// otherwise let the residual keep falling along an asymptote.
    pub region: Option<Region>,
}

impl Default for GnOptions {
    fn default() -> Self {
        Self { tolerance: 1e-3, max_iterations: 50, jacobian: JacobianMode::Analytic, region: None }
    }
}

/// `h(x)` from the range-difference equations.
pub fn range_differences(x: &Position, sensors: &SensorArray) -> DVector<f64> {
    let v0 = sensors.reference();
    let r0 = (v0 - x).norm();
    DVector::from_iterator(sensors.len() - 1, sensors.positions()[1..].iter().map(|v| (v - x).norm() - r0))
}

/// Analytic Jacobian of [`range_differences`]; `None` when `x` sits on a sensor.
pub fn jacobian(x: &Position, sensors: &SensorArray) -> Option<DMatrix<f64>> {
    let dim = sensors.dim();
    let v0 = sensors.reference();
    let d0 = x - v0;
    let n0 = d0.norm();
    if n0 == 0.0 {
        return None;
    }
    let mut j = DMatrix::zeros(sensors.len() - 1, dim);
    for (row, v) in sensors.positions()[1..].iter().enumerate() {
        let dj = x - v;
        let nj = dj.norm();
        if nj == 0.0 {
            return None;
        }
        for k in 0..dim {
            j[(row, k)] = dj[k] / nj - d0[k] / n0;
        }
    }
    Some(j)
}

fn baseline_jacobian(sensors: &SensorArray) -> DMatrix<f64> {
    let v0 = sensors.reference();
    let mut j = DMatrix::zeros(sensors.len() - 1, sensors.dim());
    for (row, v) in sensors.positions()[1..].iter().enumerate() {
        let b = v - v0;
        let n = b.norm();
        for k in 0..sensors.dim() {
            j[(row, k)] = b[k] / n;
        }
    }
    j
}

/// Bancroft seed `λ1`, Gauss-Newton iterate `λ2`, and the one with the
/// smaller TDoA residual (`λ2` on a tie).
pub fn solve_ls_bf_gn(
    sensors: &SensorArray,
    tdoa: &TdoaMeasurement,
    opts: &GnOptions,
) -> Result<LocationEstimate, LocatorError> {
    let mut seed = solve_ls_bf(sensors, tdoa)?;
    let residual = |x: &Position| residual_slices(x.as_slice(), sensors.positions(), &tdoa.values);
    let project = |x: Position| match &opts.region {
        Some(r) => r.clamp(&x),
        None => x,
    };
    if let Some(r) = &opts.region {
        r.validate(sensors.dim())?;
        seed.position = r.clamp(&seed.position);
        seed.residual = residual(&seed.position);
    }
    let lambda1 = seed.position.clone();
    let a = seed.residual;
    let u = DVector::from_iterator(tdoa.values.len(), tdoa.values.iter().map(|t| SPEED_OF_LIGHT * t));

    let mut x = lambda1.clone();
    let mut current = a;
    let mut history = vec![a];
    let mut iterations = 0;
    let mut rank_deficient = false;
    let constant = baseline_jacobian(sensors);

    while iterations < opts.max_iterations {
        let f = range_differences(&x, sensors) - &u;
        let step = match opts.jacobian {
            JacobianMode::Analytic => {
                let Some(jac) = jacobian(&x, sensors) else {
                    rank_deficient = true;
                    break;
                };
                match pseudo_inverse_solve(&jac, &[&f]) {
                    Some(s) => -&s[0],
                    None => {
                        rank_deficient = true;
                        break;
                    }
                }
            }
            JacobianMode::ConstantBaseline => match pseudo_inverse_solve(&constant, &[&f]) {
                Some(s) => s[0].clone(),
                None => {
                    rank_deficient = true;
                    break;
                }
            },
        };
        if !step.iter().all(|v| v.is_finite()) || step.norm() < opts.tolerance {
            break;
        }
        let next = match opts.jacobian {
            JacobianMode::Analytic => {
                // halve until the residual does not grow
                let mut scale = 1.0;
                let mut accepted = None;
                for _ in 0..40 {
                    let cand = project(&x + &step * scale);
                    let r = residual(&cand);
                    if r <= current {
                        accepted = Some((cand, r));
                        break;
                    }
                    scale *= 0.5;
                }
                accepted
            }
            JacobianMode::ConstantBaseline => {
                let cand = project(&x + &step);
                let r = residual(&cand);
                Some((cand, r))
            }
        };
        let Some((cand, r)) = next else { break };
        let moved = (&cand - &x).norm();
        x = cand;
        current = r;
        history.push(r);
        iterations += 1;
        // a step cut short by the region boundary ends the search here
        if moved < opts.tolerance {
            break;
        }
    }

    if rank_deficient {
        let mut est = seed;
        est.algorithm = Algorithm::LsBfGn;
        est.rank_deficient = true;
        est.candidates = vec![lambda1.clone(), lambda1];
        est.residual_history = history;
        est.iterations = iterations;
        return Ok(est);
    }

    let lambda2 = x;
    let a_tilde = current;
    let (position, res) = if a < a_tilde { (lambda1.clone(), a) } else { (lambda2.clone(), a_tilde) };
    Ok(LocationEstimate {
        position,
        algorithm: Algorithm::LsBfGn,
        residual: res,
        iterations,
        candidates: vec![lambda1, lambda2],
        rank_deficient: false,
        residual_history: history,
    })
}
