//! Signal-level simulation and localization of frequency-hopping emitters
//! from time differences of arrival.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod locator;
pub mod montecarlo;
pub mod signal;
pub mod spectral;
pub mod tdoa;

/// Speed of light, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
