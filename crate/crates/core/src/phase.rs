//! Phase-noise algebra for the pair-counting channels: number-difference
//! variance bounds, phase-variance propagation and the entangled
//! two-channel estimate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pair-counting model for one accumulation window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairCountModel {
    /// Mean photon-pair number per mode per window.
    pub mean_pairs: f64,
    /// Detector quantum efficiency of mode 1, in (0, 1].
    pub eta1: f64,
    /// Detector quantum efficiency of mode 2, in (0, 1].
    pub eta2: f64,
    /// Phase-shifter angle between the two detection quadratures, rad.
    pub shifter_angle: f64,
    /// Covariance of the two number-operator deviations; capped at
    /// mean_pairs^2 (its maximum).
    pub covariance: f64,
}

impl PairCountModel {
    pub fn new(
        mean_pairs: f64,
        eta1: f64,
        eta2: f64,
        shifter_angle: f64,
        covariance: f64,
    ) -> Result<Self> {
        if !(mean_pairs > 0.0) {
            return Err(Error::Domain {
                name: "mean_pairs",
                constraint: "strictly positive",
                value: mean_pairs,
            });
        }
        for (name, v) in [("eta1", eta1), ("eta2", eta2)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain {
                    name,
                    constraint: "in (0, 1]",
                    value: v,
                });
            }
        }
        if !(covariance >= 0.0 && covariance <= mean_pairs * mean_pairs) {
            return Err(Error::Domain {
                name: "covariance",
                constraint: "in [0, mean_pairs^2]",
                value: covariance,
            });
        }
        Ok(PairCountModel {
            mean_pairs,
            eta1,
            eta2,
            shifter_angle,
            covariance,
        })
    }

    /// Covariance clamped to its physical maximum.
    pub fn covariance_capped(&self) -> f64 {
        self.covariance.min(self.mean_pairs * self.mean_pairs)
    }
}

/// Lower-bound model for the variance of the detected number difference:
///
/// eta1*N(eta1*N+1) cos^2(phi) + eta2*N(eta2*N+1) sin^2(phi)
///     - 2 eta1 eta2 Cov sin(phi) cos(phi)
///
/// evaluated in double-angle form so the unit-efficiency compensation at
/// phi = 45 deg is exact in floating point.
pub fn number_diff_variance(m: &PairCountModel) -> f64 {
    let n = m.mean_pairs;
    let a = (m.eta1 * n) * (m.eta1 * n + 1.0);
    let b = (m.eta2 * n) * (m.eta2 * n + 1.0);
    let cov = m.covariance_capped();
    let two_phi = 2.0 * m.shifter_angle;
    0.5 * (a + b) + 0.5 * (a - b) * two_phi.cos() - m.eta1 * m.eta2 * cov * two_phi.sin()
}

/// The shifter angle that zeroes the quadratic-in-N coefficient of
/// [`number_diff_variance`] at maximal covariance: the root of
/// (eta1 cos(phi) - eta2 sin(phi))^2, i.e. atan(eta1/eta2).
pub fn optimal_shifter_angle(eta1: f64, eta2: f64) -> f64 {
    if eta1 == eta2 {
        return std::f64::consts::FRAC_PI_4;
    }
    (eta1 / eta2).atan()
}

/// Coefficient of N^2 in the variance bound at maximal covariance,
/// as a function of the shifter angle. Zero at the optimal angle.
pub fn quadratic_coefficient(eta1: f64, eta2: f64, phi: f64) -> f64 {
    let c = eta1 * phi.cos() - eta2 * phi.sin();
    c * c
}

/// RMS phase noise pi * sqrt(var) / (2 N^(3/2)) from a number-difference
/// variance.
pub fn phase_rms_from_number_variance(var_diff: f64, mean_pairs: f64) -> f64 {
    std::f64::consts::PI * var_diff.sqrt() / (2.0 * mean_pairs.powf(1.5))
}

/// Entangled two-channel phase estimate 1/sqrt(n1*n2).
pub fn entangled_phase_variance(n1: f64, n2: f64) -> f64 {
    1.0 / (n1 * n2).sqrt()
}

/// Compensated phase variance as printed in the source derivation:
/// pi / (4 N).
pub fn a4_as_printed(mean_pairs: f64) -> f64 {
    std::f64::consts::PI / (4.0 * mean_pairs)
}

/// Compensated phase variance obtained by squaring the RMS propagation
/// with var = N: pi^2 / (4 N^2). This does not match [`a4_as_printed`];
/// both values are exposed.
pub fn a4_from_chain(mean_pairs: f64) -> f64 {
    let rms = phase_rms_from_number_variance(mean_pairs, mean_pairs);
    rms * rms
}
