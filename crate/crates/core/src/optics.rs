//! Wavelength and wavevector bookkeeping for the down-conversion triplet.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pump, signal and idler wavelengths of a parametric down-conversion
/// triplet, in meters. "Signal" is canonically the shorter of the two
/// down-converted wavelengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalTriplet {
    pub lambda_pump: f64,
    pub lambda_signal: f64,
    pub lambda_idler: f64,
}

impl OpticalTriplet {
    pub fn new(lambda_pump: f64, lambda_signal: f64, lambda_idler: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda_pump", lambda_pump),
            ("lambda_signal", lambda_signal),
            ("lambda_idler", lambda_idler),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain {
                    name,
                    constraint: "strictly positive",
                    value: v,
                });
            }
        }
        if lambda_signal > lambda_idler {
            return Err(Error::Domain {
                name: "lambda_signal",
                constraint: "<= lambda_idler (canonical ordering)",
                value: lambda_signal,
            });
        }
        Ok(OpticalTriplet {
            lambda_pump,
            lambda_signal,
            lambda_idler,
        })
    }

    /// Pump angular wavevector k_L = 2*pi/lambda_pump.
    pub fn pump_wavevector(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.lambda_pump
    }
}

/// Mean signal/idler wavevector `k` and their difference `delta`, in rad/m.
/// The physical signal and idler wavevectors are `k + delta/2` and
/// `k - delta/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveVectorPair {
    pub k: f64,
    pub delta: f64,
}

impl WaveVectorPair {
    pub fn new(k: f64, delta: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Domain {
                name: "k",
                constraint: "strictly positive",
                value: k,
            });
        }
        if delta < 0.0 {
            return Err(Error::Domain {
                name: "delta",
                constraint: "non-negative",
                value: delta,
            });
        }
        if k <= delta / 2.0 {
            return Err(Error::Domain {
                name: "k",
                constraint: "> delta/2",
                value: k,
            });
        }
        Ok(WaveVectorPair { k, delta })
    }

    /// Pair with `k` locked to half the pump wavevector (the
    /// energy-conservation value the geometry solver assumes).
    pub fn pump_locked(lambda_pump: f64, delta: f64) -> Result<Self> {
        WaveVectorPair::new(std::f64::consts::PI / lambda_pump, delta)
    }

    /// Signal wavevector k + delta/2.
    pub fn signal(&self) -> f64 {
        self.k + self.delta / 2.0
    }

    /// Idler wavevector k - delta/2.
    pub fn idler(&self) -> f64 {
        self.k - self.delta / 2.0
    }
}

/// Mean and difference wavevectors from the triplet wavelengths.
///
/// `k` is derived from the signal/idler mean rather than forced to the
/// pump value; use [`conservation_residual`] to see the mismatch.
pub fn wavevectors_from_triplet(t: &OpticalTriplet) -> Result<WaveVectorPair> {
    let ks = 2.0 * std::f64::consts::PI / t.lambda_signal;
    let ki = 2.0 * std::f64::consts::PI / t.lambda_idler;
    WaveVectorPair::new((ks + ki) / 2.0, ks - ki)
}

/// Relative energy-conservation violation of the triplet:
/// `(1/lambda_pump - 1/lambda_signal - 1/lambda_idler) * lambda_pump`.
/// Zero means exact conservation. Invariant under rescaling all three
/// wavelengths.
pub fn conservation_residual(t: &OpticalTriplet) -> f64 {
    1.0 - t.lambda_pump / t.lambda_signal - t.lambda_pump / t.lambda_idler
}
