//! Strict JSON run configuration: unknown keys are rejected with their key
//! path, and every present section is validated against its module's
//! invariants before any computation runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Constellation, NullCondition, NullConditionSet, SolverOptions};
use crate::link::LinkBudgetConfig;
use crate::montecarlo::{build_default_graph, DetectionGraph};
use crate::optics::{OpticalTriplet, WaveVectorPair};
use crate::phase::PairCountModel;
use crate::sensitivity::SweepSpec;
use crate::{Error, Result};

fn default_true() -> bool {
    true
}

/// Geometry section: wavevector inputs plus either a synthetic instance
/// (conditions generated from known arm lengths) or an explicit one.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    /// Pump wavelength, m; the solver locks k = pi / pump_wavelength.
    pub pump_wavelength: f64,
    /// Signal/idler wavevector difference, rad/m.
    pub delta: f64,
    #[serde(default = "default_true")]
    pub fit_delta: bool,
    /// Per-arm coarse ranging uncertainty for integer resolution, m.
    #[serde(default)]
    pub coarse_uncertainty: f64,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
    pub synthetic: Option<SyntheticGeometry>,
    pub explicit: Option<ExplicitGeometry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGeometry {
    pub arm_lengths: [f64; 3],
    #[serde(default)]
    pub arm_trim: [f64; 3],
    /// Include both sign pairings of each cross condition (the full
    /// 10-condition set) rather than one per pair.
    #[serde(default = "default_true")]
    pub include_both_patterns: bool,
    /// Trim offsets of the solver's initial guess relative to the coarse
    /// arm lengths.
    #[serde(default)]
    pub guess_trim: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitGeometry {
    pub initial_guess: Constellation,
    pub conditions: Vec<NullCondition>,
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_wavelength > 0.0) {
            return Err(Error::Domain {
                name: "pump_wavelength",
                constraint: "strictly positive",
                value: self.pump_wavelength,
            });
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Domain {
                name: "delta",
                constraint: "non-negative",
                value: self.delta,
            });
        }
        if self.coarse_uncertainty < 0.0 {
            return Err(Error::Domain {
                name: "coarse_uncertainty",
                constraint: "non-negative",
                value: self.coarse_uncertainty,
            });
        }
        match (&self.synthetic, &self.explicit) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Config {
                    path: "geometry".into(),
                    message: "exactly one of `synthetic` or `explicit` is required".into(),
                })
            }
        }
        self.build().map(|_| ())
    }

    pub fn wavevectors(&self) -> Result<WaveVectorPair> {
        WaveVectorPair::pump_locked(self.pump_wavelength, self.delta)
    }

    /// Initial-guess constellation and condition set for the solver.
    pub fn build(&self) -> Result<(Constellation, NullConditionSet)> {
        let wv = self.wavevectors()?;
        if let Some(s) = &self.synthetic {
            let (truth, ncs) = crate::geometry::synthesize(
                s.arm_lengths,
                s.arm_trim,
                &wv,
                self.pump_wavelength,
                s.include_both_patterns,
            )?;
            let mut guess = truth;
            guess.arm_trim = s.guess_trim;
            guess.validate()?;
            Ok((guess, ncs))
        } else if let Some(e) = &self.explicit {
            e.initial_guess.validate()?;
            let ncs = NullConditionSet {
                pump_wavelength: self.pump_wavelength,
                conditions: e.conditions.clone(),
            };
            ncs.validate()?;
            Ok((e.initial_guess.clone(), ncs))
        } else {
            Err(Error::Config {
                path: "geometry".into(),
                message: "exactly one of `synthetic` or `explicit` is required".into(),
            })
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut opts = self.solver.unwrap_or_default();
        opts.fit_delta = self.fit_delta;
        opts
    }
}

/// Either the literal string "default" or a full graph description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetectionGraphConfig {
    Named(String),
    Explicit(Box<DetectionGraph>),
}

impl DetectionGraphConfig {
    pub fn resolve(&self) -> Result<DetectionGraph> {
        let g = match self {
            DetectionGraphConfig::Named(name) if name == "default" => build_default_graph(),
            DetectionGraphConfig::Named(name) => {
                return Err(Error::Config {
                    path: "detection_graph".into(),
                    message: format!("unknown graph name `{name}` (only \"default\")"),
                })
            }
            DetectionGraphConfig::Explicit(g) => (**g).clone(),
        };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub windows: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Detected photon numbers in the two entangled channels.
    pub n1: f64,
    pub n2: f64,
    pub conversion_length: f64,
    pub arm_length: f64,
    pub bandwidth: f64,
    pub accumulation_time: f64,
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n1", self.n1),
            ("n2", self.n2),
            ("arm_length", self.arm_length),
            ("bandwidth", self.bandwidth),
            ("accumulation_time", self.accumulation_time),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain {
                    name,
                    constraint: "strictly positive",
                    value: v,
                });
            }
        }
        if !(self.conversion_length >= 0.0) {
            return Err(Error::Domain {
                name: "conversion_length",
                constraint: "non-negative",
                value: self.conversion_length,
            });
        }
        Ok(())
    }
}

/// Top-level run configuration. Every section is optional; a subcommand
/// errors (usage, exit 2) when a section it needs is absent.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub triplet: Option<OpticalTriplet>,
    pub link_budget: Option<LinkBudgetConfig>,
    pub geometry: Option<GeometryConfig>,
    pub pair_model: Option<PairCountModel>,
    pub detection_graph: Option<DetectionGraphConfig>,
    pub simulation: Option<SimulationConfig>,
    pub sensitivity: Option<SensitivityConfig>,
    pub sweep: Option<SweepSpec>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.triplet {
            OpticalTriplet::new(t.lambda_pump, t.lambda_signal, t.lambda_idler)?;
        }
        if let Some(lb) = &self.link_budget {
            lb.validate()?;
        }
        if let Some(g) = &self.geometry {
            g.validate()?;
        }
        if let Some(pm) = &self.pair_model {
            PairCountModel::new(
                pm.mean_pairs,
                pm.eta1,
                pm.eta2,
                pm.shifter_angle,
                pm.covariance,
            )?;
        }
        if let Some(dg) = &self.detection_graph {
            dg.resolve()?;
        }
        if let Some(sim) = &self.simulation {
            if sim.windows == 0 {
                return Err(Error::Config {
                    path: "simulation.windows".into(),
                    message: "at least one accumulation window is required".into(),
                });
            }
        }
        if let Some(s) = &self.sensitivity {
            s.validate()?;
        }
        if let Some(sw) = &self.sweep {
            sw.validate()?;
        }
        Ok(())
    }

    pub fn require<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T> {
        let _ = self;
        section.as_ref().ok_or_else(|| Error::Config {
            path: name.into(),
            message: "required config section is missing".into(),
        })
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1);
        }
        offset += l.len() + 1;
    }
    offset
}

/// Load and fully validate a run configuration from a JSON file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let inner = e.inner();
        let (line, column) = (inner.line(), inner.column());
        Error::Config {
            path: e.path().to_string(),
            message: format!(
                "{inner} (byte offset {})",
                byte_offset(&text, line, column)
            ),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load_str(s: &str) -> Result<RunConfig> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(s.as_bytes()).unwrap();
        load_config(f.path())
    }

    #[test]
    fn empty_file_reports_offset() {
        match load_str("") {
            Err(Error::Config { message, .. }) => {
                assert!(message.contains("byte offset 0"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_path() {
        let s = r#"{"link_budget": {"laser_powr": 200.0}}"#;
        match load_str(s) {
            Err(Error::Config { path, .. }) => {
                assert!(path.contains("link_budget"), "{path}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        assert!(load_str(r#"{"extra_section": 1}"#).is_err());
    }

    #[test]
    fn out_of_range_efficiency_names_constraint() {
        let s = r#"{
            "link_budget": {
                "laser_power": 200.0,
                "tx_aperture": 10.0,
                "rx_aperture_sat": 1.0,
                "uplink_divergence": 1e-5,
                "downlink_divergence": 1e-4,
                "distance": 4e7,
                "etalon_q": 1e6,
                "spdc_efficiency": 1.5,
                "photon_rate_pump": null,
                "triplet": {
                    "lambda_pump": 5.3e-7,
                    "lambda_signal": 8.8e-7,
                    "lambda_idler": 1.4e-6
                }
            }
        }"#;
        match load_str(s) {
            Err(Error::Domain {
                name, constraint, ..
            }) => {
                assert_eq!(name, "spdc_efficiency");
                assert!(constraint.contains("(0, 1)"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_config_is_valid_but_sections_missing() {
        let cfg = load_str("{}").unwrap();
        assert!(matches!(
            cfg.require(&cfg.simulation, "simulation"),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn zero_windows_rejected_at_load() {
        match load_str(r#"{"simulation": {"windows": 0}}"#) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "simulation.windows"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_graph_by_name() {
        let cfg = load_str(r#"{"detection_graph": "default"}"#).unwrap();
        let g = cfg.detection_graph.unwrap().resolve().unwrap();
        assert_eq!(g.channels.len(), 13);
        assert!(load_str(r#"{"detection_graph": "other"}"#).is_err());
    }

    #[test]
    fn synthetic_geometry_builds() {
        let s = r#"{
            "geometry": {
                "pump_wavelength": 5.3e-7,
                "delta": 5.09e5,
                "synthetic": {"arm_lengths": [4e7, 4.0000003e7, 3.9999998e7]}
            }
        }"#;
        let cfg = load_str(s).unwrap();
        let g = cfg.geometry.unwrap();
        let (guess, ncs) = g.build().unwrap();
        assert!(ncs.is_complete());
        assert_eq!(guess.arm_trim, [0.0; 3]);
        assert!(g.solver_options().fit_delta);
    }

    #[test]
    fn geometry_requires_one_instance_form() {
        let s = r#"{"geometry": {"pump_wavelength": 5.3e-7, "delta": 5.09e5}}"#;
        assert!(matches!(load_str(s), Err(Error::Config { path, .. }) if path == "geometry"));
    }
}
