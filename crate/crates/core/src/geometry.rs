//! Forward model of the interferometer null conditions and an inverse
//! solver recovering the constellation geometry from measured phases.
//!
//! Arm lengths are carried as a coarse part plus a fine trim. At
//! geostationary range the f64 grid spacing is ~7.5 nm, far coarser than
//! the sub-picometer displacements of interest, so every consumer of arm
//! lengths works on the unevaluated `coarse + trim` sum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dd::{Dd, FRAC_PI_2};
use crate::optics::WaveVectorPair;
use crate::{Error, Result};

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Satellite pair ordering for the cross conditions: (1,2), (2,3), (3,1).
pub const PAIRS: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

/// Sanity band for arm lengths, m.
pub const ARM_BAND: (f64, f64) = (1e6, 1e9);

/// Reference length making the pump residual dimensionally uniform with
/// the phase residuals, m.
pub const PUMP_REFERENCE_LENGTH: f64 = 1.0;

/// Arm lengths, instrument phases and integer offsets of the constellation.
///
/// The stored phases/integers are the canonical values for the
/// signal-idler cross pairings and the self conditions; a
/// [`NullConditionSet`] carries per-condition copies (the reversed
/// pairings need their own).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constellation {
    /// Coarse arm lengths l1, l2, l3, m.
    pub arm_lengths: [f64; 3],
    /// Sub-ulp arm-length trims, m. Effective length is
    /// `arm_lengths[i] + arm_trim[i]`.
    #[serde(default)]
    pub arm_trim: [f64; 3],
    /// Instrument phases for cross pairs (1,2), (2,3), (3,1), wrapped to
    /// [0, 2*pi).
    pub phases_cross: [f64; 3],
    /// Instrument phases for the self conditions, wrapped to [0, 2*pi).
    pub phases_self: [f64; 3],
    pub integers_cross: [i64; 3],
    pub integers_self: [i64; 3],
}

impl Constellation {
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.arm_lengths.iter().enumerate() {
            let eff = l + self.arm_trim[i];
            if !(eff >= ARM_BAND.0 && eff <= ARM_BAND.1) {
                return Err(Error::Domain {
                    name: "arm_lengths",
                    constraint: "within [1e6, 1e9] m",
                    value: eff,
                });
            }
        }
        for p in self.phases_cross.iter().chain(self.phases_self.iter()) {
            if !(*p >= 0.0 && *p < TAU) {
                return Err(Error::Domain {
                    name: "instrument phase",
                    constraint: "wrapped to [0, 2*pi)",
                    value: *p,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn arm(&self, i: usize) -> Dd {
        Dd::new(self.arm_lengths[i], self.arm_trim[i])
    }

    /// Effective arm length (rounded to f64).
    pub fn arm_length(&self, i: usize) -> f64 {
        self.arm_lengths[i] + self.arm_trim[i]
    }
}

/// Which down-converted beam travels which arm in a cross condition.
/// `SignalIdler` means the signal beam (k + delta/2) travels arm i of the
/// pair and the idler beam (k - delta/2) travels arm j.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPattern {
    SignalIdler,
    IdlerSignal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionKind {
    /// Two-satellite beat: pair indexes [`PAIRS`].
    Cross { pair: usize, pattern: SignPattern },
    /// Single-satellite signal/idler beat.
    SelfBeat { arm: usize },
    /// Energy conservation of the down-conversion.
    Pump,
}

/// One scalar null condition with its calibration constants and the
/// measured phase deviation from null.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullCondition {
    pub kind: ConditionKind,
    /// Instrument phase (delta or delta-tilde), rad, wrapped to [0, 2*pi).
    pub instrument_phase: f64,
    /// Quarter-fringe integer offset m.
    pub integer_offset: i64,
    /// Measured deviation from null, rad.
    pub measured_phase: f64,
}

/// The scalar conditions available to the solver. A complete set has 10
/// entries: both sign pairings of the three cross conditions, the three
/// self conditions and the pump condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullConditionSet {
    /// Pump wavelength, m; fixes k = pi/lambda_pump in the solver.
    pub pump_wavelength: f64,
    pub conditions: Vec<NullCondition>,
}

impl NullConditionSet {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_wavelength > 0.0) {
            return Err(Error::Domain {
                name: "pump_wavelength",
                constraint: "strictly positive",
                value: self.pump_wavelength,
            });
        }
        if self.conditions.is_empty() {
            return Err(Error::Domain {
                name: "conditions",
                constraint: "non-empty",
                value: 0.0,
            });
        }
        let mut seen = Vec::new();
        for c in &self.conditions {
            match c.kind {
                ConditionKind::Cross { pair, .. } if pair >= 3 => {
                    return Err(Error::Domain {
                        name: "pair",
                        constraint: "in 0..3",
                        value: pair as f64,
                    })
                }
                ConditionKind::SelfBeat { arm } if arm >= 3 => {
                    return Err(Error::Domain {
                        name: "arm",
                        constraint: "in 0..3",
                        value: arm as f64,
                    })
                }
                _ => {}
            }
            if seen.contains(&c.kind) {
                return Err(Error::Domain {
                    name: "conditions",
                    constraint: "free of duplicate kinds",
                    value: seen.len() as f64,
                });
            }
            seen.push(c.kind);
        }
        Ok(())
    }

    /// True for the full 10-condition set.
    pub fn is_complete(&self) -> bool {
        self.conditions.len() == 10 && self.validate().is_ok()
    }

    fn self_condition(&self, arm: usize) -> Option<&NullCondition> {
        self.conditions
            .iter()
            .find(|c| c.kind == ConditionKind::SelfBeat { arm })
    }

    /// Retain only the conditions selected by `keep`.
    pub fn filtered(&self, keep: impl Fn(&NullCondition) -> bool) -> NullConditionSet {
        NullConditionSet {
            pump_wavelength: self.pump_wavelength,
            conditions: self.conditions.iter().copied().filter(|c| keep(c)).collect(),
        }
    }
}

fn cross_phase(ks: Dd, ki: Dd, li: Dd, lj: Dd, pattern: SignPattern) -> Dd {
    match pattern {
        SignPattern::SignalIdler => ks.mul(li).sub(ki.mul(lj)),
        SignPattern::IdlerSignal => ki.mul(li).sub(ks.mul(lj)),
    }
}

fn condition_phase(kind: ConditionKind, wv: &WaveVectorPair, arms: &[Dd; 3]) -> Option<Dd> {
    let ks = Dd::new(wv.k, 0.5 * wv.delta);
    let ki = Dd::new(wv.k, -0.5 * wv.delta);
    match kind {
        ConditionKind::Cross { pair, pattern } => {
            let (i, j) = PAIRS[pair];
            Some(cross_phase(ks, ki, arms[i], arms[j], pattern))
        }
        ConditionKind::SelfBeat { arm } => Some(Dd::from_f64(wv.delta).mul(arms[arm])),
        ConditionKind::Pump => None,
    }
}

fn eval_residuals(
    ncs: &NullConditionSet,
    wv: &WaveVectorPair,
    arms: &[Dd; 3],
) -> Vec<f64> {
    ncs.conditions
        .iter()
        .map(|c| match condition_phase(c.kind, wv, arms) {
            Some(phi) => phi
                .sub(Dd::from_f64(c.instrument_phase))
                .sub(FRAC_PI_2.mul_f64(c.integer_offset as f64))
                .sub(Dd::from_f64(c.measured_phase))
                .to_f64(),
            None => {
                // pump: k_L - 2k, scaled to rad by a reference length
                (TAU / ncs.pump_wavelength - 2.0 * wv.k) * PUMP_REFERENCE_LENGTH
            }
        })
        .collect()
}

/// Phase residual of every condition in `ncs` for the given constellation
/// and wavevectors. All residuals vanish for a consistent configuration.
pub fn forward_residuals(
    c: &Constellation,
    wv: &WaveVectorPair,
    ncs: &NullConditionSet,
) -> Result<Vec<f64>> {
    c.validate()?;
    ncs.validate()?;
    let arms = [c.arm(0), c.arm(1), c.arm(2)];
    Ok(eval_residuals(ncs, wv, &arms))
}

/// Generate a consistent constellation and complete null-condition set
/// from arm lengths and wavevectors: instrument phases and integer offsets
/// are derived so every residual is zero at null (measured phases 0).
pub fn synthesize(
    arm_lengths: [f64; 3],
    arm_trim: [f64; 3],
    wv: &WaveVectorPair,
    pump_wavelength: f64,
    include_both_patterns: bool,
) -> Result<(Constellation, NullConditionSet)> {
    let arms = [
        Dd::new(arm_lengths[0], arm_trim[0]),
        Dd::new(arm_lengths[1], arm_trim[1]),
        Dd::new(arm_lengths[2], arm_trim[2]),
    ];
    let mut conditions = Vec::new();
    let mut phases_cross = [0.0; 3];
    let mut integers_cross = [0i64; 3];
    let mut phases_self = [0.0; 3];
    let mut integers_self = [0i64; 3];

    let derive = |kind: ConditionKind| -> (f64, i64) {
        let phi = condition_phase(kind, wv, &arms).expect("non-pump kind");
        let m = phi.div(FRAC_PI_2).floor();
        let delta_inst = phi.sub(FRAC_PI_2.mul_f64(m)).to_f64();
        // numerical safety at the wrap boundary
        let delta_inst = delta_inst.clamp(0.0, std::f64::consts::FRAC_PI_2);
        (delta_inst, m as i64)
    };

    for pair in 0..3 {
        let kind = ConditionKind::Cross {
            pair,
            pattern: SignPattern::SignalIdler,
        };
        let (p, m) = derive(kind);
        phases_cross[pair] = p;
        integers_cross[pair] = m;
        conditions.push(NullCondition {
            kind,
            instrument_phase: p,
            integer_offset: m,
            measured_phase: 0.0,
        });
    }
    if include_both_patterns {
        for pair in 0..3 {
            let kind = ConditionKind::Cross {
                pair,
                pattern: SignPattern::IdlerSignal,
            };
            let (p, m) = derive(kind);
            conditions.push(NullCondition {
                kind,
                instrument_phase: p,
                integer_offset: m,
                measured_phase: 0.0,
            });
        }
    }
    for arm in 0..3 {
        let kind = ConditionKind::SelfBeat { arm };
        let (p, m) = derive(kind);
        phases_self[arm] = p;
        integers_self[arm] = m;
        conditions.push(NullCondition {
            kind,
            instrument_phase: p,
            integer_offset: m,
            measured_phase: 0.0,
        });
    }
    conditions.push(NullCondition {
        kind: ConditionKind::Pump,
        instrument_phase: 0.0,
        integer_offset: 0,
        measured_phase: 0.0,
    });

    let c = Constellation {
        arm_lengths,
        arm_trim,
        phases_cross,
        phases_self,
        integers_cross,
        integers_self,
    };
    c.validate()?;
    let ncs = NullConditionSet {
        pump_wavelength,
        conditions,
    };
    ncs.validate()?;
    Ok((c, ncs))
}

/// Copy of `c` with a gravitational-wave strain injected on the arm trims:
/// l_i(t) = l_i * (1 + h * w_i * sin(2*pi*f*t)).
pub fn inject_gw(
    c: &Constellation,
    strain_amplitude: f64,
    frequency: f64,
    antenna_pattern: [f64; 3],
    t: f64,
) -> Result<Constellation> {
    if !(strain_amplitude.abs() < 1e-6) {
        return Err(Error::Domain {
            name: "strain_amplitude",
            constraint: "|h| < 1e-6",
            value: strain_amplitude,
        });
    }
    for w in antenna_pattern {
        if !(-1.0..=1.0).contains(&w) {
            return Err(Error::Domain {
                name: "antenna_pattern",
                constraint: "in [-1, 1]",
                value: w,
            });
        }
    }
    let s = (TAU * frequency * t).sin();
    let mut out = c.clone();
    for i in 0..3 {
        let l = c.arm_lengths[i] + c.arm_trim[i];
        out.arm_trim[i] += l * strain_amplitude * antenna_pattern[i] * s;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative step-size termination threshold (scaled coordinates).
    pub step_tolerance: f64,
    /// Residual-norm termination threshold, rad.
    pub residual_tolerance: f64,
    /// Fit delta alongside the arm lengths. With delta free the common
    /// arm-length mode is only weakly constrained; disable when the
    /// wavevectors are known from calibration.
    pub fit_delta: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            step_tolerance: 1e-14,
            residual_tolerance: 1e-12,
            fit_delta: true,
        }
    }
}

/// Recovered geometry. Arm lengths are reported as the initial-guess
/// reference plus a fine trim; `arm_lengths` is the rounded sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeometrySolution {
    pub k: f64,
    pub delta: f64,
    pub arm_reference: [f64; 3],
    pub arm_trim: [f64; 3],
    pub arm_lengths: [f64; 3],
    pub residual_norm: f64,
    pub iterations: usize,
    /// Linearized covariance over (k, delta, l1, l2, l3) for unit phase
    /// variance; rows/columns of parameters held fixed are zero.
    pub covariance: [[f64; 5]; 5],
}

struct SolverState<'a> {
    ncs: &'a NullConditionSet,
    k: f64,
    reference: [f64; 3],
}

impl SolverState<'_> {
    /// x = [delta, trim1, trim2, trim3] (delta present only when fitted;
    /// the full 4-vector is used internally regardless).
    fn residuals(&self, delta: f64, trims: &[f64; 3]) -> DVector<f64> {
        let wv = WaveVectorPair {
            k: self.k,
            delta,
        };
        let arms = [
            Dd::new(self.reference[0], trims[0]),
            Dd::new(self.reference[1], trims[1]),
            Dd::new(self.reference[2], trims[2]),
        ];
        DVector::from_vec(eval_residuals(self.ncs, &wv, &arms))
    }

    /// Central-difference Jacobian over (delta, l1, l2, l3).
    fn jacobian(&self, delta: f64, trims: &[f64; 3]) -> DMatrix<f64> {
        let m = self.ncs.conditions.len();
        let mut j = DMatrix::zeros(m, 4);
        let h_delta = 1e-9 * delta.abs().max(1.0);
        let rp = self.residuals(delta + h_delta, trims);
        let rm = self.residuals(delta - h_delta, trims);
        for r in 0..m {
            j[(r, 0)] = (rp[r] - rm[r]) / (2.0 * h_delta);
        }
        let h_len = 1e-3;
        for c in 0..3 {
            let mut tp = *trims;
            tp[c] += h_len;
            let mut tm = *trims;
            tm[c] -= h_len;
            let rp = self.residuals(delta, &tp);
            let rm = self.residuals(delta, &tm);
            for r in 0..m {
                j[(r, c + 1)] = (rp[r] - rm[r]) / (2.0 * h_len);
            }
        }
        j
    }
}

/// Central-difference Jacobian of the condition residuals over
/// (delta, l1, l2, l3) at the given constellation.
pub fn numeric_jacobian(
    c: &Constellation,
    wv: &WaveVectorPair,
    ncs: &NullConditionSet,
) -> Result<DMatrix<f64>> {
    c.validate()?;
    ncs.validate()?;
    let state = SolverState {
        ncs,
        k: wv.k,
        reference: c.arm_lengths,
    };
    Ok(state.jacobian(wv.delta, &c.arm_trim))
}

/// Numerical rank of a Jacobian: singular values are compared against
/// `tol_rel` times the largest one after unit-normalizing the columns.
pub fn jacobian_rank(j: &DMatrix<f64>, tol_rel: f64) -> usize {
    let mut js = j.clone();
    for mut col in js.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    let sv = js.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > tol_rel * max).count()
}

/// Damped least-squares over the three trims at fixed delta. The conditions
/// are exactly linear in the trims, so this converges in a handful of
/// iterations. Returns (trims, norm, iterations, converged).
fn lm_refine(
    state: &SolverState,
    delta: f64,
    start_trims: [f64; 3],
    guess_trims: &[f64; 3],
    opts: &SolverOptions,
) -> ([f64; 3], f64, usize, bool) {
    let mut trims = start_trims;
    let mut r = state.residuals(delta, &trims);
    let mut norm = r.norm();
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if norm <= opts.residual_tolerance {
            break;
        }
        let j = state.jacobian(delta, &trims).columns(1, 3).into_owned();
        // column scaling for a well-posed SVD
        let scales: Vec<f64> = j
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let mut js = j.clone();
        for (ci, mut col) in js.column_iter_mut().enumerate() {
            col /= scales[ci];
        }
        let svd = js.svd(true, true);
        let u = svd.u.as_ref().expect("svd u");
        let vt = svd.v_t.as_ref().expect("svd v_t");
        let smax = svd.singular_values.max();
        let mu = lambda * smax * smax;

        // damped step in scaled coordinates
        let utr = u.transpose() * &r;
        let mut dx_s = DVector::zeros(3);
        for (idx, s) in svd.singular_values.iter().enumerate() {
            let coef = if *s > 0.0 { s / (s * s + mu) } else { 0.0 };
            let vrow = vt.row(idx).transpose();
            dx_s += vrow * (-coef * utr[idx]);
        }

        // relative to the displacement from the guess, not the raw trims
        let xs_norm: f64 = (0..3)
            .map(|c| ((trims[c] - guess_trims[c]) * scales[c]).powi(2))
            .sum::<f64>()
            .sqrt();
        let step_small = dx_s.norm() <= opts.step_tolerance * (1.0 + xs_norm);

        let mut new_trims = trims;
        for c in 0..3 {
            new_trims[c] += dx_s[c] / scales[c];
        }
        let new_r = state.residuals(delta, &new_trims);
        let new_norm = new_r.norm();
        if new_norm < norm {
            trims = new_trims;
            r = new_r;
            norm = new_norm;
            lambda = (lambda / 10.0).max(1e-18);
            if step_small {
                break;
            }
        } else {
            lambda *= 10.0;
            if step_small || lambda > 1e14 {
                break;
            }
        }
    }

    let converged = norm <= opts.residual_tolerance || iterations < opts.max_iterations;
    (trims, norm, iterations, converged)
}

/// Variable-projection outer loop for a free delta. For each candidate
/// delta the trims are solved linearly and the profiled residual norm is
/// minimized over delta by bracketing plus golden section, with a final
/// scan over the few representable values left in the interval.
///
/// Joint damped least-squares stalls on this problem: trading delta
/// against the common arm mode is first-order null in every condition
/// (self, cross and pump alike), so the joint step either crawls along the
/// curvature-only valley or overshoots it and gets rejected.
fn profile_delta(
    state: &SolverState,
    initial_guess: &Constellation,
    wv_guess: &WaveVectorPair,
    opts: &SolverOptions,
) -> (f64, [f64; 3], f64, usize, bool) {
    let mut total = 0usize;
    let mut eval = |d: f64, warm: [f64; 3]| {
        let (t, n, it, _) = lm_refine(state, d, warm, &initial_guess.arm_trim, opts);
        total += it;
        (t, n)
    };

    let d0 = wv_guess.delta;
    let (t0, g0) = eval(d0, initial_guess.arm_trim);
    let (mut center, mut tc, mut gc) = (d0, t0, g0);
    let mut h = (d0.abs() * 1e-12).max(1e-18);
    let mut bracketed = false;
    for _ in 0..100 {
        let (tl, gl) = eval(center - h, tc);
        let (tr, gr) = eval(center + h, tc);
        if gc <= gl && gc <= gr {
            bracketed = true;
            break;
        }
        if gl < gr {
            center -= h;
            tc = tl;
            gc = gl;
        } else {
            center += h;
            tc = tr;
            gc = gr;
        }
        h *= 8.0;
    }
    if !bracketed {
        return (center, tc, gc, total, false);
    }

    let (mut a, mut b) = (center - h, center + h);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut t1, mut g1) = eval(x1, tc);
    let (mut t2, mut g2) = eval(x2, tc);
    let mut best = (center, tc, gc);
    if g1 < best.2 {
        best = (x1, t1, g1);
    }
    if g2 < best.2 {
        best = (x2, t2, g2);
    }
    let mut sections = 0usize;
    while best.2 > opts.residual_tolerance
        && b - a > f64::EPSILON * center.abs().max(f64::MIN_POSITIVE)
        && sections < 400
    {
        sections += 1;
        if g1 <= g2 {
            b = x2;
            x2 = x1;
            t2 = t1;
            g2 = g1;
            x1 = b - INV_PHI * (b - a);
            let (t, g) = eval(x1, t2);
            t1 = t;
            g1 = g;
            if g1 < best.2 {
                best = (x1, t1, g1);
            }
        } else {
            a = x1;
            x1 = x2;
            t1 = t2;
            g1 = g2;
            x2 = a + INV_PHI * (b - a);
            let (t, g) = eval(x2, t1);
            t2 = t;
            g2 = g;
            if g2 < best.2 {
                best = (x2, t2, g2);
            }
        }
    }

    // The golden section stops a couple of ulps wide; the exact minimizer
    // is usually one of the few representable values left inside.
    if a > 0.0 && b.to_bits().wrapping_sub(a.to_bits()) <= 64 {
        let mut d = a;
        while d <= b {
            let (t, g) = eval(d, best.1);
            if g < best.2 {
                best = (d, t, g);
            }
            d = f64::from_bits(d.to_bits() + 1);
        }
    }

    let (d, t, g) = best;
    (d, t, g, total, true)
}

/// Damped least-squares recovery of (delta, l1, l2, l3) from the measured
/// phases, with k eliminated as half the pump wavevector.
///
/// The initial guess must place each arm within half a self-condition
/// fringe of the truth (the integer offsets are taken from `ncs`).
pub fn solve_geometry(
    ncs: &NullConditionSet,
    initial_guess: &Constellation,
    wv_guess: &WaveVectorPair,
    opts: &SolverOptions,
) -> Result<GeometrySolution> {
    ncs.validate()?;
    initial_guess.validate()?;
    let k = std::f64::consts::PI / ncs.pump_wavelength;
    let state = SolverState {
        ncs,
        k,
        reference: initial_guess.arm_lengths,
    };

    let active: Vec<usize> = if opts.fit_delta {
        vec![0, 1, 2, 3]
    } else {
        vec![1, 2, 3]
    };

    let (delta, trims, norm, iterations, converged) = if opts.fit_delta {
        profile_delta(&state, initial_guess, wv_guess, opts)
    } else {
        let (trims, norm, iterations, converged) = lm_refine(
            &state,
            wv_guess.delta,
            initial_guess.arm_trim,
            &initial_guess.arm_trim,
            opts,
        );
        (wv_guess.delta, trims, norm, iterations, converged)
    };

    let build_solution = |delta: f64, trims: [f64; 3], norm: f64, iterations: usize| {
        // linearized covariance (J^T J)^-1 over the active parameters,
        // computed from the column-scaled SVD at the final point
        let mut covariance = [[0.0; 5]; 5];
        let jraw = state.jacobian(delta, &trims).select_columns(active.iter());
        let col_norms: Vec<f64> = jraw
            .column_iter()
            .map(|col| {
                let n = col.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let mut js = jraw.clone();
        for (ci, mut col) in js.column_iter_mut().enumerate() {
            col /= col_norms[ci];
        }
        let svd = js.svd(false, true);
        let vt = svd.v_t.as_ref().expect("svd v_t");
        let n = active.len();
        let mut cmat = DMatrix::zeros(n, n);
        for (idx, s) in svd.singular_values.iter().enumerate() {
            if *s > 0.0 {
                let v = vt.row(idx).transpose();
                cmat += &v * v.transpose() / (s * s);
            }
        }
        for a in 0..n {
            for b in 0..n {
                let (pa, pb) = (active[a] + 1, active[b] + 1);
                covariance[pa][pb] = cmat[(a, b)] / (col_norms[a] * col_norms[b]);
            }
        }
        let arm_lengths = [
            initial_guess.arm_lengths[0] + trims[0],
            initial_guess.arm_lengths[1] + trims[1],
            initial_guess.arm_lengths[2] + trims[2],
        ];
        GeometrySolution {
            k,
            delta,
            arm_reference: initial_guess.arm_lengths,
            arm_trim: trims,
            arm_lengths,
            residual_norm: norm,
            iterations,
            covariance,
        }
    };

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            residual_norm: norm,
            best: Box::new(build_solution(delta, trims, norm, iterations)),
        });
    }

    // ambiguity check: the step from the guess must stay inside half a
    // self-condition fringe, otherwise the integer offsets are suspect
    if delta > 0.0 {
        let half_fringe = std::f64::consts::FRAC_PI_2 / delta / 2.0;
        for i in 0..3 {
            let moved = (trims[i] - initial_guess.arm_trim[i]).abs();
            if moved > half_fringe {
                return Err(Error::Ambiguity(format!(
                    "arm {} moved {:.3e} m, beyond half a fringe ({:.3e} m); \
                     integer offsets unresolved",
                    i + 1,
                    moved,
                    half_fringe
                )));
            }
        }
    }

    Ok(build_solution(delta, trims, norm, iterations))
}

/// Result of the integer-offset search.
#[derive(Clone, Debug)]
pub struct ResolvedIntegers {
    /// One integer per condition in the set's order (0 for the pump).
    pub per_condition: Vec<i64>,
    /// Residual norm of the best combination, rad.
    pub residual_norm: f64,
    pub combos_searched: usize,
}

/// Per-equation candidate bound.
pub const MAX_CANDIDATES_PER_EQUATION: usize = 1_000_000;
/// Joint self-combination bound above which a flat prior over the ranging
/// box makes a minimum-residual pick statistically unsafe.
pub const MAX_SELF_COMBINATIONS: usize = 64;

fn round_dd(q: Dd) -> f64 {
    q.add(Dd::from_f64(0.5)).floor()
}

/// Resolve the quarter-fringe integer offsets from coarse arm lengths with
/// a common per-arm `uncertainty` (meters). The self conditions act as a
/// ranging ladder: their candidate integers are enumerated over the box,
/// each combination refines the arm lengths exactly, and the cross
/// integers follow by rounding; the combination with the smallest total
/// squared cross residual wins (ties broken by smallest total |m|).
pub fn resolve_integers(
    ncs: &NullConditionSet,
    coarse_lengths: &[f64; 3],
    uncertainty: f64,
    wv: &WaveVectorPair,
) -> Result<ResolvedIntegers> {
    ncs.validate()?;
    if uncertainty < 0.0 {
        return Err(Error::Domain {
            name: "uncertainty",
            constraint: "non-negative",
            value: uncertainty,
        });
    }
    if !(wv.delta > 0.0) {
        return Err(Error::Domain {
            name: "delta",
            constraint: "strictly positive for integer resolution",
            value: wv.delta,
        });
    }
    let selves: Vec<&NullCondition> = (0..3)
        .map(|arm| {
            ncs.self_condition(arm).ok_or_else(|| {
                Error::Ambiguity(format!(
                    "integer resolution needs the self condition of arm {}",
                    arm + 1
                ))
            })
        })
        .collect::<Result<_>>()?;

    // candidate self integers per arm
    let mut candidates: Vec<Vec<i64>> = Vec::with_capacity(3);
    for (arm, cond) in selves.iter().enumerate() {
        let q_at = |l: f64| -> Dd {
            Dd::from_f64(wv.delta)
                .mul(Dd::from_f64(l))
                .sub(Dd::from_f64(cond.instrument_phase))
                .sub(Dd::from_f64(cond.measured_phase))
                .div(FRAC_PI_2)
        };
        let lo = round_dd(q_at(coarse_lengths[arm] - uncertainty)) as i64;
        let hi = round_dd(q_at(coarse_lengths[arm] + uncertainty)) as i64;
        let count = (hi - lo + 1).max(0) as usize;
        if count > MAX_CANDIDATES_PER_EQUATION {
            return Err(Error::SearchBound(format!(
                "{count} self candidates on arm {}",
                arm + 1
            )));
        }
        candidates.push((lo..=hi).collect());
    }
    let combos: usize = candidates.iter().map(|c| c.len()).product();
    if combos > MAX_CANDIDATES_PER_EQUATION {
        return Err(Error::SearchBound(format!("{combos} self combinations")));
    }
    if combos > MAX_SELF_COMBINATIONS {
        return Err(Error::Ambiguity(format!(
            "{combos} self combinations under a flat prior over the ranging box"
        )));
    }

    let ks = Dd::new(wv.k, 0.5 * wv.delta);
    let ki = Dd::new(wv.k, -0.5 * wv.delta);
    let delta_dd = Dd::from_f64(wv.delta);

    struct Best {
        score: f64,
        abs_m: i64,
        per_condition: Vec<i64>,
    }
    let mut best: Option<Best> = None;
    let mut second_score = f64::INFINITY;
    let mut searched = 0usize;

    for &m1 in &candidates[0] {
        for &m2 in &candidates[1] {
            for &m3 in &candidates[2] {
                searched += 1;
                let selfs_m = [m1, m2, m3];
                // exact refinement of each arm from its self condition
                let arms: Vec<Dd> = (0..3)
                    .map(|i| {
                        Dd::from_f64(selves[i].instrument_phase)
                            .add(FRAC_PI_2.mul_f64(selfs_m[i] as f64))
                            .add(Dd::from_f64(selves[i].measured_phase))
                            .div(delta_dd)
                    })
                    .collect();
                let mut score = 0.0;
                let mut abs_m: i64 = selfs_m.iter().map(|m| m.abs()).sum();
                let mut per_condition = Vec::with_capacity(ncs.conditions.len());
                for c in &ncs.conditions {
                    let m = match c.kind {
                        ConditionKind::Cross { pair, pattern } => {
                            let (i, j) = PAIRS[pair];
                            let phi = cross_phase(ks, ki, arms[i], arms[j], pattern);
                            let q = phi
                                .sub(Dd::from_f64(c.instrument_phase))
                                .sub(Dd::from_f64(c.measured_phase))
                                .div(FRAC_PI_2);
                            let m = round_dd(q);
                            let resid =
                                q.sub(Dd::from_f64(m)).to_f64() * std::f64::consts::FRAC_PI_2;
                            score += resid * resid;
                            abs_m += m.abs() as i64;
                            m as i64
                        }
                        ConditionKind::SelfBeat { arm } => selfs_m[arm],
                        ConditionKind::Pump => 0,
                    };
                    per_condition.push(m);
                }
                match &mut best {
                    Some(b) if score < b.score || (score == b.score && abs_m < b.abs_m) => {
                        second_score = b.score;
                        *b = Best {
                            score,
                            abs_m,
                            per_condition,
                        };
                    }
                    Some(b) => {
                        if score < second_score && (score, abs_m) != (b.score, b.abs_m) {
                            second_score = score;
                        }
                    }
                    None => {
                        best = Some(Best {
                            score,
                            abs_m,
                            per_condition,
                        });
                    }
                }
            }
        }
    }

    let best = best.expect("at least one combination");
    if combos > 1 && (second_score - best.score) < 1e-9 {
        return Err(Error::Ambiguity(format!(
            "best ({:.3e}) and runner-up ({:.3e}) squared residuals indistinguishable",
            best.score, second_score
        )));
    }
    Ok(ResolvedIntegers {
        per_condition: best.per_condition,
        residual_norm: best.score.sqrt(),
        combos_searched: searched,
    })
}
