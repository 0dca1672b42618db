//! Continuation in `p` towards 1 with warm starts, per-step estimates and a
//! certificate for the limit pair `(u, z)`.
//!
//! Each step solves the regularised problem at `p_k` with `eps = eps0 (p_k - 1)`,
//! starting from the previous solution. The flux of the last step is the
//! surrogate for the limit field `z`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField, VectorField};
use crate::orlicz::{
    luxemburg_norm, lr_norm, smallness_check, weighted_lq_norm, ExponentPair, Smallness, Variant,
    DEFAULT_NORM_TOL,
};
use crate::solver::{flux, solve_fixed_p, SolveParams};
use crate::weights::{check_h0, H0Report, WeightField};

pub const TOL_FLUX: f64 = 0.05;
pub const TOL_PAIR: f64 = 0.05;
pub const TOL_RES: f64 = 1e-6;
/// Last `theta0_diff_prev` must fall below this fraction of the first.
pub const THETA0_CAUCHY_FACTOR: f64 = 1e-3;
/// Both pairing integrals below this count as `0/0`.
pub const PAIRING_ZERO: f64 = 1e-14;
/// Amplitude of the random initial fields used by [`uniqueness_probe`].
pub const PROBE_AMPLITUDE: f64 = 0.1;

/// `1 + 2^{-k}` for `k = 1..=k_max`.
pub fn default_schedule(k_max: usize) -> Vec<f64> {
    (1..=k_max).map(|k| 1.0 + 0.5f64.powi(k as i32)).collect()
}

/// Solver settings shared by every step; exponents and `eps` come from the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverKnobs {
    pub tol: f64,
    pub max_iter: usize,
    pub hessian_floor: f64,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        SolverKnobs { tol: 1e-9, max_iter: 200, hessian_floor: 1e-8 }
    }
}

impl SolverKnobs {
    pub fn params(&self, exponents: ExponentPair, epsilon: f64) -> SolveParams {
        SolveParams { exponents, epsilon, tol: self.tol, max_iter: self.max_iter, hessian_floor: self.hessian_floor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationConfig {
    pub q: f64,
    /// Strictly decreasing, every entry `> 1`.
    pub p_schedule: Vec<f64>,
    pub epsilon0: f64,
    pub solver: SolverKnobs,
    pub flux_r_list: Vec<f64>,
    /// Reject schedules with `q / p >= 1 + 1/n` instead of only flagging them.
    pub strict_h0: bool,
}

impl ContinuationConfig {
    /// Default schedule of depth `k_max`, `eps0 = 1e-2`, `r in {1, 2, 4, 8}`.
    pub fn new(q: f64, k_max: usize) -> Self {
        ContinuationConfig {
            q,
            p_schedule: default_schedule(k_max),
            epsilon0: 1e-2,
            solver: SolverKnobs::default(),
            flux_r_list: vec![1.0, 2.0, 4.0, 8.0],
            strict_h0: false,
        }
    }

    pub fn epsilon(&self, p: f64) -> f64 {
        self.epsilon0 * (p - 1.0)
    }

    pub fn p_min(&self) -> f64 {
        self.p_schedule.last().copied().unwrap_or(f64::NAN)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.q > 1.0 && self.q.is_finite()) {
            return bad(format!("q must exceed 1, got {}", self.q));
        }
        if self.p_schedule.is_empty() {
            return bad("empty p schedule".into());
        }
        if self.p_schedule.iter().any(|p| !(*p > 1.0 && p.is_finite())) {
            return bad(format!("every scheduled p must exceed 1: {:?}", self.p_schedule));
        }
        if self.p_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad(format!("p schedule must be strictly decreasing: {:?}", self.p_schedule));
        }
        if !(self.p_min() < self.q) {
            return bad(format!("final p = {} must lie below q = {}", self.p_min(), self.q));
        }
        if !(self.epsilon0 >= 0.0 && self.epsilon0.is_finite()) {
            return bad(format!("epsilon0 must be >= 0, got {}", self.epsilon0));
        }
        if self.flux_r_list.is_empty() || self.flux_r_list.iter().any(|r| !(*r >= 1.0 && r.is_finite())) {
            return bad(format!("flux r list needs finite r >= 1: {:?}", self.flux_r_list));
        }
        self.solver.params(ExponentPair::unordered(2.0, 2.0)?, 0.0).validate()?;
        if self.strict_h0 {
            let bound = 1.0 + 1.0 / n as f64;
            if let Some(p) = self.p_schedule.iter().find(|p| self.q / **p >= bound) {
                return Err(Error::H0Violation(format!(
                    "q/p = {}/{} = {:.4} is not below 1 + 1/n = {:.4}",
                    self.q,
                    p,
                    self.q / p,
                    bound
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub p: f64,
    pub epsilon: f64,
    /// `||Du_p||` in the `theta_p` Luxemburg norm.
    pub lambda_p: f64,
    /// `(integral of a |Du_p|^q)^{1/q}`.
    pub weighted_q: f64,
    /// `(r, ||z_p||_{L^r})` in the order of `flux_r_list`.
    pub flux_lr: Vec<(f64, f64)>,
    pub flux_sup: f64,
    /// `||Du_p - Du_prev||` in the `theta_0` norm; `u_prev` is the warm start.
    pub theta0_diff_prev: f64,
    pub pairing_ratio: f64,
    pub residual: f64,
    pub iterations: usize,
    /// `q / p < 1 + 1/n` at this step.
    pub ratio_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertVerdict {
    Certified,
    Failed,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCertificate {
    pub flux_sup_final: f64,
    pub pairing_ratio_final: f64,
    pub residual_final: f64,
    pub theta0_cauchy: bool,
    pub smallness_lhs: f64,
    pub verdict: CertVerdict,
    /// `sup|u(eps/2) - u(eps)| / sup|u(eps)|` at the last step (0 when both vanish).
    pub eps_sensitivity: f64,
}

impl LimitCertificate {
    pub fn flux_ok(&self) -> bool {
        self.flux_sup_final <= 1.0 + TOL_FLUX
    }

    pub fn pairing_ok(&self) -> bool {
        (self.pairing_ratio_final - 1.0).abs() <= TOL_PAIR
    }

    pub fn residual_ok(&self) -> bool {
        self.residual_final <= TOL_RES
    }
}

/// Step at which a solve failed to converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aborted {
    pub step: usize,
    pub p: f64,
    pub grad_sup: f64,
    pub tol: f64,
}

impl Aborted {
    pub fn to_error(&self) -> Error {
        Error::AbortedStep {
            step: self.step,
            p: self.p,
            reason: format!("solver stopped at grad sup {:e} > tol {:e}", self.grad_sup, self.tol),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationRun {
    pub h0: H0Report,
    pub smallness: Smallness,
    pub steps: Vec<StepDiagnostics>,
    pub certificate: LimitCertificate,
    /// `monotone_gap(u_k, u_final)` for every completed step.
    pub monotone_gaps: Vec<f64>,
    pub aborted: Option<Aborted>,
    pub u: ScalarField,
    pub z: VectorField,
}

/// `integral of z . Du / integral of |Du|`, with `0/0 = 1`.
pub fn pairing_ratio(z: &VectorField, u: &ScalarField) -> f64 {
    let grid = u.grid();
    let du = u.gradient();
    let num = grid.integrate(&z.dot(&du));
    let den = grid.integrate(&du.magnitudes());
    if num.abs() < PAIRING_ZERO && den < PAIRING_ZERO {
        return 1.0;
    }
    num / den.max(PAIRING_ZERO)
}

/// `integral of a (|Du|^{q-2} Du - |Dv|^{q-2} Dv) . (Du - Dv)`, nonnegative.
pub fn monotone_gap(u: &ScalarField, u_ref: &ScalarField, q: f64, a: &WeightField) -> Result<f64> {
    if !Arc::ptr_eq(u.grid(), u_ref.grid()) || !Arc::ptr_eq(u.grid(), a.grid()) {
        return Err(Error::Shape("monotone_gap needs fields on one grid".into()));
    }
    let grid = u.grid();
    let n = grid.dim();
    let (du, dv) = (u.gradient(), u_ref.gradient());
    let mut vals = vec![0.0; grid.cell_count()];
    for c in grid.active_cells() {
        let (x, y) = (du.cell(c), dv.cell(c));
        let (nx, ny) = (norm(x), norm(y));
        let fx = if nx > 0.0 { nx.powf(q - 2.0) } else { 0.0 };
        let fy = if ny > 0.0 { ny.powf(q - 2.0) } else { 0.0 };
        vals[c] = a.values()[c] * (0..n).map(|d| (fx * x[d] - fy * y[d]) * (x[d] - y[d])).sum::<f64>();
    }
    Ok(grid.integrate(&vals))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||u||_{theta_p} / ||Du||_{theta_p}` for a nonzero Dirichlet field.
pub fn poincare_ratio(u: &ScalarField, a: &WeightField, e: &ExponentPair) -> Result<f64> {
    if !u.is_dirichlet() {
        return Err(Error::InvalidParameter("poincare_ratio needs a Dirichlet field".into()));
    }
    let top = luxemburg_norm(u, a, e, Variant::ThetaP, DEFAULT_NORM_TOL);
    let bottom = luxemburg_norm(&u.gradient(), a, e, Variant::ThetaP, DEFAULT_NORM_TOL);
    if bottom == 0.0 {
        return Err(Error::InvalidParameter("poincare_ratio is undefined for u = 0".into()));
    }
    Ok(top / bottom)
}

/// Fills every per-step estimate for a converged `u_p`.
pub fn step_diagnostics(
    u_p: &ScalarField,
    u_prev: &ScalarField,
    p: f64,
    config: &ContinuationConfig,
    a: &WeightField,
    residual: f64,
    iterations: usize,
) -> Result<StepDiagnostics> {
    let n = u_p.grid().dim();
    let e = ExponentPair::unordered(p, config.q)?;
    let eps = config.epsilon(p);
    let du = u_p.gradient();
    let z = flux(u_p, p, eps);
    let diff = du.sub(&u_prev.gradient());
    Ok(StepDiagnostics {
        p,
        epsilon: eps,
        lambda_p: luxemburg_norm(&du, a, &e, Variant::ThetaP, DEFAULT_NORM_TOL),
        weighted_q: weighted_lq_norm(&du, a, config.q),
        flux_lr: config.flux_r_list.iter().map(|&r| (r, lr_norm(&z, r))).collect(),
        flux_sup: z.sup_norm(),
        theta0_diff_prev: luxemburg_norm(&diff, a, &e, Variant::Theta0, DEFAULT_NORM_TOL),
        pairing_ratio: pairing_ratio(&z, u_p),
        residual,
        iterations,
        ratio_ok: config.q / p < 1.0 + 1.0 / n as f64,
    })
}

fn check_preconditions(config: &ContinuationConfig, a: &WeightField, f: &ScalarField) -> Result<H0Report> {
    let grid = a.grid();
    if !Arc::ptr_eq(grid, f.grid()) {
        return Err(Error::Shape("weight and load live on different grids".into()));
    }
    config.validate(grid.dim())?;
    let h0 = check_h0(a, grid.dim(), config.q, config.p_min())?;
    if !h0.weight_ok() {
        return Err(Error::H0Violation(format!(
            "weight fails (H0): boundary min {:e}, A_q constant {:e}",
            h0.boundary_min, h0.aq_constant
        )));
    }
    Ok(h0)
}

/// Runs the schedule from `init` (zero when `None`).
///
/// A non-converged step stops the run: the diagnostics so far are kept,
/// `aborted` is set and the verdict is `failed`.
pub fn run_continuation(
    config: &ContinuationConfig,
    a: &WeightField,
    f: &ScalarField,
    init: Option<&ScalarField>,
) -> Result<ContinuationRun> {
    let h0 = check_preconditions(config, a, f)?;
    let grid = a.grid();
    let smallness = smallness_check(f);
    let mut u = match init {
        Some(u0) => {
            if !Arc::ptr_eq(u0.grid(), grid) || !u0.is_dirichlet() {
                return Err(Error::Shape("initial field must be Dirichlet on the weight grid".into()));
            }
            u0.clone()
        }
        None => ScalarField::zeros(grid),
    };

    let mut steps = Vec::with_capacity(config.p_schedule.len());
    let mut solutions = Vec::with_capacity(config.p_schedule.len());
    let mut aborted = None;
    for (k, &p) in config.p_schedule.iter().enumerate() {
        let params = config.solver.params(ExponentPair::unordered(p, config.q)?, config.epsilon(p));
        let res = solve_fixed_p(&params, a, f, &u)?;
        if !res.converged {
            aborted = Some(Aborted { step: k + 1, p, grad_sup: res.grad_sup, tol: res.tol });
            break;
        }
        steps.push(step_diagnostics(&res.u, &u, p, config, a, res.residual, res.iterations)?);
        u = res.u;
        solutions.push(u.clone());
    }

    let monotone_gaps =
        solutions.iter().map(|s| monotone_gap(s, &u, config.q, a)).collect::<Result<Vec<_>>>()?;
    let p_last = steps.last().map(|s| s.p).unwrap_or(config.p_schedule[0]);
    let eps_last = config.epsilon(p_last);
    let z = flux(&u, p_last, eps_last);

    let eps_sensitivity = if aborted.is_none() {
        let params = config.solver.params(ExponentPair::unordered(p_last, config.q)?, 0.5 * eps_last);
        let half = solve_fixed_p(&params, a, f, &u)?;
        relative_sup_diff(&half.u, &u)
    } else {
        f64::NAN
    };
    let certificate = certify(&steps, &smallness, aborted.is_some(), eps_sensitivity);
    Ok(ContinuationRun { h0, smallness, steps, certificate, monotone_gaps, aborted, u, z })
}

fn relative_sup_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    let d = a.sup_distance(b);
    if d == 0.0 {
        0.0
    } else {
        d / b.sup_norm().max(a.sup_norm())
    }
}

fn certify(steps: &[StepDiagnostics], smallness: &Smallness, aborted: bool, eps_sensitivity: f64) -> LimitCertificate {
    let (Some(first), Some(last)) = (steps.first(), steps.last()) else {
        return LimitCertificate {
            flux_sup_final: f64::NAN,
            pairing_ratio_final: f64::NAN,
            residual_final: f64::NAN,
            theta0_cauchy: false,
            smallness_lhs: smallness.lhs,
            verdict: CertVerdict::Failed,
            eps_sensitivity,
        };
    };
    let mut cert = LimitCertificate {
        flux_sup_final: last.flux_sup,
        pairing_ratio_final: last.pairing_ratio,
        residual_final: last.residual,
        theta0_cauchy: last.theta0_diff_prev <= THETA0_CAUCHY_FACTOR * (first.theta0_diff_prev + 1e-12),
        smallness_lhs: smallness.lhs,
        verdict: CertVerdict::Failed,
        eps_sensitivity,
    };
    let holds = cert.flux_ok() && cert.pairing_ok() && cert.residual_ok() && cert.theta0_cauchy;
    cert.verdict = if aborted || !holds {
        CertVerdict::Failed
    } else if smallness.pass {
        CertVerdict::Certified
    } else {
        CertVerdict::Inconclusive
    };
    cert
}

/// Random Dirichlet field with entries uniform in `[-amplitude, amplitude]`.
pub fn random_init(grid: &Arc<GridDomain>, seed: u64, amplitude: f64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScalarField::dirichlet_from_fn(grid, |_| amplitude * rng.random_range(-1.0..=1.0))
}

/// Largest pairwise sup-difference between final solutions of runs started
/// from `n_seeds` random fields (seeds `seed, seed + 1, ...`).
pub fn uniqueness_probe(
    config: &ContinuationConfig,
    a: &WeightField,
    f: &ScalarField,
    n_seeds: usize,
    seed: u64,
) -> Result<f64> {
    if n_seeds < 2 {
        return Err(Error::InvalidParameter("uniqueness probe needs at least two seeds".into()));
    }
    let grid = a.grid();
    let finals = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let init = random_init(grid, seed.wrapping_add(i as u64), PROBE_AMPLITUDE);
            let run = run_continuation(config, a, f, Some(&init))?;
            match run.aborted {
                Some(ab) => Err(ab.to_error()),
                None => Ok(run.u),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = 0.0f64;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            worst = worst.max(finals[i].sup_distance(&finals[j]));
        }
    }
    Ok(worst)
}
