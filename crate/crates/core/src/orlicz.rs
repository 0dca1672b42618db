//! Generalized Orlicz toolbox for `theta_p(x,t) = t^p + a(x) t^q` and
//! `theta_0(x,t) = a(x) t^q`: modulars, Luxemburg norms, plain and weighted
//! Lebesgue norms, Sobolev constants and the two scalar checks built on them.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField, VectorField};
use crate::weights::WeightField;

/// Default relative bisection width for [`luxemburg_norm`].
pub const DEFAULT_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    p: f64,
    q: f64,
}

impl ExponentPair {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q > p && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 1 < p < q, got p = {p}, q = {q}")));
        }
        Ok(ExponentPair { p, q })
    }

    /// Allows `p = q`, used for the linear `p = q = 2` reference problem.
    pub fn new_allow_equal(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q >= p && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("need 1 < p <= q, got p = {p}, q = {q}")));
        }
        Ok(ExponentPair { p, q })
    }

    /// Any `p, q > 1`; continuation schedules may start above `q`.
    pub fn unordered(p: f64, q: f64) -> Result<Self> {
        if !(p > 1.0 && q > 1.0 && p.is_finite() && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("need p, q > 1, got p = {p}, q = {q}")));
        }
        Ok(ExponentPair { p, q })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Sobolev conjugate `np / (n - p)`; needs `p < n`.
    pub fn sobolev_conjugate(&self, n: usize) -> Option<f64> {
        let nf = n as f64;
        (self.p < nf).then(|| nf * self.p / (nf - self.p))
    }

    /// Hölder dual of the Sobolev conjugate: `1/p_* + 1/p^* = 1`.
    pub fn dual_exponent(&self, n: usize) -> Option<f64> {
        self.sobolev_conjugate(n).map(|ps| ps / (ps - 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ThetaP,
    Theta0,
}

/// Anything that yields one magnitude per grid cell.
pub trait CellMagnitudes {
    fn grid(&self) -> &GridDomain;
    fn cell_magnitudes(&self) -> Vec<f64>;
}

impl CellMagnitudes for VectorField {
    fn grid(&self) -> &GridDomain {
        VectorField::grid(self)
    }

    fn cell_magnitudes(&self) -> Vec<f64> {
        self.magnitudes()
    }
}

/// Scalar fields enter through their cell averages.
impl CellMagnitudes for ScalarField {
    fn grid(&self) -> &GridDomain {
        ScalarField::grid(self)
    }

    fn cell_magnitudes(&self) -> Vec<f64> {
        self.cell_values().into_iter().map(f64::abs).collect()
    }
}

/// `(integral of m^p, integral of a m^q)`.
fn power_integrals(grid: &GridDomain, mags: &[f64], a: &[f64], e: &ExponentPair) -> (f64, f64) {
    let (mut sp, mut sq) = (0.0, 0.0);
    for c in grid.active_cells() {
        let m = mags[c];
        if m > 0.0 {
            sp += m.powf(e.p);
            sq += a[c] * m.powf(e.q);
        }
    }
    let vol = grid.cell_volume();
    (sp * vol, sq * vol)
}

/// `rho(v) = integral of theta(x, |v|)`.
pub fn modular<F: CellMagnitudes>(v: &F, a: &WeightField, e: &ExponentPair, variant: Variant) -> f64 {
    let (sp, sq) = power_integrals(v.grid(), &v.cell_magnitudes(), a.values(), e);
    match variant {
        Variant::ThetaP => sp + sq,
        Variant::Theta0 => sq,
    }
}

/// `inf { lambda > 0 : rho(v / lambda) <= 1 }` by geometric bisection to relative width `tol`.
pub fn luxemburg_norm<F: CellMagnitudes>(
    v: &F,
    a: &WeightField,
    e: &ExponentPair,
    variant: Variant,
    tol: f64,
) -> f64 {
    let grid = v.grid();
    let mags = v.cell_magnitudes();
    let (sp, sq) = power_integrals(grid, &mags, a.values(), e);
    let sp = if variant == Variant::ThetaP { sp } else { 0.0 };
    if sp == 0.0 && sq == 0.0 {
        return 0.0;
    }
    let (ln_p, ln_q) = (sp.ln(), sq.ln());
    // rho(v / lambda) with x = ln(lambda); ln(0) = -inf contributes exp(-inf) = 0
    let rho = |x: f64| (ln_p - e.p * x).exp() + (ln_q - e.q * x).exp();

    let l1 = lr_norm_of(grid, &mags, 1.0);
    let wq = weighted_norm_of(grid, &mags, a.values(), e.q);
    let mut hi = (l1 + wq + 1.0).max(1.0).ln();
    while rho(hi) > 1.0 {
        hi += std::f64::consts::LN_2;
    }
    let mut lo = f64::MIN_POSITIVE.ln();
    if rho(lo) <= 1.0 {
        return 0.0;
    }
    let width = (1.0 + tol).ln();
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if rho(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn lr_norm_of(grid: &GridDomain, mags: &[f64], r: f64) -> f64 {
    let s: f64 = grid.active_cells().map(|c| mags[c].powf(r)).sum();
    (s * grid.cell_volume()).powf(1.0 / r)
}

fn weighted_norm_of(grid: &GridDomain, mags: &[f64], a: &[f64], q: f64) -> f64 {
    let s: f64 = grid.active_cells().map(|c| a[c] * mags[c].powf(q)).sum();
    (s * grid.cell_volume()).powf(1.0 / q)
}

/// `(integral of |v|^r)^{1/r}`, `r >= 1`.
pub fn lr_norm<F: CellMagnitudes>(v: &F, r: f64) -> f64 {
    assert!(r >= 1.0, "L^r norm needs r >= 1");
    lr_norm_of(v.grid(), &v.cell_magnitudes(), r)
}

/// `(integral of a |v|^q)^{1/q}`.
pub fn weighted_lq_norm<F: CellMagnitudes>(v: &F, a: &WeightField, q: f64) -> f64 {
    assert!(q >= 1.0, "weighted norm needs q >= 1");
    weighted_norm_of(v.grid(), &v.cell_magnitudes(), a.values(), q)
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    (0.5 * nf * std::f64::consts::PI.ln() - ln_gamma(1.0 + 0.5 * nf)).exp()
}

/// Best constant `S(n,p)` in `||u||_{p*} <= S(n,p) ||grad u||_p`.
///
/// `p = 1` gives the isoperimetric constant `n^{-1} |B_1|^{-1/n}`; `1 < p < n`
/// uses Talenti's closed form.
pub fn sobolev_constant(n: usize, p: f64) -> Result<f64> {
    let nf = n as f64;
    if n == 0 || p < 1.0 {
        return Err(Error::InvalidParameter(format!("sobolev constant needs n >= 1 and p >= 1, got n = {n}, p = {p}")));
    }
    if p == 1.0 {
        return Ok(unit_ball_volume(n).powf(-1.0 / nf) / nf);
    }
    if p >= nf {
        return Err(Error::InvalidParameter(format!("sobolev constant needs p < n, got p = {p}, n = {n}")));
    }
    let pi = std::f64::consts::PI;
    let ln_ratio =
        ln_gamma(1.0 + nf / 2.0) + ln_gamma(nf) - ln_gamma(nf / p) - ln_gamma(1.0 + nf - nf / p);
    let ln_s = -0.5 * pi.ln() - nf.ln() / p
        + (1.0 - 1.0 / p) * ((p - 1.0) / (nf - p)).ln()
        + ln_ratio / nf;
    Ok(ln_s.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smallness {
    pub lhs: f64,
    pub pass: bool,
}

/// `||f||_n (S(n,1) + 1) < 1` with `n` the grid dimension.
pub fn smallness_check(f: &ScalarField) -> Smallness {
    let n = f.grid().dim();
    let s1 = sobolev_constant(n, 1.0).expect("p = 1 is always admissible");
    let lhs = lr_norm(f, n as f64) * (s1 + 1.0);
    Smallness { lhs, pass: lhs < 1.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoelderCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `||f||_{p_*} <= |Omega|^{1 - 1/p} ||f||_n` for `1 < p < n`.
pub fn hoelder_fp_check(f: &ScalarField, p: f64) -> Result<HoelderCheck> {
    let grid = f.grid();
    let n = grid.dim();
    if !(p > 1.0 && p < n as f64) {
        return Err(Error::InvalidParameter(format!("Hölder check needs 1 < p < n, got p = {p}, n = {n}")));
    }
    let nf = n as f64;
    let p_star = nf * p / (nf - p);
    let p_lower = p_star / (p_star - 1.0);
    let lhs = lr_norm(f, p_lower);
    let rhs = grid.measure().powf(1.0 - 1.0 / p) * lr_norm(f, nf);
    Ok(HoelderCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-10) })
}
