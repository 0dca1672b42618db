//! Fixed-`p` double-phase problem as a convex minimisation.
//!
//! The discrete energy is
//!
//! ```text
//! E(u) = sum_cells h^n [ ((|Du|^2 + eps^2)^{p/2} - eps^p) / p + a |Du|^q / q ] - sum_nodes w_i f_i u_i
//! ```
//!
//! with `Du` the forward-difference gradient and `w_i` the lumped nodal
//! quadrature weight. Its gradient is the discrete weak form tested against
//! each nodal hat function, so a stationary point is a discrete weak solution.
//! Minimisation is damped Newton with Armijo backtracking, racing a secant
//! (Kacanov) step at every iteration, with a banded Cholesky solve per step.

pub mod banded;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDomain, ScalarField, VectorField};
use crate::orlicz::ExponentPair;
use crate::weights::WeightField;
use banded::BandMatrix;

pub const ARMIJO_C: f64 = 1e-4;
pub const MAX_BACKTRACKS: usize = 60;
/// Lower clip on the cell Hessian eigenvalues.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Gradient floor for the secant matrix. Far below the Newton floor so the
/// secant step can finish off cells where `a |Du|^{q-1}` is not Lipschitz.
pub const SECANT_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub exponents: ExponentPair,
    /// Regularisation of `|Du|^{p-2}`.
    pub epsilon: f64,
    /// Base stationarity tolerance; the effective tolerance is `tol * (1 + |E(init)|)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest gradient magnitude used when evaluating singular Hessian terms.
    pub hessian_floor: f64,
}

impl SolveParams {
    pub fn new(exponents: ExponentPair, epsilon: f64) -> Self {
        SolveParams { exponents, epsilon, tol: 1e-9, max_iter: 200, hessian_floor: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter < 1 || !(self.epsilon >= 0.0) || !(self.hessian_floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need tol > 0, max_iter >= 1, epsilon >= 0, hessian_floor > 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: ScalarField,
    pub iterations: usize,
    pub energy: f64,
    pub grad_sup: f64,
    pub residual: f64,
    pub converged: bool,
    /// Effective stationarity tolerance used for `converged`.
    pub tol: f64,
    /// Energy after every accepted iterate, starting with the initial guess.
    pub energy_trace: Vec<f64>,
}

impl SolveResult {
    pub fn into_result(self) -> Result<SolveResult> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, grad_sup: self.grad_sup, tol: self.tol })
        }
    }
}

/// Per-cell energy density and its derivatives.
#[derive(Debug, Clone, Copy)]
struct Density {
    p: f64,
    q: f64,
    eps: f64,
    floor: f64,
}

impl Density {
    fn new(params: &SolveParams) -> Self {
        Density {
            p: params.exponents.p(),
            q: params.exponents.q(),
            eps: params.epsilon,
            floor: params.hessian_floor,
        }
    }

    /// `((t^2 + eps^2)^{p/2} - eps^p)/p + a t^q / q` with `t^2 = norm2`.
    fn value(&self, norm2: f64, a: f64) -> f64 {
        let Density { p, q, eps, .. } = *self;
        let p_part = if eps > 0.0 {
            // eps^p * ((1 + t^2/eps^2)^{p/2} - 1) without cancellation
            eps.powf(p) * ((0.5 * p) * (norm2 / (eps * eps)).ln_1p()).exp_m1()
        } else {
            norm2.powf(0.5 * p)
        };
        let q_part = if a != 0.0 && norm2 > 0.0 { a * norm2.powf(0.5 * q) / q } else { 0.0 };
        p_part / p + q_part
    }

    /// Scalar prefactor `phi` with flux `= phi * xi`.
    fn flux_factor(&self, norm2: f64, a: f64) -> f64 {
        let Density { p, q, eps, .. } = *self;
        let s = norm2 + eps * eps;
        let fp = if s > 0.0 { s.powf(0.5 * (p - 2.0)) } else { 0.0 };
        let fq = if a != 0.0 && norm2 > 0.0 { a * norm2.powf(0.5 * (q - 2.0)) } else { 0.0 };
        fp + fq
    }

    /// Flux factor with the same floors as the Hessian.
    fn secant_eig(&self, norm2: f64, a: f64) -> f64 {
        let Density { p, q, eps, .. } = *self;
        let floor = SECANT_FLOOR;
        let s = (norm2 + eps * eps).max(floor * floor);
        let fq = if a != 0.0 { a * norm2.sqrt().max(floor).powf(q - 2.0) } else { 0.0 };
        (s.powf(0.5 * (p - 2.0)) + fq).max(EIGEN_FLOOR)
    }

    /// Eigenvalues `(along xi, across xi)` of the cell Hessian, clipped.
    fn hessian_eigs(&self, norm2: f64, a: f64) -> (f64, f64) {
        let Density { p, q, eps, floor } = *self;
        let s = (norm2 + eps * eps).max(floor * floor);
        let perp_p = s.powf(0.5 * (p - 2.0));
        let par_p = s.powf(0.5 * (p - 4.0)) * (eps * eps + (p - 1.0) * norm2);
        let (par_q, perp_q) = if a != 0.0 {
            let m = norm2.sqrt().max(floor);
            let base = a * m.powf(q - 2.0);
            if norm2 > 0.0 {
                ((q - 1.0) * base, base)
            } else {
                let iso = base * (q - 1.0).min(1.0);
                (iso, iso)
            }
        } else {
            (0.0, 0.0)
        };
        ((par_p + par_q).max(EIGEN_FLOOR), (perp_p + perp_q).max(EIGEN_FLOOR))
    }
}

/// Problem data bundled for repeated evaluation.
struct Problem<'a> {
    grid: &'a GridDomain,
    density: Density,
    a: &'a [f64],
    f: &'a [f64],
    strides: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(params: &SolveParams, a: &'a WeightField, f: &'a ScalarField) -> Self {
        let grid: &GridDomain = a.grid();
        Problem {
            grid,
            density: Density::new(params),
            a: a.values(),
            f: f.values(),
            strides: (0..grid.dim()).map(|d| grid.node_stride(d)).collect(),
        }
    }

    #[inline]
    fn cell_grad(&self, u: &[f64], c: usize, xi: &mut [f64]) -> f64 {
        let base = self.grid.cell_base_node(c);
        let inv_h = 1.0 / self.grid.spacing();
        let mut n2 = 0.0;
        for (d, x) in xi.iter_mut().enumerate() {
            *x = (u[base + self.strides[d]] - u[base]) * inv_h;
            n2 += *x * *x;
        }
        n2
    }

    /// Returns `(energy, sum of absolute term magnitudes)`.
    fn energy(&self, u: &[f64]) -> (f64, f64) {
        let n = self.grid.dim();
        let mut xi = vec![0.0; n];
        let (mut cells, mut cells_abs) = (0.0, 0.0);
        for c in self.grid.active_cells() {
            let n2 = self.cell_grad(u, c, &mut xi);
            let v = self.density.value(n2, self.a[c]);
            cells += v;
            cells_abs += v.abs();
        }
        let vol = self.grid.cell_volume();
        let (mut load, mut load_abs) = (0.0, 0.0);
        for i in 0..u.len() {
            let t = self.grid.node_weight(i) * self.f[i] * u[i];
            load += t;
            load_abs += t.abs();
        }
        (vol * cells - load, vol * cells_abs + load_abs)
    }

    /// Nodal energy gradient, zero off the interior.
    fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let n = self.grid.dim();
        let mut xi = vec![0.0; n];
        let mut flux = vec![0.0; n * self.grid.cell_count()];
        let vol = self.grid.cell_volume();
        for c in self.grid.active_cells() {
            let n2 = self.cell_grad(u, c, &mut xi);
            let phi = self.density.flux_factor(n2, self.a[c]) * vol;
            for d in 0..n {
                flux[c * n + d] = phi * xi[d];
            }
        }
        let mut g = self.grid.gradient_adjoint(&flux);
        for (i, gi) in g.iter_mut().enumerate() {
            if self.grid.is_interior(i) {
                *gi -= self.grid.node_weight(i) * self.f[i];
            } else {
                *gi = 0.0;
            }
        }
        g
    }

    /// Assembles the clipped Newton matrix on interior unknowns.
    /// Newton matrix, or the secant (Kacanov) matrix `phi * I` per cell.
    fn hessian(&self, u: &[f64], dofs: &DofMap, secant: bool) -> BandMatrix {
        let n = self.grid.dim();
        let h = self.grid.spacing();
        let scale = self.grid.cell_volume() / (h * h);
        let mut mat = BandMatrix::zeros(dofs.count, dofs.bandwidth);
        let mut xi = vec![0.0; n];
        let mut k = vec![0.0; n * n];
        let mut local = vec![usize::MAX; n + 1];
        for c in self.grid.active_cells() {
            let n2 = self.cell_grad(u, c, &mut xi);
            let (par, perp) = if secant {
                let phi = self.density.secant_eig(n2, self.a[c]);
                (phi, phi)
            } else {
                self.density.hessian_eigs(n2, self.a[c])
            };
            let norm = n2.sqrt();
            for r in 0..n {
                for s in 0..n {
                    let dir = if norm > 0.0 { xi[r] * xi[s] / n2 } else { 0.0 };
                    k[r * n + s] = scale * (if r == s { perp } else { 0.0 } + (par - perp) * dir);
                }
            }
            let base = self.grid.cell_base_node(c);
            local[0] = dofs.index[base];
            for d in 0..n {
                local[d + 1] = dofs.index[base + self.strides[d]];
            }
            // G_c = [-1 | I] / h, contribution G_c^T K G_c
            let mut ksum = 0.0;
            for r in 0..n {
                let mut row = 0.0;
                for s in 0..n {
                    row += k[r * n + s];
                }
                ksum += row;
                if local[0] != usize::MAX && local[r + 1] != usize::MAX {
                    mat.add(local[0], local[r + 1], -row);
                }
            }
            if local[0] != usize::MAX {
                mat.add(local[0], local[0], ksum);
            }
            for r in 0..n {
                if local[r + 1] == usize::MAX {
                    continue;
                }
                for s in 0..=r {
                    if local[s + 1] != usize::MAX {
                        mat.add(local[r + 1], local[s + 1], k[r * n + s]);
                    }
                }
            }
        }
        mat
    }
}

/// Numbering of interior nodes as unknowns.
struct DofMap {
    index: Vec<usize>,
    nodes: Vec<usize>,
    count: usize,
    bandwidth: usize,
}

impl DofMap {
    fn new(grid: &GridDomain) -> Self {
        let mut index = vec![usize::MAX; grid.node_count()];
        let mut nodes = Vec::with_capacity(grid.interior_count());
        for i in 0..grid.node_count() {
            if grid.is_interior(i) {
                index[i] = nodes.len();
                nodes.push(i);
            }
        }
        let mut bandwidth = 0;
        for c in grid.active_cells() {
            let ids: Vec<usize> = grid
                .cell_corners(c)
                .into_iter()
                .map(|i| index[i])
                .filter(|&k| k != usize::MAX)
                .collect();
            if let (Some(lo), Some(hi)) = (ids.iter().min(), ids.iter().max()) {
                bandwidth = bandwidth.max(hi - lo);
            }
        }
        DofMap { count: nodes.len(), index, nodes, bandwidth }
    }
}

fn sup_interior(grid: &GridDomain, g: &[f64]) -> f64 {
    g.iter().enumerate().filter(|(i, _)| grid.is_interior(*i)).fold(0.0, |m, (_, v)| m.max(v.abs()))
}

fn check_grids(u: &ScalarField, params: &SolveParams, a: &WeightField, f: &ScalarField) -> Result<()> {
    params.validate()?;
    let g = u.grid();
    if !Arc::ptr_eq(g, a.grid()) || !Arc::ptr_eq(g, f.grid()) {
        return Err(Error::Shape("u, a and f must live on the same grid".into()));
    }
    Ok(())
}

fn check_inputs(u: &ScalarField, params: &SolveParams, a: &WeightField, f: &ScalarField) -> Result<()> {
    check_grids(u, params, a, f)?;
    if !u.is_dirichlet() {
        return Err(Error::InvalidParameter("u must vanish off the interior nodes".into()));
    }
    Ok(())
}

/// Discrete energy. Boundary values are not required to vanish here.
pub fn energy(u: &ScalarField, params: &SolveParams, a: &WeightField, f: &ScalarField) -> Result<f64> {
    check_grids(u, params, a, f)?;
    Ok(Problem::new(params, a, f).energy(u.values()).0)
}

/// Nodal gradient `g` with `g . delta` the directional derivative along any Dirichlet `delta`.
pub fn energy_gradient(
    u: &ScalarField,
    params: &SolveParams,
    a: &WeightField,
    f: &ScalarField,
) -> Result<ScalarField> {
    check_inputs(u, params, a, f)?;
    ScalarField::from_values(u.grid(), Problem::new(params, a, f).gradient(u.values()))
}

/// `||grad phi_i||_{L^2}` for every node's indicator test function.
fn test_function_norms(grid: &GridDomain) -> Vec<f64> {
    let n = grid.dim();
    let mut sq = vec![0.0; grid.node_count()];
    let w = grid.cell_volume() / (grid.spacing() * grid.spacing());
    for c in grid.active_cells() {
        let base = grid.cell_base_node(c);
        sq[base] += n as f64 * w;
        for d in 0..n {
            sq[base + grid.node_stride(d)] += w;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `max_i |int F . grad phi_i - int f phi_i| / ||grad phi_i||_{L^2}` over interior nodes.
pub fn weak_residual(u: &ScalarField, params: &SolveParams, a: &WeightField, f: &ScalarField) -> Result<f64> {
    let g = energy_gradient(u, params, a, f)?;
    Ok(residual_from_gradient(u.grid(), g.values()))
}

fn residual_from_gradient(grid: &GridDomain, g: &[f64]) -> f64 {
    let norms = test_function_norms(grid);
    g.iter()
        .enumerate()
        .filter(|(i, _)| grid.is_interior(*i))
        .fold(0.0, |m, (i, v)| m.max(v.abs() / norms[i]))
}

/// Damped Newton (with a secant fallback) on the strictly convex energy,
/// starting from `init`.
///
/// Returns the last iterate with `converged = false` when `max_iter` is hit
/// or the line search stalls.
pub fn solve_fixed_p(
    params: &SolveParams,
    a: &WeightField,
    f: &ScalarField,
    init: &ScalarField,
) -> Result<SolveResult> {
    check_inputs(init, params, a, f)?;
    let grid: &GridDomain = init.grid();
    let problem = Problem::new(params, a, f);
    let dofs = DofMap::new(grid);

    let mut u = init.values().to_vec();
    let (mut e, mut e_abs) = problem.energy(&u);
    let tol = params.tol * (1.0 + e.abs());
    let mut energy_trace = vec![e];
    let mut g = problem.gradient(&u);
    let mut grad_sup = sup_interior(grid, &g);
    let mut iterations = 0;
    while grad_sup > tol && iterations < params.max_iter && dofs.count > 0 {
        // Far from the minimiser the secant step often beats Newton by
        // orders of magnitude for p < 2; near it Newton wins. Keep the lower.
        let mut best: Option<(f64, f64, f64, Vec<f64>)> = None;
        for secant in [false, true] {
            let factor = problem.hessian(&u, &dofs, secant).cholesky()?;
            let rhs: Vec<f64> = dofs.nodes.iter().map(|&i| -g[i]).collect();
            let step = factor.solve(&rhs);
            let cand = line_search(&problem, &dofs, &u, &g, &step, e, e_abs);
            best = match (best, cand) {
                (Some(b), Some(c)) if c.1 < b.1 => Some(c),
                (None, c) => c,
                (b, _) => b,
            };
        }
        let Some((_, e_new, e_new_abs, trial)) = best else {
            break;
        };
        u = trial;
        e = e_new;
        e_abs = e_new_abs;
        energy_trace.push(e);
        g = problem.gradient(&u);
        grad_sup = sup_interior(grid, &g);
        iterations += 1;
    }

    let residual = residual_from_gradient(grid, &g);
    Ok(SolveResult {
        u: ScalarField::from_values(init.grid(), u)?,
        iterations,
        energy: e,
        grad_sup,
        residual,
        converged: grad_sup <= tol,
        tol,
        energy_trace,
    })
}

/// Armijo backtracking along `step`; returns `(t, energy, |terms|, point)`.
fn line_search(
    problem: &Problem,
    dofs: &DofMap,
    u: &[f64],
    g: &[f64],
    step: &[f64],
    e: f64,
    e_abs: f64,
) -> Option<(f64, f64, f64, Vec<f64>)> {
    let slope: f64 = dofs.nodes.iter().zip(step).map(|(&i, s)| g[i] * s).sum();
    if !(slope < 0.0) {
        return None;
    }
    let mut trial = u.to_vec();
    let mut t = 1.0;
    for _ in 0..MAX_BACKTRACKS {
        for (&i, s) in dofs.nodes.iter().zip(step) {
            trial[i] = u[i] + t * s;
        }
        let (e_new, e_new_abs) = problem.energy(&trial);
        let noise = 64.0 * f64::EPSILON * (e_abs + e_new_abs);
        if e_new <= e + ARMIJO_C * t * slope + noise {
            return Some((t, e_new, e_new_abs, trial));
        }
        t *= 0.5;
    }
    None
}

/// `(|xi|^2 + eps^2)^{(p-2)/2} xi` for a single cell vector.
pub fn flux_vector(xi: &[f64], p: f64, epsilon: f64) -> Vec<f64> {
    let n2: f64 = xi.iter().map(|x| x * x).sum();
    let s = n2 + epsilon * epsilon;
    let phi = if n2 > 0.0 { s.powf(0.5 * (p - 2.0)) } else { 0.0 };
    xi.iter().map(|x| phi * x).collect()
}

/// Flux plus the weighted q-term `a |xi|^{q-2} xi` for a single cell vector.
pub fn total_flux_vector(xi: &[f64], params: &SolveParams, a: f64) -> Vec<f64> {
    let n2: f64 = xi.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return vec![0.0; xi.len()];
    }
    let phi = Density::new(params).flux_factor(n2, a);
    xi.iter().map(|x| phi * x).collect()
}

/// Regularised p-flux `(|Du|^2 + eps^2)^{(p-2)/2} Du` per cell.
pub fn flux(u: &ScalarField, p: f64, epsilon: f64) -> VectorField {
    let grad = u.gradient();
    let n = u.grid().dim();
    let comps = grad.components().chunks_exact(n).flat_map(|xi| flux_vector(xi, p, epsilon)).collect();
    VectorField::from_components(u.grid(), comps).expect("flux keeps the gradient layout")
}

/// `flux` plus `a |Du|^{q-2} Du`.
pub fn total_flux(u: &ScalarField, params: &SolveParams, a: &WeightField) -> VectorField {
    let grad = u.gradient();
    let n = u.grid().dim();
    let comps = grad
        .components()
        .chunks_exact(n)
        .zip(a.values())
        .flat_map(|(xi, &ac)| total_flux_vector(xi, params, ac))
        .collect();
    VectorField::from_components(u.grid(), comps).expect("flux keeps the gradient layout")
}
