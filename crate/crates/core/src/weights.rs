//! The weight `a(x)` of the q-phase: presets, Lipschitz and Muckenhoupt
//! estimates, and the (H0) hypothesis check.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridDomain;

/// Default relative floor applied to zero cells inside the A_q estimator.
pub const DEFAULT_AQ_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum WeightPreset {
    /// `a = c`.
    Constant { c: f64 },
    /// `a = c * |x - center|^2`.
    Parabola { c: f64 },
    /// `a = min(c, k * max(0, |x - center| - r0))`.
    Ring { c: f64, k: f64, r0: f64 },
}

impl WeightPreset {
    pub fn name(&self) -> &'static str {
        match self {
            WeightPreset::Constant { .. } => "constant",
            WeightPreset::Parabola { .. } => "parabola",
            WeightPreset::Ring { .. } => "ring",
        }
    }

    /// Closed-form value at a point.
    pub fn eval(&self, x: &[f64], center: &[f64]) -> f64 {
        let r = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        match *self {
            WeightPreset::Constant { c } => c,
            WeightPreset::Parabola { c } => c * r * r,
            WeightPreset::Ring { c, k, r0 } => c.min(k * (r - r0).max(0.0)),
        }
    }

    /// Lipschitz constant of the formula over a domain of the given inradius.
    pub fn analytic_lipschitz(&self, max_radius: f64) -> f64 {
        match *self {
            WeightPreset::Constant { .. } => 0.0,
            WeightPreset::Parabola { c } => 2.0 * c.abs() * max_radius,
            WeightPreset::Ring { c, k, r0 } => {
                if c <= 0.0 || max_radius <= r0 {
                    0.0
                } else {
                    k
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidWeight(m.to_string()));
        match *self {
            WeightPreset::Constant { c } | WeightPreset::Parabola { c } if !(c >= 0.0 && c.is_finite()) => {
                bad("scale c must be finite and non-negative")
            }
            WeightPreset::Ring { c, k, r0 }
                if !(c >= 0.0 && k >= 0.0 && r0 >= 0.0 && (c + k + r0).is_finite()) =>
            {
                bad("ring parameters c, k, r0 must be finite and non-negative")
            }
            _ => Ok(()),
        }
    }
}

/// `a(x)` sampled at cell centres plus its analysis metadata.
#[derive(Debug, Clone)]
pub struct WeightField {
    grid: Arc<GridDomain>,
    values: Vec<f64>,
    lipschitz_estimate: f64,
    boundary_min: f64,
    preset_name: String,
}

impl WeightField {
    /// Builds from raw cell values without validating the boundary condition.
    pub fn from_values(grid: &Arc<GridDomain>, values: Vec<f64>, name: &str) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::Shape(format!(
                "weight has {} values, grid has {} cells",
                values.len(),
                grid.cell_count()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidWeight(format!("weight values must be finite and >= 0, got {v}")));
        }
        let lipschitz_estimate = lipschitz(grid, &values);
        let boundary_min = boundary_min(grid, &values);
        Ok(WeightField {
            grid: Arc::clone(grid),
            values,
            lipschitz_estimate,
            boundary_min,
            preset_name: name.to_string(),
        })
    }

    /// `a = c` everywhere; `c = 0` is accepted here.
    pub fn uniform(grid: &Arc<GridDomain>, c: f64) -> Result<Self> {
        Self::from_values(grid, vec![c; grid.cell_count()], "constant")
    }

    /// Samples a preset without rejecting a vanishing boundary.
    pub fn from_preset(preset: &WeightPreset, grid: &Arc<GridDomain>) -> Result<Self> {
        preset.validate()?;
        let center = grid.center();
        let values = (0..grid.cell_count())
            .map(|c| if grid.is_active(c) { preset.eval(&grid.cell_center(c), &center) } else { 0.0 })
            .collect();
        Self::from_values(grid, values, preset.name())
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz_estimate
    }

    pub fn boundary_min(&self) -> f64 {
        self.boundary_min
    }

    pub fn preset_name(&self) -> &str {
        &self.preset_name
    }

    pub fn max(&self) -> f64 {
        self.grid.active_cells().fold(0.0, |m, c| m.max(self.values[c]))
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        let values = self.values.iter().map(|v| v * s).collect();
        Self::from_values(&self.grid, values, &self.preset_name)
    }
}

/// Samples a preset on the grid; rejects weights that vanish next to the boundary.
pub fn make_weight(preset: &WeightPreset, grid: &Arc<GridDomain>) -> Result<WeightField> {
    let w = WeightField::from_preset(preset, grid)?;
    if w.boundary_min <= 0.0 {
        return Err(Error::InvalidWeight(format!(
            "{} weight vanishes on cells adjacent to the boundary",
            preset.name()
        )));
    }
    Ok(w)
}

/// Largest discrete gradient: per cell and axis the steeper of the two
/// neighbour differences over h, combined in the Euclidean norm.
fn lipschitz(grid: &GridDomain, values: &[f64]) -> f64 {
    let h = grid.spacing();
    let res = grid.resolution();
    let mut best = 0.0f64;
    for c in grid.active_cells() {
        let idx = grid.cell_multi(c);
        let mut sq = 0.0;
        for d in 0..grid.dim() {
            let mut steep = 0.0f64;
            for fwd in [true, false] {
                if (fwd && idx[d] + 1 >= res) || (!fwd && idx[d] == 0) {
                    continue;
                }
                let mut nb = idx.clone();
                if fwd {
                    nb[d] += 1;
                } else {
                    nb[d] -= 1;
                }
                let other = grid.cell_index(&nb);
                if grid.is_active(other) {
                    steep = steep.max((values[other] - values[c]).abs() / h);
                }
            }
            sq += steep * steep;
        }
        best = best.max(sq.sqrt());
    }
    best
}

fn boundary_min(grid: &GridDomain, values: &[f64]) -> f64 {
    grid.active_cells()
        .filter(|&c| grid.cell_corners(c).into_iter().any(|i| grid.is_boundary(i)))
        .map(|c| values[c])
        .fold(f64::INFINITY, f64::min)
}

/// Which cubes enter the A_q supremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeFamily {
    /// Every grid-aligned cube of active cells, any position and side.
    All,
    /// Dyadic cubes of side `side * 2^-j` on the aligned dyadic lattice.
    Dyadic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AqOptions {
    /// Cells with `a < floor_rel * max(a)` are raised to that level.
    pub floor_rel: f64,
    pub family: CubeFamily,
}

impl Default for AqOptions {
    fn default() -> Self {
        AqOptions { floor_rel: DEFAULT_AQ_FLOOR, family: CubeFamily::All }
    }
}

/// Muckenhoupt A_q characteristic over all grid-aligned cubes with default flooring.
pub fn aq_constant(a: &WeightField, q: f64) -> f64 {
    aq_constant_with(a, q, &AqOptions::default())
}

/// `sup_Q (avg_Q a) (avg_Q a^{-1/(q-1)})^{q-1}`; `+inf` if the dual average overflows.
pub fn aq_constant_with(a: &WeightField, q: f64, opts: &AqOptions) -> f64 {
    assert!(q > 1.0, "A_q needs q > 1");
    let grid = &a.grid;
    let top = a.max();
    if !(top > 0.0) {
        return f64::INFINITY;
    }
    let dual_exp = -1.0 / (q - 1.0);
    let mut primal = vec![0.0; grid.cell_count()];
    let mut dual = vec![0.0; grid.cell_count()];
    // A_q is scale invariant; working with a / max(a) keeps constant weights exact
    for c in grid.active_cells() {
        let v = (a.values[c] / top).max(opts.floor_rel);
        primal[c] = v;
        dual[c] = v.powf(dual_exp);
    }
    if grid.active_cells().any(|c| !dual[c].is_finite()) {
        return f64::INFINITY;
    }
    let best = match opts.family {
        CubeFamily::All => all_cubes_sup(grid, &primal, &dual, q),
        CubeFamily::Dyadic => dyadic_sup(grid, &primal, &dual, q),
    };
    if best.is_finite() {
        best
    } else {
        f64::INFINITY
    }
}

fn cube_product(sum_a: f64, sum_w: f64, count: f64, q: f64) -> f64 {
    (sum_a / count) * (sum_w / count).powf(q - 1.0)
}

fn all_cubes_sup(grid: &GridDomain, primal: &[f64], dual: &[f64], q: f64) -> f64 {
    let n = grid.dim();
    let res = grid.resolution();
    (0..grid.cell_count())
        .into_par_iter()
        .filter(|&c| grid.is_active(c))
        .map(|anchor| {
            let base = grid.cell_multi(anchor);
            let max_side = base.iter().map(|&k| res - k).min().unwrap_or(0);
            let (mut sum_a, mut sum_w) = (0.0, 0.0);
            let mut best = 0.0f64;
            let mut offset = vec![0usize; n];
            let mut idx = vec![0usize; n];
            'grow: for m in 0..max_side {
                // add the shell of offsets with max coordinate == m
                let mut inner = vec![0usize; n];
                loop {
                    let on_shell = inner.contains(&m);
                    if on_shell {
                        offset.copy_from_slice(&inner);
                        for d in 0..n {
                            idx[d] = base[d] + offset[d];
                        }
                        let c = grid.cell_index(&idx);
                        if !grid.is_active(c) {
                            break 'grow;
                        }
                        sum_a += primal[c];
                        sum_w += dual[c];
                    }
                    // odometer over [0, m]^n
                    let mut d = 0;
                    loop {
                        if d == n {
                            break;
                        }
                        if inner[d] < m {
                            inner[d] += 1;
                            break;
                        }
                        inner[d] = 0;
                        d += 1;
                    }
                    if d == n {
                        break;
                    }
                }
                let count = ((m + 1) as f64).powi(n as i32);
                best = best.max(cube_product(sum_a, sum_w, count, q));
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

fn dyadic_sup(grid: &GridDomain, primal: &[f64], dual: &[f64], q: f64) -> f64 {
    let n = grid.dim();
    let res = grid.resolution();
    let mut best = 0.0f64;
    let mut side = res;
    loop {
        let blocks = res / side;
        let block_count = blocks.pow(n as u32);
        for b in 0..block_count {
            let mut rest = b;
            let corner: Vec<usize> = (0..n)
                .map(|_| {
                    let k = rest % blocks;
                    rest /= blocks;
                    k * side
                })
                .collect();
            let (mut sum_a, mut sum_w, mut count) = (0.0, 0.0, 0usize);
            let mut complete = true;
            for o in 0..side.pow(n as u32) {
                let mut r = o;
                let idx: Vec<usize> = corner
                    .iter()
                    .map(|&k| {
                        let off = r % side;
                        r /= side;
                        k + off
                    })
                    .collect();
                let c = grid.cell_index(&idx);
                if !grid.is_active(c) {
                    complete = false;
                    break;
                }
                sum_a += primal[c];
                sum_w += dual[c];
                count += 1;
            }
            if complete && count > 0 {
                best = best.max(cube_product(sum_a, sum_w, count as f64, q));
            }
        }
        if side == 1 || !side.is_multiple_of(2) {
            break;
        }
        side /= 2;
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

/// Outcome of the (H0) check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H0Report {
    pub lipschitz_estimate: f64,
    pub aq_constant: f64,
    pub aq_floor_rel: f64,
    pub boundary_min: f64,
    /// `q / p_min < 1 + 1/n` and `q < n`.
    pub exponent_ratio_ok: bool,
    pub ratio_bound_ok: bool,
    pub q_below_dim: bool,
    pub verdict: Verdict,
}

impl H0Report {
    /// True when only the exponent conditions fail; the weight itself is admissible.
    pub fn weight_ok(&self) -> bool {
        self.boundary_min > 0.0 && self.aq_constant.is_finite()
    }
}

/// Checks `a` Lipschitz, `a` in A_q, `a != 0` on the boundary, `1 < p < q < n`, `q/p < 1 + 1/n`.
pub fn check_h0(a: &WeightField, n: usize, q: f64, p_min: f64) -> Result<H0Report> {
    if !(p_min > 1.0 && q > p_min) {
        return Err(Error::InvalidParameter(format!("need 1 < p_min < q, got p_min = {p_min}, q = {q}")));
    }
    let nf = n as f64;
    let aq = aq_constant(a, q);
    let ratio_bound_ok = q / p_min < 1.0 + 1.0 / nf;
    let q_below_dim = q < nf;
    let boundary_min = a.boundary_min();
    let weight_ok = boundary_min > 0.0 && aq.is_finite();
    let verdict = if weight_ok && ratio_bound_ok && q_below_dim {
        Verdict::Pass
    } else if weight_ok && ratio_bound_ok {
        Verdict::Warn
    } else {
        Verdict::Fail
    };
    Ok(H0Report {
        lipschitz_estimate: a.lipschitz_estimate(),
        aq_constant: aq,
        aq_floor_rel: DEFAULT_AQ_FLOOR,
        boundary_min,
        exponent_ratio_ok: ratio_bound_ok && q_below_dim,
        ratio_bound_ok,
        q_below_dim,
        verdict,
    })
}
