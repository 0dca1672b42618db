//! Uniform Cartesian grids over an interval, a square/cube, or a masked disk.
//!
//! Unknowns live on nodes, gradients and quadrature live on cells. A cell is
//! indexed by its lower corner node; its gradient is the vector of forward
//! differences along each axis starting from that corner. The transpose of
//! this stencil is exposed as [`GridDomain::gradient_adjoint`], so discrete
//! integration by parts holds to rounding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest resolution accepted by [`GridDomain::new`].
pub const MIN_RESOLUTION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `(0,1)`, only for `dim = 1`.
    Interval,
    /// `(0,1)^n`.
    Square,
    /// Unit disk centred at the origin, realised on the square `(-1,1)^2`.
    Disk,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Interval => "interval",
            Shape::Square => "square",
            Shape::Disk => "disk",
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "interval" => Ok(Shape::Interval),
            "square" => Ok(Shape::Square),
            "disk" => Ok(Shape::Disk),
            other => Err(format!("unknown shape '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

#[derive(Debug, Clone)]
pub struct GridDomain {
    dim: usize,
    resolution: usize,
    spacing: f64,
    shape: Shape,
    origin: f64,
    side: f64,
    node_kind: Vec<NodeKind>,
    active_cell: Vec<bool>,
    /// Lumped nodal quadrature weight: `h^n / 2^n` per adjacent active cell.
    node_weight: Vec<f64>,
    cell_base: Vec<usize>,
    measure: f64,
    interior_count: usize,
}

impl GridDomain {
    /// Builds the grid. Interval requires `dim = 1`; disk requires `dim = 2`.
    pub fn new(dim: usize, resolution: usize, shape: Shape) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dim must be 1, 2 or 3, got {dim}")));
        }
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidGrid(format!(
                "resolution must be at least {MIN_RESOLUTION}, got {resolution}"
            )));
        }
        match (shape, dim) {
            (Shape::Interval, 1) | (Shape::Square, _) | (Shape::Disk, 2) => {}
            (Shape::Interval, _) => {
                return Err(Error::InvalidGrid("interval shape needs dim = 1".into()))
            }
            (Shape::Disk, _) => return Err(Error::InvalidGrid("disk shape needs dim = 2".into())),
        }
        let (origin, side) = match shape {
            Shape::Disk => (-1.0, 2.0),
            _ => (0.0, 1.0),
        };
        let spacing = side / resolution as f64;
        let mut grid = GridDomain {
            dim,
            resolution,
            spacing,
            shape,
            origin,
            side,
            node_kind: Vec::new(),
            active_cell: Vec::new(),
            node_weight: Vec::new(),
            cell_base: Vec::new(),
            measure: 0.0,
            interior_count: 0,
        };
        grid.classify();
        Ok(grid)
    }

    /// Convenience wrapper returning a shareable handle.
    pub fn shared(dim: usize, resolution: usize, shape: Shape) -> Result<Arc<Self>> {
        Self::new(dim, resolution, shape).map(Arc::new)
    }

    fn classify(&mut self) {
        let n_cells = self.cell_count();
        let n_nodes = self.node_count();
        let center = self.center();
        let radius = self.side / 2.0;
        self.cell_base = (0..n_cells).map(|c| self.node_index(&self.cell_multi(c))).collect();

        self.active_cell = (0..n_cells)
            .map(|c| match self.shape {
                Shape::Disk => {
                    let x = self.cell_center(c);
                    dist(&x, &center) < radius
                }
                _ => true,
            })
            .collect();

        let corner_w = self.cell_volume() / (1usize << self.dim) as f64;
        let mut adjacent_active = vec![0usize; n_nodes];
        let mut node_weight = vec![0.0; n_nodes];
        for c in 0..n_cells {
            if !self.active_cell[c] {
                continue;
            }
            for node in self.cell_corners(c) {
                adjacent_active[node] += 1;
                node_weight[node] += corner_w;
            }
        }

        let full = 1usize << self.dim;
        self.node_kind = (0..n_nodes)
            .map(|i| {
                let idx = self.node_multi(i);
                let on_frame = idx.iter().any(|&k| k == 0 || k == self.resolution);
                if !on_frame && adjacent_active[i] == full {
                    NodeKind::Interior
                } else if adjacent_active[i] > 0 {
                    NodeKind::Boundary
                } else {
                    NodeKind::Exterior
                }
            })
            .collect();
        self.node_weight = node_weight;
        self.interior_count = self.node_kind.iter().filter(|k| **k == NodeKind::Interior).count();
        let active = self.active_cell.iter().filter(|a| **a).count();
        self.measure = active as f64 * self.cell_volume();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Side length of the bounding box.
    pub fn side(&self) -> f64 {
        self.side
    }

    /// `|Omega|` realised as active cell count times `h^n`.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn diameter(&self) -> f64 {
        match self.shape {
            Shape::Disk => self.side,
            _ => self.side * (self.dim as f64).sqrt(),
        }
    }

    /// Radius of the largest ball centred at [`Self::center`] inside the domain.
    pub fn inradius(&self) -> f64 {
        self.side / 2.0
    }

    pub fn center(&self) -> Vec<f64> {
        vec![self.origin + self.side / 2.0; self.dim]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.resolution + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    pub fn interior_count(&self) -> usize {
        self.interior_count
    }

    pub fn node_kind(&self, node: usize) -> NodeKind {
        self.node_kind[node]
    }

    pub fn is_interior(&self, node: usize) -> bool {
        self.node_kind[node] == NodeKind::Interior
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.node_kind[node] == NodeKind::Boundary
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.node_kind.iter().map(|k| *k == NodeKind::Interior).collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        self.node_kind.iter().map(|k| *k == NodeKind::Boundary).collect()
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.active_cell[cell]
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cell_count()).filter(move |&c| self.active_cell[c])
    }

    pub fn node_weight(&self, node: usize) -> f64 {
        self.node_weight[node]
    }

    /// Flat stride of axis `d` in node indexing.
    pub fn node_stride(&self, d: usize) -> usize {
        self.nodes_per_axis().pow(d as u32)
    }

    pub fn node_multi(&self, node: usize) -> Vec<usize> {
        let m = self.nodes_per_axis();
        let mut rest = node;
        (0..self.dim)
            .map(|_| {
                let k = rest % m;
                rest /= m;
                k
            })
            .collect()
    }

    pub fn cell_multi(&self, cell: usize) -> Vec<usize> {
        let m = self.resolution;
        let mut rest = cell;
        (0..self.dim)
            .map(|_| {
                let k = rest % m;
                rest /= m;
                k
            })
            .collect()
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, &k| acc * self.resolution + k)
    }

    pub fn node_index(&self, multi: &[usize]) -> usize {
        let m = self.nodes_per_axis();
        multi.iter().rev().fold(0, |acc, &k| acc * m + k)
    }

    /// Lower-corner node of a cell.
    pub fn cell_base_node(&self, cell: usize) -> usize {
        self.cell_base[cell]
    }

    /// All `2^n` corner nodes of a cell.
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        let base = self.cell_base_node(cell);
        (0..1usize << self.dim)
            .map(|mask| {
                (0..self.dim)
                    .filter(|d| mask & (1 << d) != 0)
                    .map(|d| self.node_stride(d))
                    .sum::<usize>()
                    + base
            })
            .collect()
    }

    pub fn node_position(&self, node: usize) -> Vec<f64> {
        self.node_multi(node)
            .into_iter()
            .map(|k| self.origin + k as f64 * self.spacing)
            .collect()
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        self.cell_multi(cell)
            .into_iter()
            .map(|k| self.origin + (k as f64 + 0.5) * self.spacing)
            .collect()
    }

    /// Forward-difference gradient of nodal values, `dim` entries per cell.
    /// Inactive cells get zero.
    pub fn gradient_values(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.node_count());
        let n = self.dim;
        let inv_h = 1.0 / self.spacing;
        let strides: Vec<usize> = (0..n).map(|d| self.node_stride(d)).collect();
        let mut out = vec![0.0; n * self.cell_count()];
        for c in self.active_cells() {
            let base = self.cell_base_node(c);
            for d in 0..n {
                out[c * n + d] = (u[base + strides[d]] - u[base]) * inv_h;
            }
        }
        out
    }

    /// Exact transpose of [`Self::gradient_values`]: returns nodal values
    /// `G^T F` so that `<G u, F> = <u, G^T F>` in the plain Euclidean pairing.
    pub fn gradient_adjoint(&self, flux: &[f64]) -> Vec<f64> {
        let n = self.dim;
        assert_eq!(flux.len(), n * self.cell_count());
        let inv_h = 1.0 / self.spacing;
        let strides: Vec<usize> = (0..n).map(|d| self.node_stride(d)).collect();
        let mut out = vec![0.0; self.node_count()];
        for c in self.active_cells() {
            let base = self.cell_base_node(c);
            for d in 0..n {
                let v = flux[c * n + d] * inv_h;
                out[base + strides[d]] += v;
                out[base] -= v;
            }
        }
        out
    }

    /// Midpoint rule over active cells.
    pub fn integrate(&self, cell_values: &[f64]) -> f64 {
        assert_eq!(cell_values.len(), self.cell_count());
        let sum: f64 = self.active_cells().map(|c| cell_values[c]).sum();
        sum * self.cell_volume()
    }

    /// Averages nodal values onto cells (mean of the `2^n` corners).
    pub fn node_to_cell(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.node_count());
        let scale = 1.0 / (1usize << self.dim) as f64;
        (0..self.cell_count())
            .map(|c| {
                if self.active_cell[c] {
                    self.cell_corners(c).into_iter().map(|i| u[i]).sum::<f64>() * scale
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Lumped (trapezoidal) nodal quadrature of `u * v`.
    pub fn nodal_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.node_weight).map(|((a, b), w)| a * b * w).sum()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nodal function on a grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<GridDomain>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<GridDomain>) -> Self {
        ScalarField { grid: Arc::clone(grid), values: vec![0.0; grid.node_count()] }
    }

    pub fn from_values(grid: &Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::Shape(format!(
                "scalar field has {} values, grid has {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(ScalarField { grid: Arc::clone(grid), values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Arc<GridDomain>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|i| f(&grid.node_position(i))).collect();
        ScalarField { grid: Arc::clone(grid), values }
    }

    /// Samples `f` at interior nodes and sets every other node to zero.
    pub fn dirichlet_from_fn(grid: &Arc<GridDomain>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|i| if grid.is_interior(i) { f(&grid.node_position(i)) } else { 0.0 })
            .collect();
        ScalarField { grid: Arc::clone(grid), values }
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True when every non-interior node is zero.
    pub fn is_dirichlet(&self) -> bool {
        self.values.iter().enumerate().all(|(i, v)| self.grid.is_interior(i) || *v == 0.0)
    }

    /// Zeroes every non-interior node.
    pub fn enforce_dirichlet(&mut self) {
        for (i, v) in self.values.iter_mut().enumerate() {
            if !self.grid.is_interior(i) {
                *v = 0.0;
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
        }
    }

    /// Cell averages of the nodal values.
    pub fn cell_values(&self) -> Vec<f64> {
        self.grid.node_to_cell(&self.values)
    }

    pub fn gradient(&self) -> VectorField {
        gradient(self)
    }
}

/// Cell-wise vector field with `dim` components per cell.
#[derive(Debug, Clone)]
pub struct VectorField {
    grid: Arc<GridDomain>,
    components: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<GridDomain>) -> Self {
        VectorField { grid: Arc::clone(grid), components: vec![0.0; grid.dim() * grid.cell_count()] }
    }

    pub fn from_components(grid: &Arc<GridDomain>, components: Vec<f64>) -> Result<Self> {
        if components.len() != grid.dim() * grid.cell_count() {
            return Err(Error::Shape(format!(
                "vector field has {} components, expected {}",
                components.len(),
                grid.dim() * grid.cell_count()
            )));
        }
        Ok(VectorField { grid: Arc::clone(grid), components })
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn cell(&self, c: usize) -> &[f64] {
        let n = self.grid.dim();
        &self.components[c * n..(c + 1) * n]
    }

    /// Euclidean magnitude per cell.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.components
            .chunks_exact(self.grid.dim())
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    /// Largest magnitude over active cells.
    pub fn sup_norm(&self) -> f64 {
        let mags = self.magnitudes();
        self.grid.active_cells().fold(0.0, |m, c| m.max(mags[c]))
    }

    /// Cell-wise dot product.
    pub fn dot(&self, other: &VectorField) -> Vec<f64> {
        let n = self.grid.dim();
        self.components
            .chunks_exact(n)
            .zip(other.components.chunks_exact(n))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// `self - other`.
    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: Arc::clone(&self.grid),
            components: self.components.iter().zip(&other.components).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> VectorField {
        VectorField {
            grid: Arc::clone(&self.grid),
            components: self.components.iter().map(|v| v * s).collect(),
        }
    }
}

/// Forward-difference gradient of a nodal field.
pub fn gradient(u: &ScalarField) -> VectorField {
    VectorField { grid: Arc::clone(&u.grid), components: u.grid.gradient_values(&u.values) }
}

/// Nodal field `G^T F`.
pub fn gradient_adjoint(f: &VectorField) -> ScalarField {
    ScalarField { grid: Arc::clone(&f.grid), values: f.grid.gradient_adjoint(&f.components) }
}
