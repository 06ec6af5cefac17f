//! Q1 finite elements on the fine mesh.
//!
//! Fine nodes are numbered row-major, `node = ny·(n+1) + nx`, and local cell
//! corners are ordered lower-left, lower-right, upper-left, upper-right.
//! Dirichlet nodes are eliminated, so every vector and matrix in this module
//! lives on the free nodes.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryKind, ElementId, MeshHierarchy};
use crate::rng;
use crate::solver;
use crate::sparse::ComplexSparseMatrix;

/// Marker in the free-index map for nodes outside the free set.
pub const NOT_FREE: usize = usize::MAX;

/// Unit-square Q1 stiffness (independent of the cell size in 2D).
pub const STIFFNESS_REF: [[f64; 4]; 4] = [
    [2.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, -1.0 / 3.0],
    [-1.0 / 6.0, 2.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 6.0, -1.0 / 3.0, 2.0 / 3.0, -1.0 / 6.0],
    [-1.0 / 3.0, -1.0 / 6.0, -1.0 / 6.0, 2.0 / 3.0],
];

/// Unit-square Q1 mass; scale by `h²`.
pub const MASS_REF: [[f64; 4]; 4] = [
    [1.0 / 9.0, 1.0 / 18.0, 1.0 / 18.0, 1.0 / 36.0],
    [1.0 / 18.0, 1.0 / 9.0, 1.0 / 36.0, 1.0 / 18.0],
    [1.0 / 18.0, 1.0 / 36.0, 1.0 / 9.0, 1.0 / 18.0],
    [1.0 / 36.0, 1.0 / 18.0, 1.0 / 18.0, 1.0 / 9.0],
];

/// 1D edge mass on a unit edge; scale by `h`.
pub const EDGE_MASS_REF: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];

/// Local corners on each cell side (bottom, right, top, left).
pub const SIDE_CORNERS: [[usize; 2]; 4] = [[0, 1], [1, 3], [2, 3], [0, 2]];

/// Q1 nodal space on the fine mesh with boundary conditions applied.
#[derive(Debug, Clone)]
pub struct FineSpace {
    mesh: Arc<MeshHierarchy>,
    n: usize,
    h: f64,
    free_index: Vec<usize>,
    free_nodes: Vec<usize>,
    robin: Vec<u8>,
}

impl FineSpace {
    pub fn new(mesh: Arc<MeshHierarchy>) -> Self {
        let n = mesh.fine_cells_per_side();
        let h = mesh.fine_mesh_size();
        let np = n + 1;
        let mut in_domain = vec![false; np * np];
        let mut dirichlet = vec![false; np * np];
        let mut robin = vec![0u8; n * n];
        for cy in 0..n {
            for cx in 0..n {
                if !mesh.is_fine_cell_active(cx, cy) {
                    continue;
                }
                let corners = cell_nodes_of(n, cx, cy);
                for &c in &corners {
                    in_domain[c] = true;
                }
                for (side, sc) in SIDE_CORNERS.iter().enumerate() {
                    match mesh.fine_edge_kind(cx, cy, side) {
                        Some(BoundaryKind::Dirichlet) => {
                            dirichlet[corners[sc[0]]] = true;
                            dirichlet[corners[sc[1]]] = true;
                        }
                        Some(BoundaryKind::Robin) => robin[cy * n + cx] |= 1 << side,
                        _ => {}
                    }
                }
            }
        }
        let mut free_index = vec![NOT_FREE; np * np];
        let mut free_nodes = Vec::new();
        for node in 0..np * np {
            if in_domain[node] && !dirichlet[node] {
                free_index[node] = free_nodes.len();
                free_nodes.push(node);
            }
        }
        Self {
            mesh,
            n,
            h,
            free_index,
            free_nodes,
            robin,
        }
    }

    pub fn mesh(&self) -> &MeshHierarchy {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<MeshHierarchy> {
        &self.mesh
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn num_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn node_id(&self, nx: usize, ny: usize) -> usize {
        ny * (self.n + 1) + nx
    }

    pub fn node_grid(&self, node: usize) -> (usize, usize) {
        (node % (self.n + 1), node / (self.n + 1))
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let (nx, ny) = self.node_grid(node);
        (nx as f64 * self.h, ny as f64 * self.h)
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        let i = self.free_index[node];
        (i != NOT_FREE).then_some(i)
    }

    /// Free index for every node, `NOT_FREE` elsewhere.
    pub fn free_index_map(&self) -> &[usize] {
        &self.free_index
    }

    /// Global node ids of the free nodes, in free-index order.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn cell_nodes(&self, cx: usize, cy: usize) -> [usize; 4] {
        cell_nodes_of(self.n, cx, cy)
    }

    pub fn is_cell_active(&self, cx: usize, cy: usize) -> bool {
        self.mesh.is_fine_cell_active(cx, cy)
    }

    /// Bitmask of Robin sides of a cell (bit `s` for side `s`).
    pub fn robin_sides(&self, cx: usize, cy: usize) -> u8 {
        self.robin[cy * self.n + cx]
    }

    /// Nodal interpolant on the free nodes.
    pub fn interpolate<F: Fn(f64, f64) -> C64>(&self, f: F) -> Vec<C64> {
        self.free_nodes
            .iter()
            .map(|&node| {
                let (x, y) = self.node_coords(node);
                f(x, y)
            })
            .collect()
    }

    /// Extends a free-node vector by zero to all nodes.
    pub fn extend(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.num_nodes()];
        for (&node, &x) in self.free_nodes.iter().zip(v) {
            out[node] = x;
        }
        out
    }

    pub fn check_len(&self, v: &[C64]) -> Result<()> {
        if v.len() != self.num_free() {
            return Err(Error::DimensionMismatch {
                expected: self.num_free(),
                actual: v.len(),
            });
        }
        Ok(())
    }
}

fn cell_nodes_of(n: usize, cx: usize, cy: usize) -> [usize; 4] {
    let np = n + 1;
    let ll = cy * np + cx;
    [ll, ll + 1, ll + np, ll + np + 1]
}

/// Piecewise-constant diffusion coefficient on the fine cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    n: usize,
    values: Vec<f64>,
    gamma: f64,
    gamma_prime: f64,
}

impl CoefficientField {
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::from_values(n, vec![value; n * n])
    }

    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidCoefficient(format!(
                "expected {} cell values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidCoefficient(format!("value {v} is not positive and finite")));
        }
        let gamma = values.iter().copied().fold(f64::INFINITY, f64::min);
        let gamma_prime = values.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            n,
            values,
            gamma,
            gamma_prime,
        })
    }

    /// Square inclusions `ε(j + [0.25, 0.75]²)`, one per `ε`-cell, each with
    /// an independent uniform value in `[lo, hi]`; the background is 1.
    pub fn inclusions(n: usize, epsilon: f64, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidCoefficient(format!("invalid value range [{lo}, {hi}]")));
        }
        let per_eps = epsilon * n as f64;
        let cells_per_eps = per_eps.round() as usize;
        if !(epsilon > 0.0) || (per_eps - cells_per_eps as f64).abs() > 1e-9 || cells_per_eps % 4 != 0 || cells_per_eps == 0 {
            return Err(Error::InvalidCoefficient(format!(
                "inclusion scale {epsilon} is not resolved by {n} fine cells per side (need eps/4 to be a multiple of h)"
            )));
        }
        let blocks = n / cells_per_eps;
        let q = cells_per_eps / 4;
        let mut r = rng::seeded(seed);
        let mut values = vec![1.0; n * n];
        for jy in 0..blocks {
            for jx in 0..blocks {
                let a: f64 = r.random_range(lo..=hi);
                for cy in jy * cells_per_eps + q..jy * cells_per_eps + 3 * q {
                    for cx in jx * cells_per_eps + q..jx * cells_per_eps + 3 * q {
                        values[cy * n + cx] = a;
                    }
                }
            }
        }
        // compatibility with the Robin condition
        for k in 0..n {
            for (cx, cy) in [(k, 0), (k, n - 1), (0, k), (n - 1, k)] {
                values[cy * n + cx] = 1.0;
            }
        }
        Self::from_values(n, values)
    }

    pub fn value(&self, cx: usize, cy: usize) -> f64 {
        self.values[cy * self.n + cx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.gamma, self.gamma_prime)
    }

    pub fn is_constant(&self) -> bool {
        self.gamma == self.gamma_prime
    }
}

/// Assembled operators on the free nodes.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub kappa: f64,
    /// Stiffness with the coefficient.
    pub k: ComplexSparseMatrix,
    /// Stiffness with unit coefficient.
    pub k1: ComplexSparseMatrix,
    pub m: ComplexSparseMatrix,
    /// Robin boundary mass.
    pub b: ComplexSparseMatrix,
    /// `K − κ²M − iκB`.
    pub aop: ComplexSparseMatrix,
}

pub fn assemble_operators(space: &FineSpace, kappa: f64, coefficient: &CoefficientField) -> Result<OperatorSet> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!("wave number {kappa} must be finite and non-negative")));
    }
    if coefficient.cells_per_side() != space.cells_per_side() {
        return Err(Error::InvalidCoefficient(format!(
            "coefficient has {} cells per side, mesh has {}",
            coefficient.cells_per_side(),
            space.cells_per_side()
        )));
    }
    let n = space.cells_per_side();
    let h = space.h();
    let fi = space.free_index_map();
    let (mut tk, mut tk1, mut tm, mut tb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for cy in 0..n {
        for cx in 0..n {
            if !space.is_cell_active(cx, cy) {
                continue;
            }
            let nodes = space.cell_nodes(cx, cy);
            let a = coefficient.value(cx, cy);
            for (i, &ni) in nodes.iter().enumerate() {
                let gi = fi[ni];
                if gi == NOT_FREE {
                    continue;
                }
                for (j, &nj) in nodes.iter().enumerate() {
                    let gj = fi[nj];
                    if gj == NOT_FREE {
                        continue;
                    }
                    tk.push((gi, gj, a * STIFFNESS_REF[i][j]));
                    tk1.push((gi, gj, STIFFNESS_REF[i][j]));
                    tm.push((gi, gj, h * h * MASS_REF[i][j]));
                }
            }
            let sides = space.robin_sides(cx, cy);
            for (s, sc) in SIDE_CORNERS.iter().enumerate() {
                if sides & (1 << s) == 0 {
                    continue;
                }
                for (a_, &ca) in sc.iter().enumerate() {
                    for (b_, &cb) in sc.iter().enumerate() {
                        let (gi, gj) = (fi[nodes[ca]], fi[nodes[cb]]);
                        if gi != NOT_FREE && gj != NOT_FREE {
                            tb.push((gi, gj, h * EDGE_MASS_REF[a_][b_]));
                        }
                    }
                }
            }
        }
    }
    let nf = space.num_free();
    let k = ComplexSparseMatrix::from_real_triplets(nf, nf, tk);
    let k1 = ComplexSparseMatrix::from_real_triplets(nf, nf, tk1);
    let m = ComplexSparseMatrix::from_real_triplets(nf, nf, tm);
    let b = ComplexSparseMatrix::from_real_triplets(nf, nf, tb);
    let aop = ComplexSparseMatrix::linear_combination(&[
        (C64::new(1.0, 0.0), &k),
        (C64::new(-kappa * kappa, 0.0), &m),
        (C64::new(0.0, -kappa), &b),
    ]);
    Ok(OperatorSet { kappa, k, k1, m, b, aop })
}

/// Fine space, wave number, coefficient and the assembled operators.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub space: Arc<FineSpace>,
    pub coefficient: CoefficientField,
    pub ops: OperatorSet,
}

impl Discretization {
    pub fn new(space: Arc<FineSpace>, kappa: f64, coefficient: CoefficientField) -> Result<Self> {
        let ops = assemble_operators(&space, kappa, &coefficient)?;
        Ok(Self {
            space,
            coefficient,
            ops,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.ops.kappa
    }

    pub fn mesh(&self) -> &MeshHierarchy {
        self.space.mesh()
    }

    /// Local matrix of `a` on one fine cell, Robin sides included.
    pub fn cell_matrix(&self, cx: usize, cy: usize) -> [[C64; 4]; 4] {
        let h = self.space.h();
        let kappa = self.ops.kappa;
        let a = self.coefficient.value(cx, cy);
        let mut out = [[C64::new(0.0, 0.0); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = C64::new(a * STIFFNESS_REF[i][j] - kappa * kappa * h * h * MASS_REF[i][j], 0.0);
            }
        }
        let sides = self.space.robin_sides(cx, cy);
        for (s, sc) in SIDE_CORNERS.iter().enumerate() {
            if sides & (1 << s) != 0 {
                for a_ in 0..2 {
                    for b_ in 0..2 {
                        out[sc[a_]][sc[b_]] -= C64::new(0.0, kappa * h * EDGE_MASS_REF[a_][b_]);
                    }
                }
            }
        }
        out
    }

    /// Matrix of `a_T` on the free nodes (zero outside the nodes of `T`).
    pub fn restricted_form(&self, t: ElementId) -> Result<ComplexSparseMatrix> {
        if !self.mesh().is_active(t) {
            return Err(if self.mesh().in_grid(t) {
                Error::InactiveElement(t)
            } else {
                Error::OutOfGrid(t)
            });
        }
        let fi = self.space.free_index_map();
        let (xr, yr) = self.mesh().fine_cells_of(t);
        let mut trip = Vec::new();
        for cy in yr {
            for cx in xr.clone() {
                let nodes = self.space.cell_nodes(cx, cy);
                let cm = self.cell_matrix(cx, cy);
                for i in 0..4 {
                    for j in 0..4 {
                        let (gi, gj) = (fi[nodes[i]], fi[nodes[j]]);
                        if gi != NOT_FREE && gj != NOT_FREE {
                            trip.push((gi, gj, cm[i][j]));
                        }
                    }
                }
            }
        }
        let nf = self.space.num_free();
        Ok(ComplexSparseMatrix::from_triplets(nf, nf, trip))
    }

    /// `A_T v` for `v` given by its values on the `(r+1)²` fine nodes of `T`
    /// (row-major), returned as `(free index, value)` pairs in ascending order.
    pub fn apply_restricted(&self, t: ElementId, nodal: &[C64]) -> Vec<(usize, C64)> {
        let r = self.mesh().refinement_ratio(t.level);
        debug_assert_eq!(nodal.len(), (r + 1) * (r + 1));
        let fi = self.space.free_index_map();
        let (xr, yr) = self.mesh().fine_cells_of(t);
        let (x0, y0) = (xr.start, yr.start);
        let mut acc = vec![C64::new(0.0, 0.0); (r + 1) * (r + 1)];
        for cy in yr {
            for cx in xr.clone() {
                let (lx, ly) = (cx - x0, cy - y0);
                let loc = [ly * (r + 1) + lx, ly * (r + 1) + lx + 1, (ly + 1) * (r + 1) + lx, (ly + 1) * (r + 1) + lx + 1];
                let vals = loc.map(|k| nodal[k]);
                if vals.iter().all(|v| *v == C64::new(0.0, 0.0)) {
                    continue;
                }
                let cm = self.cell_matrix(cx, cy);
                for i in 0..4 {
                    acc[loc[i]] += (0..4).map(|j| cm[i][j] * vals[j]).sum::<C64>();
                }
            }
        }
        let mut out = Vec::new();
        for ly in 0..=r {
            for lx in 0..=r {
                let g = fi[self.space.node_id(x0 + lx, y0 + ly)];
                let v = acc[ly * (r + 1) + lx];
                if g != NOT_FREE && v != C64::new(0.0, 0.0) {
                    out.push((g, v));
                }
            }
        }
        out
    }

    /// Values of a free-node vector at the `(r+1)²` fine nodes of `T`.
    pub fn element_nodal_values(&self, t: ElementId, v: &[C64]) -> Vec<C64> {
        let r = self.mesh().refinement_ratio(t.level);
        let fi = self.space.free_index_map();
        let (xr, yr) = self.mesh().fine_cells_of(t);
        let mut out = Vec::with_capacity((r + 1) * (r + 1));
        for ny in yr.start..=yr.end {
            for nx in xr.start..=xr.end {
                let g = fi[self.space.node_id(nx, ny)];
                out.push(if g == NOT_FREE { C64::new(0.0, 0.0) } else { v[g] });
            }
        }
        out
    }

    pub fn load_vector(&self, source: &Source) -> Result<Vec<C64>> {
        load_vector(&self.space, source)
    }

    pub fn v_norm(&self, v: &[C64], weighted: bool) -> f64 {
        v_norm(v, &self.ops, weighted)
    }
}

/// Right-hand side descriptors.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Zero,
    Constant(f64),
    /// `sin(πx₁) cos(πx₂)`.
    SinCos,
    /// `amplitude · exp(−1/(1 − |x − x₀|²/r²))` inside the disk of radius `r`.
    Bump {
        radius: f64,
        center: (f64, f64),
        amplitude: f64,
    },
    /// One value per fine cell, row-major.
    Cells(Vec<f64>),
}

impl Source {
    pub fn validate(&self, cells_per_side: usize) -> Result<()> {
        match self {
            Source::Bump { radius, amplitude, center } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidSource(format!("bump radius {radius} must be positive")));
                }
                if !amplitude.is_finite() || !center.0.is_finite() || !center.1.is_finite() {
                    return Err(Error::InvalidSource("bump parameters must be finite".into()));
                }
            }
            Source::Cells(v) if v.len() != cells_per_side * cells_per_side => {
                return Err(Error::InvalidSource(format!(
                    "expected {} cell values, got {}",
                    cells_per_side * cells_per_side,
                    v.len()
                )));
            }
            Source::Constant(c) if !c.is_finite() => {
                return Err(Error::InvalidSource("constant must be finite".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn eval(&self, x: f64, y: f64, cell: usize) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::Constant(c) => *c,
            Source::SinCos => (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).cos(),
            Source::Bump {
                radius,
                center,
                amplitude,
            } => {
                let s2 = ((x - center.0).powi(2) + (y - center.1).powi(2)) / (radius * radius);
                if s2 < 1.0 {
                    amplitude * (-1.0 / (1.0 - s2)).exp()
                } else {
                    0.0
                }
            }
            Source::Cells(v) => v[cell],
        }
    }
}

/// Three-point Gauss rule on `[0, 1]`.
const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// `(f, φ_i)` for all free nodes by 3×3 Gauss quadrature per cell.
pub fn load_vector(space: &FineSpace, source: &Source) -> Result<Vec<C64>> {
    let n = space.cells_per_side();
    source.validate(n)?;
    let h = space.h();
    let fi = space.free_index_map();
    let mut out = vec![C64::new(0.0, 0.0); space.num_free()];
    if matches!(source, Source::Zero) {
        return Ok(out);
    }
    for cy in 0..n {
        for cx in 0..n {
            if !space.is_cell_active(cx, cy) {
                continue;
            }
            let nodes = space.cell_nodes(cx, cy);
            let mut local = [0.0; 4];
            for &(sx, wx) in &GAUSS3 {
                for &(sy, wy) in &GAUSS3 {
                    let f = source.eval((cx as f64 + sx) * h, (cy as f64 + sy) * h, cy * n + cx);
                    if f == 0.0 {
                        continue;
                    }
                    let w = wx * wy * h * h * f;
                    let shape = [(1.0 - sx) * (1.0 - sy), sx * (1.0 - sy), (1.0 - sx) * sy, sx * sy];
                    for k in 0..4 {
                        local[k] += w * shape[k];
                    }
                }
            }
            for k in 0..4 {
                let g = fi[nodes[k]];
                if g != NOT_FREE && local[k] != 0.0 {
                    out[g] += local[k];
                }
            }
        }
    }
    Ok(out)
}

/// `sqrt(vᴴK₁v + κ²vᴴMv)`, with `K` in place of `K₁` when `weighted`.
pub fn v_norm(v: &[C64], ops: &OperatorSet, weighted: bool) -> f64 {
    let k = if weighted { &ops.k } else { &ops.k1 };
    let grad = k.form(v, v).re;
    let mass = ops.m.form(v, v).re;
    (grad + ops.kappa * ops.kappa * mass).max(0.0).sqrt()
}

/// Reference tolerance for direct fine-scale solves.
pub const REFERENCE_TOLERANCE: f64 = 1e-10;

/// Fine-mesh solution of `Aop x = rhs` by sparse LU.
pub fn reference_solve(ops: &OperatorSet, rhs: &[C64]) -> Result<Vec<C64>> {
    if rhs.len() != ops.aop.nrows() {
        return Err(Error::DimensionMismatch {
            expected: ops.aop.nrows(),
            actual: rhs.len(),
        });
    }
    solver::direct_solve(&ops.aop, rhs, REFERENCE_TOLERANCE)
}
