//! Scale-transfer operators between piecewise constants on a level and the
//! fine Q1 space.
//!
//! Piecewise-constant (Q0) functions on level ℓ are stored as one complex
//! value per active element, indexed like `MeshHierarchy::active_elements`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fem::{FineSpace, NOT_FREE};
use crate::mesh::{ElementId, MeshHierarchy};
use crate::sparse::ComplexSparseMatrix;

/// Sign patterns of the level ≥ 2 Haar functions, in basis order.
pub const SIGN_PATTERNS: [(u8, u8); 3] = [(0, 1), (1, 0), (1, 1)];

/// One Haar function: a normalized indicator on level 1, or a signed pattern
/// on the four children of a parent element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HaarFunction {
    pub level: usize,
    /// Supporting element: on level 1 itself, otherwise on level ℓ−1.
    pub parent: ElementId,
    pub pattern: Option<(u8, u8)>,
}

/// `χ⁽ʲ⁾` on the half `k ∈ {0, 1}` of the unit interval.
fn chi(j: u8, k: usize) -> f64 {
    if j == 0 || k == 0 {
        1.0
    } else {
        -1.0
    }
}

impl HaarFunction {
    /// Nonzero values as `(level-ℓ element, value)` pairs in row-major order.
    pub fn element_values(&self, mesh: &MeshHierarchy) -> Vec<(ElementId, f64)> {
        let parent_size = mesh.mesh_size(self.parent.level);
        let scale = 1.0 / parent_size;
        match self.pattern {
            None => vec![(self.parent, scale)],
            Some((j1, j2)) => {
                let c = mesh.children(self.parent);
                // children come as (0,0), (1,0), (0,1), (1,1)
                [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .zip(c)
                    .map(|(&(kx, ky), child)| (child, scale * chi(j1, kx) * chi(j2, ky)))
                    .collect()
            }
        }
    }
}

/// Haar functions of level ℓ; parents are the active elements of level
/// ℓ−1 in row-major order.
pub fn haar_basis(mesh: &MeshHierarchy, level: usize) -> Result<Vec<HaarFunction>> {
    mesh.check_level(level)?;
    if level == 1 {
        return Ok(mesh
            .active_elements(1)
            .iter()
            .map(|&parent| HaarFunction {
                level,
                parent,
                pattern: None,
            })
            .collect());
    }
    Ok(mesh
        .active_elements(level - 1)
        .iter()
        .flat_map(|&parent| {
            SIGN_PATTERNS.iter().map(move |&p| HaarFunction {
                level,
                parent,
                pattern: Some(p),
            })
        })
        .collect())
}

/// Q0 values of `Σ c_j φ_{ℓ,j}` on the active elements of level ℓ.
pub fn haar_synthesis(mesh: &MeshHierarchy, level: usize, coeffs: &[C64]) -> Result<Vec<C64>> {
    let basis = haar_basis(mesh, level)?;
    if coeffs.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            actual: coeffs.len(),
        });
    }
    let mut out = vec![C64::new(0.0, 0.0); mesh.num_active(level)];
    for (phi, c) in basis.iter().zip(coeffs) {
        for (t, v) in phi.element_values(mesh) {
            out[mesh.active_index(t).expect("children of active parents are active")] += c * v;
        }
    }
    Ok(out)
}

/// Synthesis as a sparse matrix (active elements × Haar functions).
pub fn haar_synthesis_matrix(mesh: &MeshHierarchy, level: usize) -> Result<ComplexSparseMatrix> {
    let basis = haar_basis(mesh, level)?;
    let mut trip = Vec::new();
    for (j, phi) in basis.iter().enumerate() {
        for (t, v) in phi.element_values(mesh) {
            trip.push((mesh.active_index(t).unwrap(), j, v));
        }
    }
    Ok(ComplexSparseMatrix::from_real_triplets(mesh.num_active(level), basis.len(), trip))
}

/// Whether coarse node `(zx, zy)` of level ℓ is interior, i.e. all four
/// surrounding elements exist and are active.
pub fn is_interior_coarse_node(mesh: &MeshHierarchy, level: usize, zx: usize, zy: usize) -> bool {
    let n = mesh.cells_per_side(level);
    zx >= 1
        && zy >= 1
        && zx < n
        && zy < n
        && [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .all(|&(dx, dy)| mesh.is_active(ElementId::new(level, zx - dx, zy - dy)))
}

/// `b(s) = 6 s (1 − s)`.
pub fn bubble_1d(s: f64) -> f64 {
    6.0 * s * (1.0 - s)
}

/// Transfer operators of one level as sparse matrices on the free nodes.
#[derive(Debug, Clone)]
pub struct LevelTransfer {
    level: usize,
    r: usize,
    /// Element means (active elements × free nodes).
    pi: ComplexSparseMatrix,
    /// Bubble lift (free nodes × active elements).
    lift: ComplexSparseMatrix,
    /// Nodal averaging (free nodes × active elements).
    e: ComplexSparseMatrix,
    bubble: Vec<f64>,
    hats: [Vec<f64>; 4],
}

impl LevelTransfer {
    pub fn new(space: &FineSpace, level: usize) -> Result<Self> {
        let mesh = space.mesh();
        mesh.check_level(level)?;
        let r = mesh.refinement_ratio(level);
        if r < 2 {
            return Err(Error::UnresolvableBubble {
                level,
                h: space.h(),
                half: mesh.mesh_size(level) / 2.0,
            });
        }
        let rp = r + 1;
        let fi = space.free_index_map();
        let nf = space.num_free();
        let nact = mesh.num_active(level);

        let raw: Vec<f64> = (0..rp * rp)
            .map(|k| bubble_1d((k % rp) as f64 / r as f64) * bubble_1d((k / rp) as f64 / r as f64))
            .collect();
        let raw_mean = element_mean_of_nodal(&raw, r);
        let bubble: Vec<f64> = raw.iter().map(|v| v / raw_mean).collect();
        let hats = [0, 1, 2, 3].map(|corner| {
            (0..rp * rp)
                .map(|k| {
                    let (sx, sy) = ((k % rp) as f64 / r as f64, (k / rp) as f64 / r as f64);
                    let fx = if corner % 2 == 0 { 1.0 - sx } else { sx };
                    let fy = if corner / 2 == 0 { 1.0 - sy } else { sy };
                    fx * fy
                })
                .collect::<Vec<f64>>()
        });

        let w = 1.0 / (4.0 * (r * r) as f64);
        let (mut tpi, mut tlift) = (Vec::new(), Vec::new());
        for (ti, &t) in mesh.active_elements(level).iter().enumerate() {
            let (xr, yr) = mesh.fine_cells_of(t);
            for cy in yr.clone() {
                for cx in xr.clone() {
                    for node in space.cell_nodes(cx, cy) {
                        if fi[node] != NOT_FREE {
                            tpi.push((ti, fi[node], w));
                        }
                    }
                }
            }
            for ly in 1..r {
                for lx in 1..r {
                    let g = fi[space.node_id(xr.start + lx, yr.start + ly)];
                    debug_assert_ne!(g, NOT_FREE);
                    tlift.push((g, ti, bubble[ly * rp + lx]));
                }
            }
        }

        let n = mesh.cells_per_side(level);
        let mut te = Vec::new();
        for zy in 1..n {
            for zx in 1..n {
                if !is_interior_coarse_node(mesh, level, zx, zy) {
                    continue;
                }
                let around: Vec<usize> = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(dx, dy)| mesh.active_index(ElementId::new(level, zx - dx, zy - dy)).unwrap())
                    .collect();
                for dy in -(r as isize) + 1..r as isize {
                    for dx in -(r as isize) + 1..r as isize {
                        let nx = (zx * r) as isize + dx;
                        let ny = (zy * r) as isize + dy;
                        let g = fi[space.node_id(nx as usize, ny as usize)];
                        if g == NOT_FREE {
                            continue;
                        }
                        let hat = (1.0 - dx.unsigned_abs() as f64 / r as f64) * (1.0 - dy.unsigned_abs() as f64 / r as f64);
                        for &ti in &around {
                            te.push((g, ti, 0.25 * hat));
                        }
                    }
                }
            }
        }

        Ok(Self {
            level,
            r,
            pi: ComplexSparseMatrix::from_real_triplets(nact, nf, tpi),
            lift: ComplexSparseMatrix::from_real_triplets(nf, nact, tlift),
            e: ComplexSparseMatrix::from_real_triplets(nf, nact, te),
            bubble,
            hats,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Fine cells per element side.
    pub fn ratio(&self) -> usize {
        self.r
    }

    pub fn pi_matrix(&self) -> &ComplexSparseMatrix {
        &self.pi
    }

    pub fn lift_matrix(&self) -> &ComplexSparseMatrix {
        &self.lift
    }

    pub fn e_matrix(&self) -> &ComplexSparseMatrix {
        &self.e
    }

    /// `Π_ℓ v`: exact fine-quadrature element means.
    pub fn project(&self, v: &[C64]) -> Vec<C64> {
        self.pi.mul_vec(v)
    }

    /// `Π̃_ℓ q`.
    pub fn lift(&self, q: &[C64]) -> Vec<C64> {
        self.lift.mul_vec(q)
    }

    /// `E_ℓ q`.
    pub fn extend(&self, q: &[C64]) -> Vec<C64> {
        self.e.mul_vec(q)
    }

    /// `I_ℓ v = E_ℓ Π_ℓ v`.
    pub fn quasi_interpolate(&self, v: &[C64]) -> Vec<C64> {
        self.extend(&self.project(v))
    }

    /// `P_ℓ v = I_ℓ v + Π̃_ℓ(Π_ℓ v − Π_ℓ I_ℓ v)`.
    pub fn vstable_projection(&self, v: &[C64]) -> Vec<C64> {
        let q = self.project(v);
        let iv = self.extend(&q);
        let defect: Vec<C64> = q.iter().zip(self.project(&iv)).map(|(a, b)| a - b).collect();
        let mut out = iv;
        for (o, b) in out.iter_mut().zip(self.lift(&defect)) {
            *o += b;
        }
        out
    }

    /// Mean-one discrete bubble on the `(r+1)²` nodes of an element.
    pub fn bubble_nodal(&self) -> &[f64] {
        &self.bubble
    }

    /// Coarse hat of element corner `k` (ll, lr, ul, ur) on the element's nodes.
    pub fn hat_nodal(&self, corner: usize) -> &[f64] {
        &self.hats[corner]
    }
}

/// Fine-quadrature mean over one element of nodal values given row-major on
/// its `(r+1)²` nodes.
pub fn element_mean_of_nodal(values: &[f64], r: usize) -> f64 {
    let rp = r + 1;
    let mut s = 0.0;
    for ly in 0..r {
        for lx in 0..r {
            let k = ly * rp + lx;
            s += values[k] + values[k + 1] + values[k + rp] + values[k + rp + 1];
        }
    }
    s / (4.0 * (r * r) as f64)
}

/// Values of `E_ℓ q` at the `(n+1)²` coarse nodes of level ℓ (row-major).
pub fn coarse_nodal_average(mesh: &MeshHierarchy, level: usize, q: &[C64]) -> Vec<C64> {
    let n = mesh.cells_per_side(level);
    let mut out = vec![C64::new(0.0, 0.0); (n + 1) * (n + 1)];
    for zy in 1..n {
        for zx in 1..n {
            if is_interior_coarse_node(mesh, level, zx, zy) {
                out[zy * (n + 1) + zx] = [(0, 0), (1, 0), (0, 1), (1, 1)]
                    .iter()
                    .map(|&(dx, dy)| q[mesh.active_index(ElementId::new(level, zx - dx, zy - dy)).unwrap()])
                    .sum::<C64>()
                    * 0.25;
            }
        }
    }
    out
}

/// Transfer operators for every level of a hierarchy.
#[derive(Debug, Clone)]
pub struct TransferSet {
    levels: Vec<LevelTransfer>,
}

impl TransferSet {
    pub fn new(space: &FineSpace) -> Result<Self> {
        let levels = (1..=space.mesh().levels())
            .map(|l| LevelTransfer::new(space, l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { levels })
    }

    pub fn level(&self, level: usize) -> &LevelTransfer {
        &self.levels[level - 1]
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::mesh::{BoundaryLayout, Geometry};
    use crate::rng;

    fn space(h1: f64, levels: usize, h: f64) -> FineSpace {
        let m = MeshHierarchy::build(h1, levels, h, Geometry::UnitSquare, BoundaryLayout::all_robin()).unwrap();
        FineSpace::new(Arc::new(m))
    }

    fn hole_space(levels: usize, h: f64) -> FineSpace {
        let m = MeshHierarchy::build(
            0.125,
            levels,
            h,
            Geometry::SquareWithHole {
                lo: [0.375, 0.375],
                hi: [0.625, 0.625],
            },
            BoundaryLayout::all_robin(),
        )
        .unwrap();
        FineSpace::new(Arc::new(m))
    }

    /// Haar function as values on the fine cells.
    fn fine_cell_values(mesh: &MeshHierarchy, phi: &HaarFunction) -> Vec<f64> {
        let n = mesh.fine_cells_per_side();
        let mut out = vec![0.0; n * n];
        for (t, v) in phi.element_values(mesh) {
            let (xr, yr) = mesh.fine_cells_of(t);
            for cy in yr {
                for cx in xr.clone() {
                    out[cy * n + cx] = v;
                }
            }
        }
        out
    }

    #[test]
    fn haar_counts_and_values() {
        let s = space(0.5, 2, 0.125);
        let m = s.mesh();
        let b1 = haar_basis(m, 1).unwrap();
        assert_eq!(b1.len(), 4);
        assert!(b1.iter().all(|p| p.element_values(m) == vec![(p.parent, 2.0)]));
        let b2 = haar_basis(m, 2).unwrap();
        assert_eq!(b2.len(), 12);
        for p in &b2 {
            let vals = p.element_values(m);
            assert_eq!(vals.len(), 4);
            assert!(vals.iter().all(|(_, v)| v.abs() == 2.0));
            assert_eq!(vals.iter().map(|(_, v)| v).sum::<f64>(), 0.0);
        }
        // χ⁽¹⁾ is +1 on the left half
        let p = b2[1];
        assert_eq!(p.pattern, Some((1, 0)));
        let v = p.element_values(m);
        assert!(v[0].1 > 0.0 && v[1].1 < 0.0 && v[2].1 > 0.0 && v[3].1 < 0.0);
        assert!(haar_basis(m, 3).is_err());
    }

    fn gram_error(s: &FineSpace) -> f64 {
        let m = s.mesh();
        let h2 = s.h() * s.h();
        let all: Vec<Vec<f64>> = (1..=m.levels())
            .flat_map(|l| haar_basis(m, l).unwrap())
            .map(|p| fine_cell_values(m, &p))
            .collect();
        let mut worst: f64 = 0.0;
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let g: f64 = a.iter().zip(b).map(|(x, y)| x * y * h2).sum();
                worst = worst.max((g - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    #[test]
    fn haar_gram_identity() {
        assert!(gram_error(&space(0.5, 3, 1.0 / 16.0)) < 1e-12);
        assert!(gram_error(&hole_space(2, 1.0 / 32.0)) < 1e-12);
    }

    #[test]
    fn haar_synthesis_unit_and_parseval() {
        let s = space(0.5, 3, 1.0 / 16.0);
        let m = s.mesh();
        let basis = haar_basis(m, 3).unwrap();
        let mut c = vec![C64::new(0.0, 0.0); basis.len()];
        c[5] = C64::new(1.0, 0.0);
        let q = haar_synthesis(m, 3, &c).unwrap();
        for (t, v) in basis[5].element_values(m) {
            assert_eq!(q[m.active_index(t).unwrap()].re, v);
        }
        let mut r = rng::seeded(1);
        let c = rng::complex_gaussian(&mut r, basis.len());
        let q = haar_synthesis(m, 3, &c).unwrap();
        let area = m.mesh_size(3).powi(2);
        let l2 = q.iter().map(|v| v.norm_sqr() * area).sum::<f64>().sqrt();
        let c2 = crate::sparse::norm2(&c);
        assert!((l2 - c2).abs() < 1e-12 * c2);
        assert!(haar_synthesis(m, 3, &c[1..]).is_err());
        let sm = haar_synthesis_matrix(m, 3).unwrap();
        assert!(crate::sparse::norm2(&crate::sparse::sub(&sm.mul_vec(&c), &q)) < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let s = space(0.5, 2, 1.0 / 16.0);
        let t = LevelTransfer::new(&s, 1).unwrap();
        let x = s.interpolate(|x, _| C64::new(x, 0.0));
        let q = t.project(&x);
        let cols: Vec<f64> = s.mesh().active_elements(1).iter().map(|e| if e.ix == 0 { 0.25 } else { 0.75 }).collect();
        for (a, b) in q.iter().zip(cols) {
            assert!((a.re - b).abs() < 1e-14);
        }
        let c = s.interpolate(|_, _| C64::new(2.5, -1.0));
        assert!(t.project(&c).iter().all(|v| (v - C64::new(2.5, -1.0)).norm() < 1e-14));

        // a lifted finer Haar function has zero means on the coarser level
        let t2 = LevelTransfer::new(&s, 2).unwrap();
        let mut coeffs = vec![C64::new(0.0, 0.0); 12];
        coeffs[7] = C64::new(1.0, 0.0);
        let fine = t2.lift(&haar_synthesis(s.mesh(), 2, &coeffs).unwrap());
        assert!(t.project(&fine).iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn bubble_properties() {
        let s = space(0.5, 1, 1.0 / 16.0);
        let t = LevelTransfer::new(&s, 1).unwrap();
        let r = t.ratio();
        // continuous peak before rescaling
        assert_eq!(bubble_1d(0.5).powi(2), 2.25);
        let b = t.bubble_nodal();
        for k in 0..=r {
            for &idx in &[k, r * (r + 1) + k, k * (r + 1), k * (r + 1) + r] {
                assert_eq!(b[idx], 0.0);
            }
        }
        assert!((element_mean_of_nodal(b, r) - 1.0).abs() < 1e-15);

        let mut g = rng::seeded(2);
        let q = rng::complex_gaussian(&mut g, 4);
        let back = t.project(&t.lift(&q));
        assert!(back.iter().zip(&q).all(|(a, b)| (a - b).norm() < 1e-13));

        let coarse = space(0.5, 1, 0.5);
        assert!(matches!(LevelTransfer::new(&coarse, 1), Err(Error::UnresolvableBubble { .. })));
    }

    #[test]
    fn vstable_projection_preserves_means() {
        for s in [space(0.25, 3, 1.0 / 64.0), hole_space(2, 1.0 / 64.0)] {
            let ts = TransferSet::new(&s).unwrap();
            let mut g = rng::seeded(3);
            for l in 1..=ts.levels() {
                let t = ts.level(l);
                for _ in 0..5 {
                    let v = rng::complex_gaussian(&mut g, s.num_free());
                    let pv = t.vstable_projection(&v);
                    let (a, b) = (t.project(&pv), t.project(&v));
                    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-12));
                    let ppv = t.vstable_projection(&pv);
                    assert!(t.project(&ppv).iter().zip(&b).all(|(x, y)| (x - y).norm() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn vstable_projection_kernel() {
        let s = space(0.25, 2, 1.0 / 32.0);
        let ts = TransferSet::new(&s).unwrap();
        // a level-2 Haar function lifted on level 2 has zero level-1 means
        let mut c = vec![C64::new(0.0, 0.0); 48];
        c[20] = C64::new(1.0, 0.0);
        let v = ts.level(2).lift(&haar_synthesis(s.mesh(), 2, &c).unwrap());
        let pv = ts.level(1).vstable_projection(&v);
        assert!(pv.iter().all(|x| x.norm() < 1e-13));
    }

    #[test]
    fn e_matches_coarse_nodal_average() {
        let s = hole_space(1, 1.0 / 32.0);
        let t = LevelTransfer::new(&s, 1).unwrap();
        let m = s.mesh();
        let mut g = rng::seeded(4);
        let q = rng::complex_gaussian(&mut g, m.num_active(1));
        let ev = t.extend(&q);
        let nodal = coarse_nodal_average(m, 1, &q);
        let r = t.ratio();
        let n = m.cells_per_side(1);
        for zy in 0..=n {
            for zx in 0..=n {
                let node = s.node_id(zx * r, zy * r);
                let val = s.free_index(node).map(|i| ev[i]).unwrap_or_default();
                assert!((val - nodal[zy * (n + 1) + zx]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn approximation_order_of_pi() {
        let s = space(0.25, 3, 1.0 / 128.0);
        let ts = TransferSet::new(&s).unwrap();
        let pi = std::f64::consts::PI;
        let v = s.interpolate(|x, y| C64::new((pi * x).sin() * (pi * y).sin(), 0.0));
        let c = crate::fem::CoefficientField::constant(128, 1.0).unwrap();
        let ops = crate::fem::assemble_operators(&s, 0.0, &c).unwrap();
        let mut pts = Vec::new();
        for l in 1..=3 {
            let t = ts.level(l);
            let q = t.project(&v);
            // (1 − Π)v on fine cells, measured with the mass matrix of the Q1 part
            // and the exact cross terms of a piecewise constant
            let diff_l2 = {
                let n = s.cells_per_side();
                let r = t.ratio();
                let h = s.h();
                let full = s.extend(&v);
                let mut acc = 0.0;
                for cy in 0..n {
                    for cx in 0..n {
                        let e = s.mesh().containing_element(cx, cy, l);
                        let qc = q[s.mesh().active_index(e).unwrap()].re;
                        let nodes = s.cell_nodes(cx, cy);
                        let vals: Vec<f64> = nodes.iter().map(|&k| full[k].re - qc).collect();
                        for i in 0..4 {
                            for j in 0..4 {
                                acc += vals[i] * vals[j] * crate::fem::MASS_REF[i][j] * h * h;
                            }
                        }
                    }
                }
                let _ = r;
                acc.sqrt()
            };
            let grad = ops.k1.form(&v, &v).re.sqrt();
            pts.push((s.mesh().mesh_size(l).ln(), (diff_l2 / grad).ln()));
        }
        let slope = crate::corrector::least_squares_slope(&pts);
        assert!(slope >= 0.9, "slope {slope}");
    }

    #[test]
    fn vstable_projection_l2_stability() {
        let s = space(0.25, 2, 1.0 / 32.0);
        let ts = TransferSet::new(&s).unwrap();
        let c = crate::fem::CoefficientField::constant(32, 1.0).unwrap();
        let ops = crate::fem::assemble_operators(&s, 1.0, &c).unwrap();
        let mut g = rng::seeded(5);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let v = rng::complex_gaussian(&mut g, s.num_free());
            let pv = ts.level(1).vstable_projection(&v);
            worst = worst.max((ops.m.form(&pv, &pv).re / ops.m.form(&v, &v).re).sqrt());
        }
        assert!(worst.is_finite() && worst < 10.0, "{worst}");
    }
}
