//! Hierarchical trial and test bases, the per-level block systems, and
//! their decoupled solution.
//!
//! Every lifted Haar function restricted to a level-ℓ element `T` lies in
//! the span of the four coarse hats at the corners of `T` and the bubble of
//! `T`. The element corrector of `T` is therefore computed once for these
//! five shapes and every basis function is a linear combination of them.
//! All lifted functions are real, so the adjoint corrector of a lifted
//! function is the complex conjugate of its corrector and the test basis
//! is the conjugate of the trial basis.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::corrector::{CorrectorProblem, FactorCache, Oversampling};
use crate::error::{Error, Result};
use crate::fem::Discretization;
use crate::mesh::ElementId;
use crate::solver::{self, GmresConfig, GmresReport, SparseLu};
use crate::sparse::{galerkin_product, ComplexSparseMatrix, SparseColumns};
use crate::transfer::{haar_basis, is_interior_coarse_node, HaarFunction, LevelTransfer};

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisVariant {
    /// Lift followed by the V-stable projection before correction.
    Stabilized,
    /// Bubble lift only.
    Normal,
    /// Bubble lift with global correctors; oversampling is ignored.
    Ideal,
}

impl fmt::Display for BasisVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisVariant::Stabilized => "stabilized",
            BasisVariant::Normal => "normal",
            BasisVariant::Ideal => "ideal",
        })
    }
}

impl std::str::FromStr for BasisVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stabilized" => Ok(BasisVariant::Stabilized),
            "normal" => Ok(BasisVariant::Normal),
            "ideal" => Ok(BasisVariant::Ideal),
            _ => Err(Error::InvalidArgument(format!("unknown basis variant `{s}`"))),
        }
    }
}

/// Oversampling of level ℓ from a uniform (`[m]`) or per-level list.
pub fn level_oversampling(list: &[Oversampling], level: usize) -> Result<Oversampling> {
    match list {
        [m] => Ok(*m),
        _ => list
            .get(level - 1)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no oversampling given for level {level}"))),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BasisStats {
    pub elements: usize,
    pub factorizations: usize,
    pub wall_ms: f64,
}

/// Trial basis of one level; the test basis is its conjugate.
#[derive(Debug, Clone)]
pub struct LevelBasis {
    pub level: usize,
    pub variant: BasisVariant,
    pub oversampling: Oversampling,
    pub haar: Vec<HaarFunction>,
    pub trial: SparseColumns,
    pub stats: BasisStats,
}

impl LevelBasis {
    pub fn dim(&self) -> usize {
        self.trial.ncols()
    }

    pub fn test(&self) -> SparseColumns {
        self.trial.conj()
    }
}

/// Correctors of the five element shapes (four corner hats, then the bubble).
struct ElementShapes {
    local_nodes: Arc<Vec<usize>>,
    solutions: [Option<Vec<C64>>; 5],
}

/// Coefficients of a lifted function on one element: corner values of the
/// nodal part and the bubble weight.
type ElementCoefficients = ([C64; 4], C64);

/// Decomposes the lift of a Q0 function (sparse, by active index) into
/// per-element shape coefficients, in row-major element order.
fn lifted_coefficients(
    disc: &Discretization,
    level: usize,
    q: &[(usize, f64)],
    stabilized: bool,
) -> BTreeMap<(usize, usize), ElementCoefficients> {
    let mesh = disc.mesh();
    let active = mesh.active_elements(level);
    let qmap: BTreeMap<(usize, usize), f64> = q.iter().map(|&(i, v)| ((active[i].iy, active[i].ix), v)).collect();
    let q_at = |ix: usize, iy: usize| qmap.get(&(iy, ix)).copied().unwrap_or(0.0);
    let mut out: BTreeMap<(usize, usize), ElementCoefficients> = BTreeMap::new();
    if !stabilized {
        for (&(iy, ix), &v) in &qmap {
            out.insert((iy, ix), ([ZERO; 4], C64::new(v, 0.0)));
        }
        return out;
    }
    // nodal averages at interior coarse nodes touching the support
    let mut nodal: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(iy, ix) in qmap.keys() {
        for (zx, zy) in [(ix, iy), (ix + 1, iy), (ix, iy + 1), (ix + 1, iy + 1)] {
            if nodal.contains_key(&(zy, zx)) || !is_interior_coarse_node(mesh, level, zx, zy) {
                continue;
            }
            let e = 0.25 * (q_at(zx - 1, zy - 1) + q_at(zx, zy - 1) + q_at(zx - 1, zy) + q_at(zx, zy));
            if e != 0.0 {
                nodal.insert((zy, zx), e);
            }
        }
    }
    let mut elements: Vec<(usize, usize)> = qmap.keys().copied().collect();
    for &(zy, zx) in nodal.keys() {
        for (ix, iy) in [(zx - 1, zy - 1), (zx, zy - 1), (zx - 1, zy), (zx, zy)] {
            elements.push((iy, ix));
        }
    }
    elements.sort_unstable();
    elements.dedup();
    for (iy, ix) in elements {
        let corner = |zx: usize, zy: usize| nodal.get(&(zy, zx)).copied().unwrap_or(0.0);
        let e = [corner(ix, iy), corner(ix + 1, iy), corner(ix, iy + 1), corner(ix + 1, iy + 1)];
        // the mean of a bilinear function is the mean of its corner values
        let bubble = q_at(ix, iy) - 0.25 * e.iter().sum::<f64>();
        out.insert((iy, ix), (e.map(|v| C64::new(v, 0.0)), C64::new(bubble, 0.0)));
    }
    out
}

/// Builds the trial basis `(1 − C^m_ℓ) L φ_{ℓ,j}` of one level, where `L` is
/// `P_ℓ Π̃_ℓ` (stabilized) or `Π̃_ℓ` (normal, ideal).
pub fn build_level_basis(
    disc: &Discretization,
    transfer: &LevelTransfer,
    variant: BasisVariant,
    oversampling: Oversampling,
    cache: &FactorCache,
) -> Result<LevelBasis> {
    let start = Instant::now();
    let level = transfer.level();
    let mesh = disc.mesh();
    mesh.check_level(level)?;
    let oversampling = if variant == BasisVariant::Ideal {
        Oversampling::Global
    } else {
        oversampling
    };
    let stabilized = variant == BasisVariant::Stabilized;
    let r = transfer.ratio();
    let misses_before = cache.misses();

    let shape_nodal: Vec<Vec<C64>> = (0..4)
        .map(|k| transfer.hat_nodal(k))
        .chain(std::iter::once(transfer.bubble_nodal()))
        .map(|v| v.iter().map(|&x| C64::new(x, 0.0)).collect())
        .collect();

    let active = mesh.active_elements(level);
    let problems = active
        .par_iter()
        .map(|&t| CorrectorProblem::new(disc, t, oversampling))
        .collect::<Result<Vec<_>>>()?;
    cache.plan(problems.iter().map(CorrectorProblem::key));
    let shapes: Vec<ElementShapes> = active
        .par_iter()
        .zip(problems.par_iter())
        .map(|(&t, problem)| {
            let corners = [(t.ix, t.iy), (t.ix + 1, t.iy), (t.ix, t.iy + 1), (t.ix + 1, t.iy + 1)];
            let used: Vec<usize> = (0..4)
                .filter(|&k| stabilized && is_interior_coarse_node(mesh, level, corners[k].0, corners[k].1))
                .chain(std::iter::once(4))
                .collect();
            let rhs: Vec<Vec<(usize, C64)>> = used.iter().map(|&k| disc.apply_restricted(t, &shape_nodal[k])).collect();
            let sols = problem.solve_many(cache, &rhs)?;
            let mut solutions: [Option<Vec<C64>>; 5] = Default::default();
            for (&k, (w, _)) in used.iter().zip(sols) {
                solutions[k] = Some(w);
            }
            Ok(ElementShapes {
                local_nodes: problem.local_nodes().clone(),
                solutions,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let haar = haar_basis(mesh, level)?;
    let space = &disc.space;
    let fi = space.free_index_map();
    let nf = space.num_free();
    let columns: Vec<Vec<(usize, C64)>> = haar
        .par_iter()
        .map_init(
            || (vec![ZERO; nf], vec![false; nf]),
            |(acc, mark), phi| {
                let q: Vec<(usize, f64)> = phi
                    .element_values(mesh)
                    .into_iter()
                    .map(|(t, v)| (mesh.active_index(t).expect("active support"), v))
                    .collect();
                let coeffs = lifted_coefficients(disc, level, &q, stabilized);
                let mut touched = Vec::new();
                // the lifted function itself; values on shared element
                // boundaries agree, so assignment is consistent
                for (&(iy, ix), (e, b)) in &coeffs {
                    let (x0, y0) = (ix * r, iy * r);
                    for ly in 0..=r {
                        for lx in 0..=r {
                            let g = fi[space.node_id(x0 + lx, y0 + ly)];
                            if g == crate::fem::NOT_FREE {
                                continue;
                            }
                            let k = ly * (r + 1) + lx;
                            let val = (0..4).map(|c| e[c] * shape_nodal[c][k]).sum::<C64>() + b * shape_nodal[4][k];
                            if !mark[g] {
                                mark[g] = true;
                                touched.push(g);
                            }
                            acc[g] = val;
                        }
                    }
                }
                for (&(iy, ix), (e, b)) in &coeffs {
                    let t = ElementId::new(level, ix, iy);
                    let es = &shapes[mesh.active_index(t).expect("active element")];
                    let weights = [e[0], e[1], e[2], e[3], *b];
                    for (k, w) in weights.iter().enumerate() {
                        if *w == ZERO {
                            continue;
                        }
                        let Some(sol) = &es.solutions[k] else { continue };
                        for (&g, &s) in es.local_nodes.iter().zip(sol) {
                            if !mark[g] {
                                mark[g] = true;
                                touched.push(g);
                            }
                            acc[g] -= w * s;
                        }
                    }
                }
                touched.sort_unstable();
                let mut col = Vec::with_capacity(touched.len());
                for g in touched {
                    if acc[g] != ZERO {
                        col.push((g, acc[g]));
                    }
                    acc[g] = ZERO;
                    mark[g] = false;
                }
                col
            },
        )
        .collect();

    Ok(LevelBasis {
        level,
        variant,
        oversampling,
        haar,
        trial: SparseColumns::from_columns(nf, columns),
        stats: BasisStats {
            elements: active.len(),
            factorizations: cache.misses() - misses_before,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Bases of all levels `1..=levels` with a shared factorization cache.
pub fn build_bases(
    disc: &Discretization,
    transfers: &crate::transfer::TransferSet,
    variant: BasisVariant,
    oversampling: &[Oversampling],
    levels: usize,
) -> Result<Vec<LevelBasis>> {
    (1..=levels)
        .map(|l| {
            // one cache per level: patch systems never repeat across levels
            let cache = FactorCache::new();
            build_level_basis(disc, transfers.level(l), variant, level_oversampling(oversampling, l)?, &cache)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LevelBlock {
    pub level: usize,
    /// `A[j, k] = a(b_k, b*_j)`.
    pub matrix: ComplexSparseMatrix,
    /// `f[j] = (f, b*_j)`.
    pub rhs: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub kappa: f64,
    pub variant: BasisVariant,
    pub blocks: Vec<LevelBlock>,
}

pub fn assemble_blocks(disc: &Discretization, bases: &[LevelBasis], load: &[C64]) -> Result<BlockSystem> {
    disc.space.check_len(load)?;
    let blocks = bases
        .iter()
        .map(|b| {
            let test = b.test();
            LevelBlock {
                level: b.level,
                matrix: galerkin_product(&test, &disc.ops.aop, &b.trial),
                rhs: test.adjoint_mul_vec(load),
            }
        })
        .collect();
    Ok(BlockSystem {
        kappa: disc.kappa(),
        variant: bases.first().map_or(BasisVariant::Stabilized, |b| b.variant),
        blocks,
    })
}

/// Full matrix over all levels (diagnostics and sparsity plots only).
pub fn cross_level_matrix(disc: &Discretization, bases: &[LevelBasis]) -> ComplexSparseMatrix {
    let trial_parts: Vec<&SparseColumns> = bases.iter().map(|b| &b.trial).collect();
    let trial = SparseColumns::hstack(&trial_parts);
    galerkin_product(&trial.conj(), &disc.ops.aop, &trial)
}

/// Largest entry of the cross-level matrix outside the diagonal blocks.
pub fn off_diagonal_max(matrix: &ComplexSparseMatrix, bases: &[LevelBasis]) -> f64 {
    let mut level_of = Vec::with_capacity(matrix.nrows());
    for (i, b) in bases.iter().enumerate() {
        level_of.extend(std::iter::repeat_n(i, b.dim()));
    }
    matrix
        .iter()
        .filter(|&(i, j, _)| level_of[i] != level_of[j])
        .map(|(_, _, v)| v.norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveStrategy {
    DirectAll,
    /// Level 1 by LU, higher levels by restarted GMRES.
    DirectFirstGmresRest(GmresConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelSolveMethod {
    Direct,
    Gmres,
    /// GMRES did not converge and the level was re-solved directly.
    DirectFallback,
}

impl fmt::Display for LevelSolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelSolveMethod::Direct => "direct",
            LevelSolveMethod::Gmres => "gmres",
            LevelSolveMethod::DirectFallback => "direct_fallback",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LevelStats {
    pub level: usize,
    pub dim: usize,
    pub nnz: usize,
    pub method: LevelSolveMethod,
    pub gmres: Option<GmresReport>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct MultiResSolution {
    pub coefficients: Vec<Vec<C64>>,
    /// Fine-mesh contribution `φ_ℓ = Σ_k x_k b_{ℓ,k}` of each level.
    pub contributions: Vec<Vec<C64>>,
    pub stats: Vec<LevelStats>,
}

impl MultiResSolution {
    /// `ũ = Σ_ℓ φ_ℓ`.
    pub fn combined(&self) -> Vec<C64> {
        self.partial_sum(self.contributions.len())
    }

    /// `Σ_{ℓ ≤ levels} φ_ℓ`: the solution of the method truncated at that level.
    pub fn partial_sum(&self, levels: usize) -> Vec<C64> {
        let n = self.contributions.first().map_or(0, |c| c.len());
        let mut out = vec![ZERO; n];
        for c in &self.contributions[..levels] {
            out.iter_mut().zip(c).for_each(|(o, v)| *o += v);
        }
        out
    }
}

/// Tolerance of the direct block solves.
pub const BLOCK_DIRECT_TOLERANCE: f64 = 1e-10;

pub fn solve_blocks(system: &BlockSystem, bases: &[LevelBasis], strategy: SolveStrategy) -> Result<MultiResSolution> {
    if system.blocks.len() != bases.len() {
        return Err(Error::DimensionMismatch {
            expected: bases.len(),
            actual: system.blocks.len(),
        });
    }
    let results = system
        .blocks
        .par_iter()
        .zip(bases.par_iter())
        .map(|(block, basis)| {
            let start = Instant::now();
            let a = &block.matrix;
            let (x, method, gmres) = if a.nrows() == 0 {
                (Vec::new(), LevelSolveMethod::Direct, None)
            } else {
                match strategy {
                    SolveStrategy::DirectFirstGmresRest(cfg) if block.level >= 2 => {
                        let (x, rep) = solver::gmres(|v, y| a.mul_vec_into(v, y), &block.rhs, &cfg, None)?;
                        if rep.converged {
                            (x, LevelSolveMethod::Gmres, Some(rep))
                        } else {
                            let x = solver::direct_solve(a, &block.rhs, BLOCK_DIRECT_TOLERANCE)?;
                            (x, LevelSolveMethod::DirectFallback, Some(rep))
                        }
                    }
                    _ => {
                        let lu = SparseLu::factor(a)?;
                        (solver::solve_checked(a, &lu, &block.rhs, BLOCK_DIRECT_TOLERANCE)?, LevelSolveMethod::Direct, None)
                    }
                }
            };
            let contribution = basis.trial.mul_vec(&x);
            let stats = LevelStats {
                level: block.level,
                dim: a.nrows(),
                nnz: a.nnz(),
                method,
                gmres,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            Ok((x, contribution, stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sol = MultiResSolution {
        coefficients: Vec::new(),
        contributions: Vec::new(),
        stats: Vec::new(),
    };
    for (x, c, s) in results {
        sol.coefficients.push(x);
        sol.contributions.push(c);
        sol.stats.push(s);
    }
    Ok(sol)
}

/// Writes `row col log10abs` triplets (0-based) of all entries whose modulus
/// exceeds `zero_threshold`; smaller entries count as zeros.
pub fn export_sparsity<W: Write>(matrix: &ComplexSparseMatrix, zero_threshold: f64, mut out: W) -> Result<usize> {
    writeln!(out, "row col log10abs")?;
    let mut written = 0;
    for (i, j, v) in matrix.iter() {
        let a = v.norm();
        if a > zero_threshold {
            writeln!(out, "{i} {j} {:.6}", a.log10())?;
            written += 1;
        }
    }
    Ok(written)
}
