//! Element correctors in the kernel spaces `W_ℓ = ker Π_ℓ`.
//!
//! A corrector problem on the patch `N^m_ℓ(T)` is solved as the saddle point
//!
//! ```text
//! [ A_loc  Cᵀ ] [ w ]   [ A_T v ]
//! [ C      0  ] [ λ ] = [   0   ]
//! ```
//!
//! where `A_loc` is the fine operator on the nodes interior to the patch
//! (homogeneous Dirichlet on the artificial patch boundary) and each row of
//! `C` is the element mean of one patch element, scaled by `|T|/h²`.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fem::{Discretization, NOT_FREE};
use crate::mesh::{ElementId, Patch};
use crate::solver::{relative_residual, SparseLu};
use crate::sparse::ComplexSparseMatrix;

/// Tolerance on the relative residual of every saddle-point solve.
pub const SADDLE_TOLERANCE: f64 = 1e-10;

/// Patch radius of a corrector problem; `Global` is the unlocalized case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Oversampling {
    Finite(usize),
    Global,
}

impl fmt::Display for Oversampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Oversampling::Finite(m) => write!(f, "{m}"),
            Oversampling::Global => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Oversampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "global" => Ok(Oversampling::Global),
            t => t
                .parse()
                .map(Oversampling::Finite)
                .map_err(|_| Error::InvalidArgument(format!("oversampling `{s}` is neither an integer nor `inf`"))),
        }
    }
}

/// Local saddle-point problem of one element corrector.
#[derive(Debug, Clone)]
pub struct CorrectorProblem {
    pub element: ElementId,
    pub oversampling: Oversampling,
    pub patch: Patch,
    /// Global free indices of the local unknowns (ascending).
    local_nodes: Arc<Vec<usize>>,
    a_loc: ComplexSparseMatrix,
    constraints: ComplexSparseMatrix,
    saddle: ComplexSparseMatrix,
    key: [u8; 32],
    kappa2h: f64,
}

impl CorrectorProblem {
    pub fn new(disc: &Discretization, element: ElementId, oversampling: Oversampling) -> Result<Self> {
        let mesh = disc.mesh();
        let patch = match oversampling {
            Oversampling::Finite(m) => mesh.patch(element, m)?,
            Oversampling::Global => {
                if !mesh.is_active(element) {
                    return Err(if mesh.in_grid(element) {
                        Error::InactiveElement(element)
                    } else {
                        Error::OutOfGrid(element)
                    });
                }
                mesh.full_patch(element.level)
            }
        };
        let space = &disc.space;
        let fi = space.free_index_map();
        let level = element.level;
        let r = mesh.refinement_ratio(level);
        let (ex0, ey0, ex1, ey1) = patch.bbox;
        let (ew, eh) = (ex1 - ex0 + 1, ey1 - ey0 + 1);
        let mut member = vec![false; ew * eh];
        for t in &patch.elements {
            member[(t.iy - ey0) * ew + (t.ix - ex0)] = true;
        }
        let in_patch = |cx: usize, cy: usize| {
            let (ix, iy) = (cx / r, cy / r);
            ix >= ex0 && ix <= ex1 && iy >= ey0 && iy <= ey1 && member[(iy - ey0) * ew + (ix - ex0)]
        };

        let (x0, y0) = (ex0 * r, ey0 * r);
        let (wn, hn) = (ew * r + 1, eh * r + 1);
        let mut local_of = vec![NOT_FREE; wn * hn];
        let mut local_nodes = Vec::new();
        for ly in 0..hn {
            for lx in 0..wn {
                let (nx, ny) = (x0 + lx, y0 + ly);
                let g = fi[space.node_id(nx, ny)];
                if g == NOT_FREE {
                    continue;
                }
                let interior = mesh
                    .adjacent_fine_cells(nx, ny)
                    .filter(|&(cx, cy)| mesh.is_fine_cell_active(cx, cy))
                    .all(|(cx, cy)| in_patch(cx, cy));
                if interior {
                    local_of[ly * wn + lx] = local_nodes.len();
                    local_nodes.push(g);
                }
            }
        }
        let nl = local_nodes.len();
        let nc = patch.len();

        let local = |nx: usize, ny: usize| local_of[(ny - y0) * wn + (nx - x0)];
        let mut ta = Vec::new();
        for cy in y0..y0 + eh * r {
            for cx in x0..x0 + ew * r {
                if !in_patch(cx, cy) || !space.is_cell_active(cx, cy) {
                    continue;
                }
                let cm = disc.cell_matrix(cx, cy);
                let loc = [local(cx, cy), local(cx + 1, cy), local(cx, cy + 1), local(cx + 1, cy + 1)];
                for i in 0..4 {
                    if loc[i] == NOT_FREE {
                        continue;
                    }
                    for j in 0..4 {
                        if loc[j] != NOT_FREE {
                            ta.push((loc[i], loc[j], cm[i][j]));
                        }
                    }
                }
            }
        }
        let mut tc = Vec::new();
        for (row, t) in patch.elements.iter().enumerate() {
            let (xr, yr) = mesh.fine_cells_of(*t);
            for cy in yr {
                for cx in xr.clone() {
                    for (nx, ny) in [(cx, cy), (cx + 1, cy), (cx, cy + 1), (cx + 1, cy + 1)] {
                        let l = local(nx, ny);
                        if l != NOT_FREE {
                            tc.push((row, l, C64::new(0.25, 0.0)));
                        }
                    }
                }
            }
        }
        let mut ts = ta.clone();
        for &(row, l, v) in &tc {
            ts.push((l, nl + row, v));
            ts.push((nl + row, l, v));
        }
        let a_loc = ComplexSparseMatrix::from_triplets(nl, nl, ta);
        let constraints = ComplexSparseMatrix::from_triplets(nc, nl, tc);
        let saddle = ComplexSparseMatrix::from_triplets(nl + nc, nl + nc, ts);
        let key = content_hash(&saddle);
        let kappa = disc.kappa();
        Ok(Self {
            element,
            oversampling,
            patch,
            local_nodes: Arc::new(local_nodes),
            a_loc,
            constraints,
            saddle,
            key,
            kappa2h: kappa * kappa * space.h(),
        })
    }

    pub fn num_local(&self) -> usize {
        self.local_nodes.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn local_nodes(&self) -> &Arc<Vec<usize>> {
        &self.local_nodes
    }

    pub fn local_matrix(&self) -> &ComplexSparseMatrix {
        &self.a_loc
    }

    pub fn constraint_matrix(&self) -> &ComplexSparseMatrix {
        &self.constraints
    }

    pub fn saddle_matrix(&self) -> &ComplexSparseMatrix {
        &self.saddle
    }

    /// Content hash of the saddle-point matrix (the factorization cache key).
    pub fn key(&self) -> [u8; 32] {
        self.key
    }

    /// Local position of a global free index, if it is a local unknown.
    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.local_nodes.binary_search(&global).ok()
    }

    fn singular(&self, reason: String) -> Error {
        Error::SingularSaddlePoint {
            element: self.element,
            oversampling: self.oversampling.to_string(),
            kappa2h: self.kappa2h,
            reason,
        }
    }

    fn factor(&self, cache: &FactorCache) -> Result<Arc<SparseLu>> {
        cache.get_or_factor(self.key, &self.saddle).map_err(|e| self.singular(e))
    }

    /// Solves the saddle point for several right-hand sides given as sparse
    /// global `(free index, value)` lists of `a_T(v, ·)`. Entries outside the
    /// local unknowns are dropped. Returns `(w, λ)` per right-hand side.
    pub fn solve_many(&self, cache: &FactorCache, rhs: &[Vec<(usize, C64)>]) -> Result<Vec<(Vec<C64>, Vec<C64>)>> {
        let nl = self.num_local();
        let n = nl + self.num_constraints();
        let dense: Vec<Vec<C64>> = rhs
            .iter()
            .map(|entries| {
                let mut b = vec![C64::new(0.0, 0.0); n];
                for &(g, v) in entries {
                    if let Some(l) = self.local_index(g) {
                        b[l] += v;
                    }
                }
                b
            })
            .collect();
        let nonzero: Vec<usize> = (0..dense.len())
            .filter(|&k| dense[k].iter().any(|v| *v != C64::new(0.0, 0.0)))
            .collect();
        let mut out: Vec<(Vec<C64>, Vec<C64>)> = vec![(vec![C64::new(0.0, 0.0); nl], vec![C64::new(0.0, 0.0); n - nl]); rhs.len()];
        if nonzero.is_empty() {
            cache.release(self.key);
            return Ok(out);
        }
        let lu = self.factor(cache)?;
        let mut mat = faer::Mat::<C64>::from_fn(n, nonzero.len(), |i, j| dense[nonzero[j]][i]);
        lu.solve_mat_in_place(&mut mat);
        for (j, &k) in nonzero.iter().enumerate() {
            let mut x: Vec<C64> = (0..n).map(|i| mat[(i, j)]).collect();
            let mut res = relative_residual(&self.saddle, &x, &dense[k]);
            for _ in 0..2 {
                if res <= SADDLE_TOLERANCE || !res.is_finite() {
                    break;
                }
                let ax = self.saddle.mul_vec(&x);
                let r: Vec<C64> = dense[k].iter().zip(&ax).map(|(b, a)| b - a).collect();
                for (xi, d) in x.iter_mut().zip(lu.solve(&r)) {
                    *xi += d;
                }
                res = relative_residual(&self.saddle, &x, &dense[k]);
            }
            if !res.is_finite() {
                return Err(self.singular("non-finite solution (numerically singular pivot)".into()));
            }
            if res > SADDLE_TOLERANCE {
                return Err(Error::InaccurateSolve {
                    residual: res,
                    tolerance: SADDLE_TOLERANCE,
                });
            }
            let lambda = x.split_off(nl);
            out[k] = (x, lambda);
        }
        Ok(out)
    }
}

fn content_hash(m: &ComplexSparseMatrix) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for (i, j, v) in m.iter() {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
        h.update(v.re.to_bits().to_le_bytes());
        h.update(v.im.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

type CacheSlot = Arc<OnceLock<std::result::Result<Arc<SparseLu>, String>>>;

#[derive(Default)]
struct CacheEntry {
    slot: CacheSlot,
    /// Planned uses still to come; the entry is dropped after the last one.
    remaining: Option<usize>,
}

/// Saddle-point factorizations shared between patches with identical local
/// systems (translated interior patches of a translation-invariant problem).
///
/// Without a plan every factorization is kept. Keys announced through
/// [`FactorCache::plan`] are evicted after their last planned use, which
/// bounds memory when few patches repeat.
#[derive(Default)]
pub struct FactorCache {
    map: Mutex<HashMap<[u8; 32], CacheEntry>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl fmt::Debug for FactorCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactorCache")
            .field("entries", &self.len())
            .field("hits", &self.hits())
            .field("misses", &self.misses())
            .finish()
    }
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_factor(&self, key: [u8; 32], matrix: &ComplexSparseMatrix) -> std::result::Result<Arc<SparseLu>, String> {
        let slot = {
            let mut map = self.map.lock().expect("factor cache poisoned");
            let entry = map.entry(key).or_default();
            let slot = entry.slot.clone();
            Self::consume(&mut map, key);
            slot
        };
        let mut fresh = false;
        let res = slot.get_or_init(|| {
            fresh = true;
            SparseLu::factor(matrix).map(Arc::new).map_err(|e| e.to_string())
        });
        if fresh {
            self.misses.fetch_add(1, Ordering::Relaxed);
        } else {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        res.clone()
    }

    fn consume(map: &mut HashMap<[u8; 32], CacheEntry>, key: [u8; 32]) {
        if let Some(entry) = map.get_mut(&key) {
            if let Some(n) = entry.remaining.as_mut() {
                *n = n.saturating_sub(1);
                if *n == 0 {
                    map.remove(&key);
                }
            }
        }
    }

    /// Announces one upcoming use per key.
    pub fn plan<I: IntoIterator<Item = [u8; 32]>>(&self, keys: I) {
        let mut map = self.map.lock().expect("factor cache poisoned");
        for k in keys {
            *map.entry(k).or_default().remaining.get_or_insert(0) += 1;
        }
    }

    /// Gives up one planned use without factoring.
    pub fn release(&self, key: [u8; 32]) {
        let mut map = self.map.lock().expect("factor cache poisoned");
        Self::consume(&mut map, key);
    }

    pub fn len(&self) -> usize {
        self.map.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn clear(&self) {
        if let Ok(mut m) = self.map.lock() {
            m.clear();
        }
    }
}

/// Corrector supported in the patch of one element.
#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    pub element: ElementId,
    local_nodes: Arc<Vec<usize>>,
    pub values: Vec<C64>,
    pub multipliers: Vec<C64>,
}

impl CorrectorSolution {
    /// Nonzero entries as `(global free index, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, C64)> + '_ {
        self.local_nodes
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .filter(|(_, v)| *v != C64::new(0.0, 0.0))
    }

    pub fn to_global(&self, num_free: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); num_free];
        self.add_to(&mut out);
        out
    }

    pub fn add_to(&self, out: &mut [C64]) {
        for (g, v) in self.entries() {
            out[g] += v;
        }
    }

    pub fn conj(mut self) -> Self {
        self.values.iter_mut().for_each(|v| *v = v.conj());
        self.multipliers.iter_mut().for_each(|v| *v = v.conj());
        self
    }
}

/// `C^m_{ℓ,T} v`.
pub fn solve_element_corrector(
    disc: &Discretization,
    problem: &CorrectorProblem,
    cache: &FactorCache,
    v: &[C64],
) -> Result<CorrectorSolution> {
    disc.space.check_len(v)?;
    let t = problem.element;
    let rhs = disc.apply_restricted(t, &disc.element_nodal_values(t, v));
    let (values, multipliers) = problem.solve_many(cache, &[rhs])?.pop().unwrap();
    Ok(CorrectorSolution {
        element: t,
        local_nodes: problem.local_nodes.clone(),
        values,
        multipliers,
    })
}

/// `C^{m,*}_{ℓ,T} v = conj(C^m_{ℓ,T} conj(v))`.
pub fn adjoint_corrector(
    disc: &Discretization,
    problem: &CorrectorProblem,
    cache: &FactorCache,
    v: &[C64],
) -> Result<CorrectorSolution> {
    let cv = crate::sparse::conj_vec(v);
    Ok(solve_element_corrector(disc, problem, cache, &cv)?.conj())
}

/// `C^m_ℓ v = Σ_T C^m_{ℓ,T} v`, summed in row-major element order.
pub fn sum_correctors(
    disc: &Discretization,
    level: usize,
    oversampling: Oversampling,
    cache: &FactorCache,
    v: &[C64],
) -> Result<Vec<C64>> {
    disc.mesh().check_level(level)?;
    disc.space.check_len(v)?;
    let parts = disc
        .mesh()
        .active_elements(level)
        .par_iter()
        .map(|&t| {
            let nodal = disc.element_nodal_values(t, v);
            if nodal.iter().all(|x| *x == C64::new(0.0, 0.0)) {
                return Ok(None);
            }
            let p = CorrectorProblem::new(disc, t, oversampling)?;
            solve_element_corrector(disc, &p, cache, v).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![C64::new(0.0, 0.0); disc.space.num_free()];
    for s in parts.into_iter().flatten() {
        s.add_to(&mut out);
    }
    Ok(out)
}

/// Gradient energy of a corrector outside growing patches.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayProfile {
    pub element: ElementId,
    /// `‖∇C_{ℓ,T}v‖` on `D ∖ N^m_ℓ(T)` for `m = 0, 1, …` until the patch covers `D`.
    pub annuli: Vec<f64>,
    pub total: f64,
    /// Fitted decay rate `β̂` (geometric rate per patch layer).
    pub beta: f64,
}

/// Minimum number of nonzero annuli needed for a decay fit.
pub const MIN_DECAY_POINTS: usize = 3;

/// Decay of the global element corrector `C_{ℓ,T} v` away from `T`.
pub fn decay_profile(disc: &Discretization, element: ElementId, cache: &FactorCache, v: &[C64]) -> Result<DecayProfile> {
    let problem = CorrectorProblem::new(disc, element, Oversampling::Global)?;
    let sol = solve_element_corrector(disc, &problem, cache, v)?;
    let space = &disc.space;
    let mesh = disc.mesh();
    let w = space.extend(&sol.to_global(space.num_free()));
    let n = space.cells_per_side();
    let mut energy = vec![0.0; n * n];
    for cy in 0..n {
        for cx in 0..n {
            if !space.is_cell_active(cx, cy) {
                continue;
            }
            let vals = space.cell_nodes(cx, cy).map(|k| w[k]);
            let mut e = C64::new(0.0, 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    e += vals[i].conj() * crate::fem::STIFFNESS_REF[i][j] * vals[j];
                }
            }
            energy[cy * n + cx] = e.re.max(0.0);
        }
    }
    let total = energy.iter().sum::<f64>().sqrt();
    let mut annuli = Vec::new();
    for m in 0.. {
        let patch = mesh.patch(element, m)?;
        if patch.len() == mesh.num_active(element.level) {
            break;
        }
        let mut s = 0.0;
        for cy in 0..n {
            for cx in 0..n {
                if energy[cy * n + cx] > 0.0 && !patch.contains(mesh.containing_element(cx, cy, element.level)) {
                    s += energy[cy * n + cx];
                }
            }
        }
        annuli.push(s.sqrt());
    }
    let pts: Vec<(f64, f64)> = annuli
        .iter()
        .enumerate()
        .filter(|(_, a)| **a > 0.0)
        .map(|(m, a)| (m as f64, a.ln()))
        .collect();
    if pts.len() < MIN_DECAY_POINTS {
        return Err(Error::DegenerateFit(pts.len()));
    }
    let beta = least_squares_slope(&pts).exp();
    Ok(DecayProfile {
        element,
        annuli,
        total,
        beta,
    })
}

/// Slope of the least-squares line through `(x, y)` points.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
