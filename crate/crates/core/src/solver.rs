//! Linear solvers: sparse direct LU, restarted GMRES, and spectral
//! diagnostics (condition numbers and field-of-values samples).

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::rng;
use crate::sparse::{dot, norm2, ComplexSparseMatrix};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Factorizations run sequentially inside faer; parallelism is applied one
/// level up (over element problems), which also keeps results reproducible.
fn init_faer() {
    static INIT: Once = Once::new();
    INIT.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

/// Sparse LU factorization with partial pivoting.
pub struct SparseLu {
    lu: Lu<usize, C64>,
    n: usize,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.n).finish()
    }
}

impl SparseLu {
    pub fn factor(a: &ComplexSparseMatrix) -> Result<Self> {
        init_faer();
        if a.nrows() != a.ncols() {
            return Err(Error::Factorization(format!(
                "matrix is not square ({}x{})",
                a.nrows(),
                a.ncols()
            )));
        }
        let lu = a.to_faer()?.sp_lu().map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => {
                Error::Factorization(format!("structurally singular: no pivot in column {index}"))
            }
            other => Error::Factorization(format!("{other:?}")),
        })?;
        Ok(Self { lu, n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A X = B` for the columns of `rhs` in place.
    pub fn solve_mat_in_place(&self, rhs: &mut faer::Mat<C64>) {
        assert_eq!(rhs.nrows(), self.n);
        self.lu.solve_in_place(rhs.as_mut());
    }

    pub fn solve(&self, rhs: &[C64]) -> Vec<C64> {
        assert_eq!(rhs.len(), self.n);
        let mut m = faer::Mat::<C64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }

    /// Solves `Aᴴ x = rhs`.
    pub fn solve_adjoint(&self, rhs: &[C64]) -> Vec<C64> {
        assert_eq!(rhs.len(), self.n);
        let mut m = faer::Mat::<C64>::from_fn(self.n, 1, |i, _| rhs[i]);
        self.lu.solve_adjoint_in_place(m.as_mut());
        (0..self.n).map(|i| m[(i, 0)]).collect()
    }
}

pub fn relative_residual(a: &ComplexSparseMatrix, x: &[C64], b: &[C64]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

/// Direct solve with up to two steps of iterative refinement, failing if the
/// relative residual stays above `tol`.
pub fn solve_checked(a: &ComplexSparseMatrix, lu: &SparseLu, b: &[C64], tol: f64) -> Result<Vec<C64>> {
    let mut x = lu.solve(b);
    let mut res = relative_residual(a, &x, b);
    for _ in 0..2 {
        if res <= tol || !res.is_finite() {
            break;
        }
        let ax = a.mul_vec(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
        res = relative_residual(a, &x, b);
    }
    if !(res <= tol) {
        return Err(Error::InaccurateSolve {
            residual: res,
            tolerance: tol,
        });
    }
    Ok(x)
}

/// `sparse_lu` followed by a checked solve.
pub fn direct_solve(a: &ComplexSparseMatrix, b: &[C64], tol: f64) -> Result<Vec<C64>> {
    let lu = SparseLu::factor(a)?;
    solve_checked(a, &lu, b, tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub restart: usize,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        Self {
            restart: 50,
            rtol: 1e-6,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresReport {
    pub iterations: usize,
    pub restarts: usize,
    /// Relative residual estimate after every iteration.
    pub residual_history: Vec<f64>,
    /// Iteration indices at which a restart cycle begins.
    pub cycle_starts: Vec<usize>,
    pub converged: bool,
    /// True relative residual `|b - A x| / |b|` of the returned iterate.
    pub final_residual: f64,
}

/// Restarted GMRES for `A x = b` with modified Gram–Schmidt and one
/// reorthogonalization pass. `apply(x, y)` must write `y = A x`.
pub fn gmres<F>(apply: F, b: &[C64], config: &GmresConfig, x0: Option<&[C64]>) -> Result<(Vec<C64>, GmresReport)>
where
    F: Fn(&[C64], &mut [C64]),
{
    if config.restart == 0 || !(config.rtol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gmres needs restart >= 1 and rtol > 0, got {} and {}",
            config.restart, config.rtol
        )));
    }
    let n = b.len();
    let mut x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: x0.len(),
                });
            }
            x0.to_vec()
        }
        None => vec![ZERO; n],
    };
    let bnorm = norm2(b);
    let mut report = GmresReport {
        iterations: 0,
        restarts: 0,
        residual_history: Vec::new(),
        cycle_starts: Vec::new(),
        converged: false,
        final_residual: 0.0,
    };
    if bnorm == 0.0 {
        x.fill(ZERO);
        report.converged = true;
        return Ok((x, report));
    }

    let mut ax = vec![ZERO; n];
    loop {
        apply(&x, &mut ax);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        report.final_residual = beta / bnorm;
        if report.final_residual <= config.rtol {
            report.converged = true;
            break;
        }
        if report.iterations >= config.max_iter {
            break;
        }
        if !report.cycle_starts.is_empty() {
            report.restarts += 1;
        }
        report.cycle_starts.push(report.iterations);

        let m = config.restart;
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        // column k of the Hessenberg matrix, already rotated
        let mut hess: Vec<Vec<C64>> = Vec::with_capacity(m);
        let mut rotations: Vec<(f64, C64)> = Vec::with_capacity(m);
        let mut g = vec![ZERO; m + 1];
        g[0] = C64::new(beta, 0.0);

        let mut w = vec![ZERO; n];
        let mut k = 0;
        while k < m {
            apply(&basis[k], &mut w);
            report.iterations += 1;
            let mut h = vec![ZERO; k + 2];
            for _pass in 0..2 {
                for (j, q) in basis.iter().enumerate() {
                    let hj = dot(q, &w);
                    h[j] += hj;
                    w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= hj * qi);
                }
            }
            let hnext = norm2(&w);
            h[k + 1] = C64::new(hnext, 0.0);
            for (j, &(c, s)) in rotations.iter().enumerate() {
                let (a, bb) = (h[j], h[j + 1]);
                h[j] = c * a + s * bb;
                h[j + 1] = -s.conj() * a + c * bb;
            }
            let (c, s, rnorm) = givens(h[k], h[k + 1]);
            h[k] = rnorm;
            h[k + 1] = ZERO;
            rotations.push((c, s));
            let (gk, gk1) = (g[k], g[k + 1]);
            g[k] = c * gk + s * gk1;
            g[k + 1] = -s.conj() * gk + c * gk1;
            hess.push(h);
            let est = g[k + 1].norm() / bnorm;
            report.residual_history.push(est);
            k += 1;

            let hnorm = hess[k - 1].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let breakdown = hnext <= 1e-14 * hnorm.max(f64::MIN_POSITIVE);
            if breakdown || est <= config.rtol || report.iterations >= config.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
            #[cfg(debug_assertions)]
            debug_check_orthogonality(&basis);
        }

        // back substitution on the rotated Hessenberg system
        let mut y = vec![ZERO; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for (j, yj) in y.iter().enumerate().skip(i + 1) {
                acc -= hess[j][i] * yj;
            }
            y[i] = acc / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut().zip(&basis[j]).for_each(|(xi, q)| *xi += yj * q);
        }
    }
    Ok((x, report))
}

/// Rotation `[c s; -s̄ c]` mapping `(a, b)` to `(r, 0)`.
fn givens(a: C64, b: C64) -> (f64, C64, C64) {
    let (na, nb) = (a.norm(), b.norm());
    if nb == 0.0 {
        return (1.0, ZERO, a);
    }
    if na == 0.0 {
        return (0.0, C64::new(1.0, 0.0) * (b.conj() / nb), C64::new(nb, 0.0));
    }
    let r = na.hypot(nb);
    let phase = a / na;
    (na / r, phase * b.conj() / r, phase * r)
}

#[cfg(debug_assertions)]
fn debug_check_orthogonality(basis: &[Vec<C64>]) {
    let last = basis.last().unwrap();
    for q in &basis[..basis.len() - 1] {
        let ip = dot(q, last).norm();
        debug_assert!(ip <= 1e-10, "Krylov basis lost orthogonality: {ip:e}");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMethod {
    DenseSvd,
    PowerIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDiagnostics {
    pub condition: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub method: ConditionMethod,
    /// Rayleigh quotients `ξᴴAξ / ξᴴξ` for random complex Gaussian `ξ`.
    pub fov_samples: Vec<C64>,
    pub fov_min_modulus: f64,
    pub fov_max_modulus: f64,
    pub seed: u64,
    /// False when a power iteration stopped before reaching its tolerance.
    pub converged: bool,
}

/// Blocks below this dimension get an exact dense SVD.
pub const DENSE_SVD_LIMIT: usize = 2000;

pub fn diagnostics(a: &ComplexSparseMatrix, samples: usize, seed: u64) -> Result<SpectralDiagnostics> {
    diagnostics_with_limit(a, samples, seed, DENSE_SVD_LIMIT)
}

pub fn diagnostics_with_limit(
    a: &ComplexSparseMatrix,
    samples: usize,
    seed: u64,
    dense_limit: usize,
) -> Result<SpectralDiagnostics> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one field-of-values sample required".into()));
    }
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::InvalidArgument("diagnostics need a non-empty square matrix".into()));
    }
    let (sigma_max, sigma_min, method, converged) = if a.nrows() < dense_limit {
        let (smax, smin) = dense_extreme_singular_values(a)?;
        (smax, smin, ConditionMethod::DenseSvd, true)
    } else {
        let (smax, c1) = power_sigma_max(a, seed);
        let (smin, c2) = inverse_power_sigma_min(a, seed)?;
        (smax, smin, ConditionMethod::PowerIteration, c1 && c2)
    };
    let fov_samples = field_of_values_samples(a, samples, seed);
    let moduli = fov_samples.iter().map(|z| z.norm());
    let fov_min_modulus = moduli.clone().fold(f64::INFINITY, f64::min);
    let fov_max_modulus = moduli.fold(0.0, f64::max);
    Ok(SpectralDiagnostics {
        condition: (sigma_max / sigma_min).max(1.0),
        sigma_max,
        sigma_min,
        method,
        fov_samples,
        fov_min_modulus,
        fov_max_modulus,
        seed,
        converged,
    })
}

pub fn dense_extreme_singular_values(a: &ComplexSparseMatrix) -> Result<(f64, f64)> {
    let sv = a
        .to_faer_dense()
        .singular_values()
        .map_err(|e| Error::Factorization(format!("dense SVD failed: {e:?}")))?;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((smax, smin))
}

pub fn field_of_values_samples(a: &ComplexSparseMatrix, samples: usize, seed: u64) -> Vec<C64> {
    let mut rng = rng::seeded(seed);
    (0..samples)
        .map(|_| {
            let xi = rng::complex_gaussian(&mut rng, a.ncols());
            a.form(&xi, &xi) / dot(&xi, &xi)
        })
        .collect()
}

const POWER_MAX_ITER: usize = 2000;
const POWER_RTOL: f64 = 1e-8;

fn power_sigma_max(a: &ComplexSparseMatrix, seed: u64) -> (f64, bool) {
    let ah = a.conj_transpose();
    let mut rng = rng::seeded(seed ^ 0x5eed_0001);
    let mut v = rng::complex_gaussian(&mut rng, a.ncols());
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = ah.mul_vec(&a.mul_vec(&v));
        let next = dot(&v, &w).re;
        v = w;
        normalize(&mut v);
        if (next - lambda).abs() <= POWER_RTOL * next.abs() {
            return (next.max(0.0).sqrt(), true);
        }
        lambda = next;
    }
    (lambda.max(0.0).sqrt(), false)
}

fn inverse_power_sigma_min(a: &ComplexSparseMatrix, seed: u64) -> Result<(f64, bool)> {
    let lu = SparseLu::factor(a)?;
    let mut rng = rng::seeded(seed ^ 0x5eed_0002);
    let mut v = rng::complex_gaussian(&mut rng, a.ncols());
    normalize(&mut v);
    let mut mu = 0.0;
    for _ in 0..POWER_MAX_ITER {
        // (AᴴA)⁻¹ v = A⁻¹ A⁻ᴴ v
        let w = lu.solve(&lu.solve_adjoint(&v));
        let next = dot(&v, &w).re;
        v = w;
        normalize(&mut v);
        if (next - mu).abs() <= POWER_RTOL * next.abs() {
            return Ok((1.0 / next.sqrt(), true));
        }
        mu = next;
    }
    Ok((1.0 / mu.sqrt(), false))
}

fn normalize(v: &mut [C64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
