//! Experiment runners. Each returns a [`Report`] whose rows are independent:
//! a failing row is recorded with its error message and the sweep goes on.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use mrlod_core::corrector::{decay_profile, least_squares_slope, FactorCache};
use mrlod_core::fem::{reference_solve, Discretization, FineSpace};
use mrlod_core::mesh::ElementId;
use mrlod_core::multires::{
    assemble_blocks, build_level_basis, level_oversampling, solve_blocks, BasisVariant, BlockSystem, LevelBasis,
    MultiResSolution, SolveStrategy,
};
use mrlod_core::solver::{self, ConditionMethod};
use mrlod_core::sparse::sub;
use mrlod_core::transfer::TransferSet;
use mrlod_core::{Error, C64};

use crate::config::{CoefficientSpec, Experiment, ExperimentConfig, OversamplingSpec};
use crate::output::{plain, sci, Report, Table, SCHEMA_VERSION};

/// Everything a series needs on one mesh hierarchy.
pub struct Setup {
    pub disc: Discretization,
    pub transfers: TransferSet,
    pub load: Vec<C64>,
}

pub fn setup(cfg: &ExperimentConfig, kappa: f64, h1: f64) -> mrlod_core::Result<Setup> {
    let mesh = cfg.mesh(h1)?;
    let space = Arc::new(FineSpace::new(Arc::new(mesh)));
    let coef = cfg.coefficient.build(space.cells_per_side())?;
    let disc = Discretization::new(space, kappa, coef)?;
    let transfers = TransferSet::new(&disc.space)?;
    let load = disc.load_vector(&cfg.source)?;
    Ok(Setup { disc, transfers, load })
}

/// Bases, block systems and block solutions of all levels of one series.
pub struct SeriesResult {
    pub bases: Vec<LevelBasis>,
    pub system: BlockSystem,
    pub solution: MultiResSolution,
    pub wall_ms_bases: Vec<f64>,
    /// Assembly plus solve, per level.
    pub wall_ms_solve: Vec<f64>,
}

pub fn run_series(
    setup: &Setup,
    variant: BasisVariant,
    oversampling: &OversamplingSpec,
    strategy: SolveStrategy,
) -> mrlod_core::Result<SeriesResult> {
    let disc = &setup.disc;
    let levels = setup.transfers.levels();
    let mut bases = Vec::with_capacity(levels);
    let mut wall_ms_bases = Vec::with_capacity(levels);
    for l in 1..=levels {
        let start = Instant::now();
        let cache = FactorCache::new();
        let m = level_oversampling(oversampling.as_slice(), l)?;
        bases.push(build_level_basis(disc, setup.transfers.level(l), variant, m, &cache)?);
        wall_ms_bases.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let mut blocks = Vec::with_capacity(levels);
    let mut wall_ms_solve = Vec::with_capacity(levels);
    for b in &bases {
        let start = Instant::now();
        blocks.extend(assemble_blocks(disc, std::slice::from_ref(b), &setup.load)?.blocks);
        wall_ms_solve.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let system = BlockSystem {
        kappa: disc.kappa(),
        variant,
        blocks,
    };
    let solution = solve_blocks(&system, &bases, strategy)?;
    for (w, s) in wall_ms_solve.iter_mut().zip(&solution.stats) {
        *w += s.wall_ms;
    }
    Ok(SeriesResult {
        bases,
        system,
        solution,
        wall_ms_bases,
        wall_ms_solve,
    })
}

fn maybe_par<T: Sync, R: Send>(items: &[T], parallel: bool, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn ms(cfg: &ExperimentConfig, v: f64) -> String {
    if cfg.timings {
        format!("{v:.3}")
    } else {
        "0".into()
    }
}

fn status(error: &Option<String>) -> (String, String) {
    match error {
        None => ("ok".into(), String::new()),
        Some(e) => ("failed".into(), e.clone()),
    }
}

fn common_meta(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    for (k, v) in cfg.resolved.iter() {
        meta.insert(format!("config.{k}"), v.to_string());
    }
    meta.insert("experiment".into(), cfg.experiment.to_string());
    meta.insert("schema_version".into(), SCHEMA_VERSION.to_string());
    meta.insert("mrlod_version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("seed".into(), cfg.seed.to_string());
    let list = |f: &dyn Fn(f64) -> f64| cfg.kappas.iter().map(|&k| sci(f(k))).collect::<Vec<_>>().join(",");
    meta.insert("kappa2h".into(), list(&|k| k * k * cfg.h));
    let h1k: Vec<f64> = cfg.kappas.iter().flat_map(|&k| cfg.h1s.iter().map(move |&h| k * h)).collect();
    meta.insert("H1kappa".into(), h1k.iter().map(|&v| sci(v)).collect::<Vec<_>>().join(","));
    if h1k.iter().any(|&v| v > 1.0) {
        eprintln!("warning: H1*kappa exceeds 1, coarse mesh may not resolve the wavelength");
        meta.insert("resolution_warning".into(), "H1*kappa exceeds 1".into());
    }
    if cfg.gmres().is_some() {
        meta.insert("gmres_x0".into(), "zero".into());
    }
    meta
}

const SWEEP_COLUMNS: &[&str] = &[
    "schema_version",
    "experiment",
    "problem",
    "variant",
    "kappa",
    "H1",
    "HL",
    "L",
    "m",
    "h",
    "err_V",
    "ref_norm",
    "err_rel",
    "slope_window_flag",
    "seed",
    "wall_ms_bases",
    "wall_ms_solve",
    "status",
    "error",
];

const WEIGHTED_COLUMNS: &[&str] = &["err_V_weighted", "ref_norm_weighted", "err_rel_weighted"];

#[derive(Debug, Clone, Copy)]
struct Errors {
    err: f64,
    reference: f64,
    err_weighted: f64,
    reference_weighted: f64,
}

const NAN_ERRORS: Errors = Errors {
    err: f64::NAN,
    reference: f64::NAN,
    err_weighted: f64::NAN,
    reference_weighted: f64::NAN,
};

struct SeriesKey<'a> {
    kappa: f64,
    h1: f64,
    variant: BasisVariant,
    m: &'a OversamplingSpec,
}

/// One row per truncation level `L' = 1..=L` of a series.
struct SeriesRows {
    errors: Vec<Errors>,
    wall_bases: Vec<f64>,
    wall_solve: Vec<f64>,
    error: Option<String>,
}

fn sweep_series(cfg: &ExperimentConfig, key: &SeriesKey) -> SeriesRows {
    let run = || -> mrlod_core::Result<SeriesRows> {
        let s = setup(cfg, key.kappa, key.h1)?;
        let u = reference_solve(&s.disc.ops, &s.load)?;
        let series = run_series(&s, key.variant, key.m, cfg.strategy)?;
        let (reference, reference_weighted) = (s.disc.v_norm(&u, false), s.disc.v_norm(&u, true));
        let errors = (1..=cfg.levels)
            .map(|l| {
                let e = sub(&u, &series.solution.partial_sum(l));
                Errors {
                    err: s.disc.v_norm(&e, false),
                    reference,
                    err_weighted: s.disc.v_norm(&e, true),
                    reference_weighted,
                }
            })
            .collect();
        let cumulative = |v: &[f64]| {
            v.iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect::<Vec<_>>()
        };
        Ok(SeriesRows {
            errors,
            wall_bases: cumulative(&series.wall_ms_bases),
            wall_solve: cumulative(&series.wall_ms_solve),
            error: None,
        })
    };
    run().unwrap_or_else(|e| SeriesRows {
        errors: vec![NAN_ERRORS; cfg.levels],
        wall_bases: vec![0.0; cfg.levels],
        wall_solve: vec![0.0; cfg.levels],
        error: Some(e.to_string()),
    })
}

/// Levels `L'` whose rows enter the slope fit.
fn in_slope_window(cfg: &ExperimentConfig, l: usize) -> bool {
    cfg.experiment != Experiment::Stabilization && l >= cfg.slope_first && l < cfg.slope_first + cfg.slope_points
}

/// Least-squares slope of `log err` against `log H` over the slope window.
pub fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(h, e)| *h > 0.0 && *e > 0.0 && e.is_finite())
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    (pts.len() >= 2).then(|| least_squares_slope(&pts))
}

/// Convergence, stabilization and variable-coefficient sweeps.
pub fn run_sweep(cfg: &ExperimentConfig, parallel: bool) -> Report {
    let weighted = cfg.experiment == Experiment::Varcoeff;
    let mut columns: Vec<&'static str> = SWEEP_COLUMNS[..SWEEP_COLUMNS.len() - 2].to_vec();
    if weighted {
        columns.extend_from_slice(WEIGHTED_COLUMNS);
    }
    columns.extend_from_slice(&["status", "error"]);
    let mut table = Table::new(&columns);
    let mut meta = common_meta(cfg);

    let mut keys = Vec::new();
    for &kappa in &cfg.kappas {
        for &variant in &cfg.variants {
            for m in &cfg.oversampling {
                for &h1 in &cfg.h1s {
                    keys.push(SeriesKey { kappa, h1, variant, m });
                }
            }
        }
    }
    let results = maybe_par(&keys, parallel, |k| sweep_series(cfg, k));

    let mut failures = 0;
    for (key, res) in keys.iter().zip(&results) {
        let (st, msg) = status(&res.error);
        let mut window = Vec::new();
        let mut window_weighted = Vec::new();
        for l in 1..=cfg.levels {
            let e = res.errors[l - 1];
            let hl = key.h1 / f64::powi(2.0, l as i32 - 1);
            let flag = in_slope_window(cfg, l);
            if flag {
                window.push((hl, e.err));
                window_weighted.push((hl, e.err_weighted));
            }
            if res.error.is_some() {
                failures += 1;
            }
            let mut row = vec![
                ("schema_version", SCHEMA_VERSION.to_string()),
                ("experiment", cfg.experiment.to_string()),
                ("problem", cfg.problem.to_string()),
                ("variant", key.variant.to_string()),
                ("kappa", plain(key.kappa)),
                ("H1", plain(key.h1)),
                ("HL", plain(hl)),
                ("L", l.to_string()),
                ("m", key.m.to_string()),
                ("h", plain(cfg.h)),
                ("err_V", sci(e.err)),
                ("ref_norm", sci(e.reference)),
                ("err_rel", sci(e.err / e.reference)),
                ("slope_window_flag", u8::from(flag).to_string()),
                ("seed", cfg.seed.to_string()),
                ("wall_ms_bases", ms(cfg, res.wall_bases[l - 1])),
                ("wall_ms_solve", ms(cfg, res.wall_solve[l - 1])),
            ];
            if weighted {
                row.push(("err_V_weighted", sci(e.err_weighted)));
                row.push(("ref_norm_weighted", sci(e.reference_weighted)));
                row.push(("err_rel_weighted", sci(e.err_weighted / e.reference_weighted)));
            }
            row.push(("status", st.clone()));
            row.push(("error", msg.clone()));
            table.push(row);
        }
        if cfg.experiment != Experiment::Stabilization {
            let tag = format!("{}.{}.{}", plain(key.kappa), key.variant, key.m);
            if let Some(s) = fitted_slope(&window) {
                meta.insert(format!("slope.{tag}"), sci(s));
            }
            if weighted {
                if let Some(s) = fitted_slope(&window_weighted) {
                    meta.insert(format!("slope_weighted.{tag}"), sci(s));
                }
            }
        }
    }
    if let CoefficientSpec::Inclusions { seed, .. } = cfg.coefficient {
        meta.insert("coef_seed".into(), seed.to_string());
    }
    meta.insert("rows".into(), table.rows.len().to_string());
    meta.insert("failures".into(), failures.to_string());
    Report { table, meta, failures }
}

const SCATTERING_COLUMNS: &[&str] = &[
    "schema_version",
    "experiment",
    "problem",
    "variant",
    "kappa",
    "H1",
    "L",
    "m",
    "h",
    "level",
    "H",
    "dim",
    "nnz",
    "method",
    "iterations",
    "restarts",
    "converged",
    "final_residual",
    "condition",
    "sigma_min",
    "sigma_max",
    "condition_method",
    "fov_min_re",
    "fov_min_modulus",
    "coercive",
    "seed",
    "wall_ms_solve",
    "status",
    "error",
];

/// Per-level solver statistics and spectral diagnostics.
pub fn run_scattering(cfg: &ExperimentConfig, parallel: bool) -> Report {
    let mut table = Table::new(SCATTERING_COLUMNS);
    let mut meta = common_meta(cfg);
    meta.insert("sigma_min_note".into(), "smallest singular value of each level block, an empirical inf-sup proxy".into());
    let mut failures = 0;
    let h1 = cfg.h1s[0];
    let mut keys = Vec::new();
    for &kappa in &cfg.kappas {
        for &variant in &cfg.variants {
            for m in &cfg.oversampling {
                keys.push(SeriesKey { kappa, h1, variant, m });
            }
        }
    }
    let outcomes = maybe_par(&keys, parallel, |key| -> mrlod_core::Result<_> {
        let s = setup(cfg, key.kappa, key.h1)?;
        let series = run_series(&s, key.variant, key.m, cfg.strategy)?;
        let u = reference_solve(&s.disc.ops, &s.load)?;
        let err_rel = s.disc.v_norm(&sub(&u, &series.solution.combined()), false) / s.disc.v_norm(&u, false);
        let diags: Vec<mrlod_core::Result<solver::SpectralDiagnostics>> = maybe_par(&series.system.blocks, parallel, |b| {
            solver::diagnostics(&b.matrix, cfg.fov_samples, cfg.seed.wrapping_add(b.level as u64))
        });
        Ok((series, diags, err_rel))
    });
    for (key, outcome) in keys.iter().zip(outcomes) {
        let tag = format!("{}.{}.{}", plain(key.kappa), key.variant, key.m);
        let head = |level: String, hl: f64| {
            vec![
                ("schema_version", SCHEMA_VERSION.to_string()),
                ("experiment", cfg.experiment.to_string()),
                ("problem", cfg.problem.to_string()),
                ("variant", key.variant.to_string()),
                ("kappa", plain(key.kappa)),
                ("H1", plain(key.h1)),
                ("L", cfg.levels.to_string()),
                ("m", key.m.to_string()),
                ("h", plain(cfg.h)),
                ("level", level),
                ("H", plain(hl)),
            ]
        };
        match outcome {
            Err(e) => {
                failures += 1;
                let mut row = head("all".into(), f64::NAN);
                for c in &SCATTERING_COLUMNS[11..SCATTERING_COLUMNS.len() - 2] {
                    row.push((c, if *c == "seed" { cfg.seed.to_string() } else { "NaN".into() }));
                }
                row.push(("status", "failed".into()));
                row.push(("error", e.to_string()));
                table.push(row);
            }
            Ok((series, diags, err_rel)) => {
                meta.insert(format!("err_rel.{tag}"), sci(err_rel));
                for ((st, d), wall) in series.solution.stats.iter().zip(diags).zip(&series.wall_ms_solve) {
                    let hl = key.h1 / f64::powi(2.0, st.level as i32 - 1);
                    let mut row = head(st.level.to_string(), hl);
                    let (iters, restarts, conv, res) = match &st.gmres {
                        Some(g) => (
                            g.iterations.to_string(),
                            g.restarts.to_string(),
                            g.converged.to_string(),
                            sci(g.final_residual),
                        ),
                        None => ("0".into(), "0".into(), "true".into(), "NaN".into()),
                    };
                    row.push(("dim", st.dim.to_string()));
                    row.push(("nnz", st.nnz.to_string()));
                    row.push(("method", st.method.to_string()));
                    row.push(("iterations", iters));
                    row.push(("restarts", restarts));
                    row.push(("converged", conv));
                    row.push(("final_residual", res));
                    let error = match d {
                        Ok(d) => {
                            let min_re = d.fov_samples.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
                            row.push(("condition", sci(d.condition)));
                            row.push(("sigma_min", sci(d.sigma_min)));
                            row.push(("sigma_max", sci(d.sigma_max)));
                            row.push((
                                "condition_method",
                                match d.method {
                                    ConditionMethod::DenseSvd => "dense_svd".into(),
                                    ConditionMethod::PowerIteration if d.converged => "power_iteration".into(),
                                    ConditionMethod::PowerIteration => "power_iteration_unconverged".into(),
                                },
                            ));
                            row.push(("fov_min_re", sci(min_re)));
                            row.push(("fov_min_modulus", sci(d.fov_min_modulus)));
                            row.push(("coercive", (min_re > 0.0).to_string()));
                            None
                        }
                        Err(e) => {
                            for c in ["condition", "sigma_min", "sigma_max", "condition_method", "fov_min_re", "fov_min_modulus", "coercive"] {
                                row.push((c, "NaN".into()));
                            }
                            Some(e.to_string())
                        }
                    };
                    row.push(("seed", cfg.seed.wrapping_add(st.level as u64).to_string()));
                    row.push(("wall_ms_solve", ms(cfg, *wall)));
                    if error.is_some() {
                        failures += 1;
                    }
                    let (s, msg) = status(&error);
                    row.push(("status", s));
                    row.push(("error", msg));
                    table.push(row);
                }
            }
        }
    }
    meta.insert("rows".into(), table.rows.len().to_string());
    meta.insert("failures".into(), failures.to_string());
    Report { table, meta, failures }
}

const DECAY_COLUMNS: &[&str] = &[
    "schema_version",
    "experiment",
    "problem",
    "kappa",
    "H1",
    "level",
    "H",
    "kappaH",
    "h",
    "element_ix",
    "element_iy",
    "points",
    "beta_hat",
    "degenerate",
    "seed",
    "wall_ms",
    "status",
    "error",
];

/// Active element of `level` whose midpoint is closest to the domain centre.
pub fn central_element(disc: &Discretization, level: usize) -> ElementId {
    let mesh = disc.mesh();
    let hl = mesh.mesh_size(level);
    let dist = |e: &ElementId| {
        let (x, y) = ((e.ix as f64 + 0.5) * hl - 0.5, (e.iy as f64 + 0.5) * hl - 0.5);
        x * x + y * y
    };
    *mesh
        .active_elements(level)
        .iter()
        .min_by(|a, b| dist(a).total_cmp(&dist(b)))
        .expect("levels have active elements")
}

/// `P_ℓ Π̃_ℓ 1_T`: the stabilized lift of an element indicator.
pub fn stabilized_indicator(disc: &Discretization, transfers: &TransferSet, t: ElementId) -> Vec<C64> {
    let mesh = disc.mesh();
    let mut q = vec![C64::new(0.0, 0.0); mesh.num_active(t.level)];
    q[mesh.active_index(t).expect("active element")] = C64::new(1.0, 0.0);
    let tr = transfers.level(t.level);
    tr.vstable_projection(&tr.lift(&q))
}

/// Fitted corrector decay rates per wave number, coarse mesh and level.
pub fn run_decay(cfg: &ExperimentConfig, parallel: bool) -> Report {
    let mut table = Table::new(DECAY_COLUMNS);
    let mut meta = common_meta(cfg);
    let mut keys = Vec::new();
    for &kappa in &cfg.kappas {
        for &h1 in &cfg.h1s {
            for level in 1..=cfg.levels {
                keys.push((kappa, h1, level));
            }
        }
    }
    let outcomes = maybe_par(&keys, parallel, |&(kappa, h1, level)| {
        let start = Instant::now();
        let run = || -> mrlod_core::Result<_> {
            let s = setup(cfg, kappa, h1)?;
            let t = central_element(&s.disc, level);
            let v = stabilized_indicator(&s.disc, &s.transfers, t);
            let profile = decay_profile(&s.disc, t, &FactorCache::new(), &v);
            Ok((t, profile))
        };
        (run(), start.elapsed().as_secs_f64() * 1e3)
    });
    let mut failures = 0;
    for (&(kappa, h1, level), (outcome, wall)) in keys.iter().zip(outcomes) {
        let hl = h1 / f64::powi(2.0, level as i32 - 1);
        let (ix, iy, points, beta, degenerate, error) = match outcome {
            Ok((t, Ok(p))) => {
                let pts = p.annuli.iter().filter(|a| **a > 0.0).count();
                (t.ix.to_string(), t.iy.to_string(), pts.to_string(), sci(p.beta), "0", None)
            }
            Ok((t, Err(Error::DegenerateFit(n)))) => {
                (t.ix.to_string(), t.iy.to_string(), n.to_string(), "NaN".into(), "1", None)
            }
            Ok((_, Err(e))) | Err(e) => ("NaN".into(), "NaN".into(), "0".into(), "NaN".into(), "0", Some(e.to_string())),
        };
        if error.is_some() {
            failures += 1;
        } else if degenerate == "0" {
            meta.insert(format!("beta_hat.{}.{}.{level}", plain(kappa), plain(h1)), beta.clone());
        }
        let (st, msg) = status(&error);
        table.push(vec![
            ("schema_version", SCHEMA_VERSION.to_string()),
            ("experiment", cfg.experiment.to_string()),
            ("problem", cfg.problem.to_string()),
            ("kappa", plain(kappa)),
            ("H1", plain(h1)),
            ("level", level.to_string()),
            ("H", plain(hl)),
            ("kappaH", plain(kappa * hl)),
            ("h", plain(cfg.h)),
            ("element_ix", ix),
            ("element_iy", iy),
            ("points", points),
            ("beta_hat", beta),
            ("degenerate", degenerate.into()),
            ("seed", cfg.seed.to_string()),
            ("wall_ms", ms(cfg, wall)),
            ("status", st),
            ("error", msg),
        ]);
    }
    meta.insert("rows".into(), table.rows.len().to_string());
    meta.insert("failures".into(), failures.to_string());
    Report { table, meta, failures }
}

pub fn run_experiment(cfg: &ExperimentConfig, parallel: bool) -> Report {
    match cfg.experiment {
        Experiment::Convergence | Experiment::Stabilization | Experiment::Varcoeff => run_sweep(cfg, parallel),
        Experiment::Scattering => run_scattering(cfg, parallel),
        Experiment::Decay => run_decay(cfg, parallel),
    }
}
