//! Flat `key=value` configuration with command-line overrides.
//!
//! Precedence is command line, then file, then the defaults of the chosen
//! experiment. Every key is validated up front so that a bad configuration
//! fails before any row runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use mrlod_core::corrector::Oversampling;
use mrlod_core::fem::{CoefficientField, Source};
use mrlod_core::mesh::{BoundaryKind, BoundaryLayout, Geometry, MeshHierarchy};
use mrlod_core::multires::{BasisVariant, SolveStrategy};
use mrlod_core::solver::GmresConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    Convergence,
    Stabilization,
    Varcoeff,
    Scattering,
    Decay,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Convergence,
        Experiment::Stabilization,
        Experiment::Varcoeff,
        Experiment::Scattering,
        Experiment::Decay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::Stabilization => "stabilization",
            Experiment::Varcoeff => "varcoeff",
            Experiment::Scattering => "scattering",
            Experiment::Decay => "decay",
        }
    }

    /// Desk-scale defaults.
    fn defaults(self) -> Vec<(&'static str, &'static str)> {
        const COMMON: &[(&str, &str)] = &[
            ("problem", "helmholtz"),
            ("variant", "stabilized"),
            ("source", "sincos"),
            ("source_value", "1"),
            ("bump_radius", "0.05"),
            ("bump_center", "0.125,0.125"),
            ("bump_amplitude", "10000"),
            ("boundary", "robin"),
            ("geometry", "square"),
            ("hole_lo", "0.375"),
            ("hole_hi", "0.625"),
            ("hole_boundary", "dirichlet"),
            ("coefficient", "constant"),
            ("coef_value", "1"),
            ("epsilon", "0.03125"),
            ("coef_min", "1"),
            ("coef_max", "16"),
            ("coef_seed", "1"),
            ("strategy", "direct"),
            ("gmres_restart", "50"),
            ("gmres_rtol", "1e-6"),
            ("gmres_max_iter", "2000"),
            ("seed", "0"),
            ("fov_samples", "100"),
            ("slope_first", "1"),
            ("slope_points", "4"),
            ("timings", "true"),
            ("m_levels", ""),
        ];
        let specific: &[(&str, &str)] = match self {
            Experiment::Convergence => &[
                ("kappa", "1"),
                ("H1", "0.5"),
                ("L", "5"),
                ("h", "0.0078125"),
                ("m", "1,2,3"),
            ],
            Experiment::Stabilization => &[
                ("problem", "poisson"),
                ("kappa", "0"),
                ("H1", "0.125,0.0625,0.03125,0.015625"),
                ("L", "1"),
                ("h", "0.0078125"),
                ("m", "1,2,3,4"),
                ("variant", "stabilized,normal"),
                ("boundary", "dirichlet"),
            ],
            Experiment::Varcoeff => &[
                ("kappa", "4"),
                ("H1", "0.125"),
                ("L", "3"),
                ("h", "0.0078125"),
                ("m", "2"),
                ("coefficient", "inclusions"),
                ("source", "bump"),
                ("bump_radius", "0.125"),
                ("bump_center", "0.5,0.5"),
                ("slope_points", "3"),
            ],
            Experiment::Scattering => &[
                ("kappa", "16"),
                ("H1", "0.125"),
                ("L", "4"),
                ("h", "0.0078125"),
                ("m", "2"),
                ("geometry", "hole"),
                ("source", "bump"),
                ("strategy", "gmres"),
            ],
            Experiment::Decay => &[
                ("kappa", "2"),
                ("H1", "0.125"),
                ("L", "1"),
                ("h", "0.015625"),
                ("m", "inf"),
            ],
        };
        specific
            .iter()
            .chain(COMMON.iter())
        .copied()
        .collect()
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment `{s}`")))
    }
}

/// Raw key/value pairs with provenance-free precedence merging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", lineno + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// `other` wins on conflicts.
    pub fn merged_with(mut self, other: &RawConfig) -> Self {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Helmholtz,
    /// `κ = 0` with homogeneous Dirichlet conditions.
    Poisson,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Helmholtz => "helmholtz",
            Problem::Poisson => "poisson",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientSpec {
    Constant(f64),
    Inclusions { epsilon: f64, min: f64, max: f64, seed: u64 },
}

impl CoefficientSpec {
    pub fn build(&self, cells_per_side: usize) -> mrlod_core::Result<CoefficientField> {
        match *self {
            CoefficientSpec::Constant(v) => CoefficientField::constant(cells_per_side, v),
            CoefficientSpec::Inclusions { epsilon, min, max, seed } => {
                CoefficientField::inclusions(cells_per_side, epsilon, min, max, seed)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, CoefficientSpec::Constant(_))
    }
}

/// Oversampling of one series: uniform `m` or one value per level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OversamplingSpec {
    Uniform(Oversampling),
    PerLevel(Vec<Oversampling>),
}

impl OversamplingSpec {
    pub fn as_slice(&self) -> &[Oversampling] {
        match self {
            OversamplingSpec::Uniform(m) => std::slice::from_ref(m),
            OversamplingSpec::PerLevel(v) => v,
        }
    }
}

impl fmt::Display for OversamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OversamplingSpec::Uniform(m) => write!(f, "{m}"),
            OversamplingSpec::PerLevel(v) => {
                let parts: Vec<String> = v.iter().map(ToString::to_string).collect();
                f.write_str(&parts.join(";"))
            }
        }
    }
}

/// Fully resolved and validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub problem: Problem,
    pub kappas: Vec<f64>,
    pub h1s: Vec<f64>,
    pub levels: usize,
    pub h: f64,
    pub oversampling: Vec<OversamplingSpec>,
    pub variants: Vec<BasisVariant>,
    pub source: Source,
    pub geometry: Geometry,
    pub boundary: BoundaryLayout,
    pub coefficient: CoefficientSpec,
    pub strategy: SolveStrategy,
    pub seed: u64,
    pub fov_samples: usize,
    pub slope_first: usize,
    pub slope_points: usize,
    pub timings: bool,
    /// Every key in effect, defaults included.
    pub resolved: RawConfig,
}

fn parse_scalar<T: FromStr>(raw: &RawConfig, key: &str) -> Result<T, CliError> {
    let v = raw.get(key).ok_or_else(|| CliError::Config(format!("missing key `{key}`")))?;
    v.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value `{v}` for `{key}`")))
}

fn parse_list<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Vec<T>, CliError> {
    let v = raw.get(key).ok_or_else(|| CliError::Config(format!("missing key `{key}`")))?;
    let out = v
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<Vec<T>, _>>()
        .map_err(|_| CliError::Config(format!("invalid list `{v}` for `{key}`")))?;
    if out.is_empty() {
        return Err(CliError::Config(format!("`{key}` must not be empty")));
    }
    Ok(out)
}

fn parse_bool(raw: &RawConfig, key: &str) -> Result<bool, CliError> {
    match raw.get(key).map(str::trim) {
        Some("true" | "1" | "yes") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        other => Err(CliError::Config(format!("invalid boolean {other:?} for `{key}`"))),
    }
}

fn core_config_error(key: &str, e: mrlod_core::Error) -> CliError {
    CliError::Config(format!("{key}: {e}"))
}

const KNOWN_KEYS: &[&str] = &[
    "kappa", "H1", "L", "h", "m", "m_levels", "variant", "problem", "source", "source_value", "bump_radius",
    "bump_center", "bump_amplitude", "boundary", "geometry", "hole_lo", "hole_hi", "hole_boundary", "coefficient",
    "coef_value", "epsilon", "coef_min", "coef_max", "coef_seed", "strategy", "gmres_restart", "gmres_rtol",
    "gmres_max_iter", "seed", "fov_samples", "slope_first", "slope_points", "timings",
];

impl ExperimentConfig {
    /// Resolves `file` and `overrides` on top of the experiment defaults.
    pub fn resolve(experiment: Experiment, file: &RawConfig, overrides: &RawConfig) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (k, v) in experiment.defaults() {
            raw.values.entry(k.to_string()).or_insert_with(|| v.to_string());
        }
        let raw = raw.merged_with(file).merged_with(overrides);
        if let Some(e) = raw.get("experiment") {
            if e != experiment.name() {
                return Err(CliError::Config(format!(
                    "config is for experiment `{e}`, not `{experiment}`"
                )));
            }
        }
        if let Some((k, _)) = raw.iter().find(|(k, _)| *k != "experiment" && !KNOWN_KEYS.contains(k)) {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }

        let problem = match raw.get("problem") {
            Some("helmholtz") => Problem::Helmholtz,
            Some("poisson") => Problem::Poisson,
            other => return Err(CliError::Config(format!("invalid problem {other:?}"))),
        };
        let mut kappas: Vec<f64> = parse_list(&raw, "kappa")?;
        if problem == Problem::Poisson {
            kappas = vec![0.0];
        } else if kappas.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(CliError::Config("Helmholtz wave numbers must be positive".into()));
        }
        let h1s: Vec<f64> = parse_list(&raw, "H1")?;
        let levels: usize = parse_scalar(&raw, "L")?;
        if levels == 0 {
            return Err(CliError::Config("L must be at least 1".into()));
        }
        let h: f64 = parse_scalar(&raw, "h")?;

        let oversampling = match raw.get("m_levels").map(str::trim) {
            Some(s) if !s.is_empty() => {
                let per: Vec<Oversampling> = parse_list(&raw, "m_levels")?;
                if per.len() != levels {
                    return Err(CliError::Config(format!("m_levels needs {levels} entries, got {}", per.len())));
                }
                vec![OversamplingSpec::PerLevel(per)]
            }
            _ => parse_list::<Oversampling>(&raw, "m")?
                .into_iter()
                .map(OversamplingSpec::Uniform)
                .collect(),
        };
        let variants: Vec<BasisVariant> = parse_list(&raw, "variant")?;

        let source = match raw.get("source") {
            Some("sincos") => Source::SinCos,
            Some("zero") => Source::Zero,
            Some("constant") => Source::Constant(parse_scalar(&raw, "source_value")?),
            Some("bump") => {
                let c: Vec<f64> = parse_list(&raw, "bump_center")?;
                if c.len() != 2 {
                    return Err(CliError::Config("bump_center needs two coordinates".into()));
                }
                Source::Bump {
                    radius: parse_scalar(&raw, "bump_radius")?,
                    center: (c[0], c[1]),
                    amplitude: parse_scalar(&raw, "bump_amplitude")?,
                }
            }
            other => return Err(CliError::Config(format!("invalid source {other:?}"))),
        };

        let geometry = match raw.get("geometry") {
            Some("square") => Geometry::UnitSquare,
            Some("hole") => {
                let (lo, hi): (f64, f64) = (parse_scalar(&raw, "hole_lo")?, parse_scalar(&raw, "hole_hi")?);
                Geometry::SquareWithHole { lo: [lo, lo], hi: [hi, hi] }
            }
            other => return Err(CliError::Config(format!("invalid geometry {other:?}"))),
        };
        let outer: BoundaryKind = if problem == Problem::Poisson {
            BoundaryKind::Dirichlet
        } else {
            parse_scalar(&raw, "boundary")?
        };
        let mut boundary = BoundaryLayout::uniform(outer);
        boundary.hole = parse_scalar(&raw, "hole_boundary")?;

        let coefficient = match raw.get("coefficient") {
            Some("constant") => CoefficientSpec::Constant(parse_scalar(&raw, "coef_value")?),
            Some("inclusions") => CoefficientSpec::Inclusions {
                epsilon: parse_scalar(&raw, "epsilon")?,
                min: parse_scalar(&raw, "coef_min")?,
                max: parse_scalar(&raw, "coef_max")?,
                seed: parse_scalar(&raw, "coef_seed")?,
            },
            other => return Err(CliError::Config(format!("invalid coefficient {other:?}"))),
        };

        let gmres = GmresConfig {
            restart: parse_scalar(&raw, "gmres_restart")?,
            rtol: parse_scalar(&raw, "gmres_rtol")?,
            max_iter: parse_scalar(&raw, "gmres_max_iter")?,
        };
        if gmres.restart == 0 || !(gmres.rtol > 0.0) {
            return Err(CliError::Config("gmres_restart and gmres_rtol must be positive".into()));
        }
        let strategy = match raw.get("strategy") {
            Some("direct") => SolveStrategy::DirectAll,
            Some("gmres") => SolveStrategy::DirectFirstGmresRest(gmres),
            other => return Err(CliError::Config(format!("invalid strategy {other:?}"))),
        };

        let cfg = ExperimentConfig {
            experiment,
            problem,
            kappas,
            h1s,
            levels,
            h,
            oversampling,
            variants,
            source,
            geometry,
            boundary,
            coefficient,
            strategy,
            seed: parse_scalar(&raw, "seed")?,
            fov_samples: parse_scalar(&raw, "fov_samples")?,
            slope_first: parse_scalar(&raw, "slope_first")?,
            slope_points: parse_scalar(&raw, "slope_points")?,
            timings: parse_bool(&raw, "timings")?,
            resolved: raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks that need no linear algebra.
    fn validate(&self) -> Result<(), CliError> {
        if self.fov_samples == 0 {
            return Err(CliError::Config("fov_samples must be positive".into()));
        }
        if self.slope_first == 0 {
            return Err(CliError::Config("slope_first is 1-based".into()));
        }
        if self.experiment == Experiment::Stabilization && self.levels != 1 {
            return Err(CliError::Config("stabilization runs a single level (L=1)".into()));
        }
        if self.experiment != Experiment::Stabilization && self.h1s.len() != 1 && self.experiment != Experiment::Decay {
            return Err(CliError::Config("H1 sweeps are only supported by stabilization and decay".into()));
        }
        let n = (1.0 / self.h).round() as usize;
        for &h1 in &self.h1s {
            self.mesh(h1).map_err(|e| core_config_error("mesh", e))?;
        }
        self.source.validate(n).map_err(|e| core_config_error("source", e))?;
        self.coefficient.build(n).map_err(|e| core_config_error("coefficient", e))?;
        if self.problem == Problem::Poisson && self.boundary.has_robin() {
            return Err(CliError::Config("Poisson mode uses Dirichlet conditions only".into()));
        }
        if self.problem == Problem::Helmholtz && !self.boundary.has_robin() {
            return Err(CliError::Config("Helmholtz problems need a Robin boundary".into()));
        }
        Ok(())
    }

    pub fn mesh(&self, h1: f64) -> mrlod_core::Result<MeshHierarchy> {
        MeshHierarchy::build(h1, self.levels, self.h, self.geometry, self.boundary)
    }

    pub fn gmres(&self) -> Option<GmresConfig> {
        match self.strategy {
            SolveStrategy::DirectFirstGmresRest(g) => Some(g),
            SolveStrategy::DirectAll => None,
        }
    }
}
