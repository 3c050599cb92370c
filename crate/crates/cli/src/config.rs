//! Run configuration: defaults, a flat `section.key = value` file, and flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Where the Dirichlet-to-Neumann constant comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DGammaSource {
    ClosedForm,
    Calibrated,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub m: usize,
    pub gamma: f64,
    pub model: String,
    pub d_gamma: DGammaSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub s_max: f64,
    pub lambda_max: f64,
    pub n_s: usize,
    pub n_lambda: usize,
    pub grading: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerConfig {
    pub half_width: f64,
    pub cells: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleConfig {
    pub tol: f64,
    pub init: String,
    /// second initialization for the uniqueness comparison; "none" skips it
    pub compare_init: String,
    pub uniqueness_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub sign_tol: f64,
    pub barrier_tol: f64,
    pub b: Vec<f64>,
    pub radii: Vec<f64>,
    pub trust_s: f64,
    pub trust_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub cutoff_eps: Vec<f64>,
    pub cutoff_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryConfig {
    pub cone_m: Vec<usize>,
    pub cone_points: usize,
    pub cone_radius: f64,
    pub samples: usize,
    pub narrow_samples: usize,
    pub probe_points: usize,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub layer: LayerConfig,
    pub saddle: SaddleConfig,
    pub verify: VerifyConfig,
    pub stability: StabilityConfig,
    pub geometry: GeometryConfig,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig { m: 7, gamma: 0.5, model: "cubic".into(), d_gamma: DGammaSource::ClosedForm },
            grid: GridConfig { s_max: 16.0, lambda_max: 16.0, n_s: 96, n_lambda: 32, grading: None },
            layer: LayerConfig { half_width: 50.0, cells: 2000, tol: 1e-8 },
            saddle: SaddleConfig {
                tol: 1e-7,
                init: "barrier".into(),
                compare_init: "zero-jiggle".into(),
                uniqueness_tol: 1e-3,
            },
            verify: VerifyConfig {
                sign_tol: 1e-8,
                barrier_tol: 1e-6,
                b: vec![2.0, 2.5, 3.0],
                radii: vec![4.0, 8.0, 12.0],
                trust_s: 0.6,
                trust_lambda: 0.5,
            },
            stability: StabilityConfig {
                max_iter: 80,
                tol: 1e-8,
                cutoff_eps: vec![8.0, 4.0, 2.0, 1.0],
                cutoff_radius: None,
            },
            geometry: GeometryConfig {
                cone_m: vec![2, 7],
                cone_points: 5,
                cone_radius: 1.0,
                samples: 1_000_000,
                narrow_samples: 100_000,
                probe_points: 5,
                eps: 0.1,
            },
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_opt(key: &str, v: &str) -> Result<Option<f64>, CliError> {
    if v == "auto" || v == "none" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

/// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn read_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
        let k = k.trim();
        if k.is_empty() || !k.contains('.') {
            return Err(CliError::Config(format!("line {}: keys look like section.name, got '{k}'", no + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {k}", no + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (k, v) in read_pairs(&text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one dotted key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "problem.m" => self.problem.m = parse(key, v)?,
            "problem.gamma" => self.problem.gamma = parse(key, v)?,
            "problem.model" => self.problem.model = v.to_string(),
            "problem.d_gamma" => {
                self.problem.d_gamma = match v {
                    "closed-form" => DGammaSource::ClosedForm,
                    "calibrated" => DGammaSource::Calibrated,
                    _ => DGammaSource::Value(parse(key, v)?),
                }
            }
            "grid.S" => self.grid.s_max = parse(key, v)?,
            "grid.Lambda" => self.grid.lambda_max = parse(key, v)?,
            "grid.n_s" => self.grid.n_s = parse(key, v)?,
            "grid.n_lambda" => self.grid.n_lambda = parse(key, v)?,
            "grid.grading" => self.grid.grading = parse_opt(key, v)?,
            "layer.L" => self.layer.half_width = parse(key, v)?,
            "layer.N" => self.layer.cells = parse(key, v)?,
            "layer.tol" => self.layer.tol = parse(key, v)?,
            "saddle.tol" => self.saddle.tol = parse(key, v)?,
            "saddle.init" => self.saddle.init = v.to_string(),
            "saddle.compare_init" => self.saddle.compare_init = v.to_string(),
            "saddle.uniqueness_tol" => self.saddle.uniqueness_tol = parse(key, v)?,
            "verify.sign_tol" => self.verify.sign_tol = parse(key, v)?,
            "verify.barrier_tol" => self.verify.barrier_tol = parse(key, v)?,
            "verify.b" => self.verify.b = parse_list(key, v)?,
            "verify.radii" => self.verify.radii = parse_list(key, v)?,
            "verify.trust_s" => self.verify.trust_s = parse(key, v)?,
            "verify.trust_lambda" => self.verify.trust_lambda = parse(key, v)?,
            "stability.max_iter" => self.stability.max_iter = parse(key, v)?,
            "stability.tol" => self.stability.tol = parse(key, v)?,
            "stability.cutoff_eps" => self.stability.cutoff_eps = parse_list(key, v)?,
            "stability.cutoff_radius" => self.stability.cutoff_radius = parse_opt(key, v)?,
            "geometry.cone_m" => self.geometry.cone_m = parse_list(key, v)?,
            "geometry.cone_points" => self.geometry.cone_points = parse(key, v)?,
            "geometry.cone_radius" => self.geometry.cone_radius = parse(key, v)?,
            "geometry.samples" => self.geometry.samples = parse::<f64>(key, v)? as usize,
            "geometry.narrow_samples" => self.geometry.narrow_samples = parse::<f64>(key, v)? as usize,
            "geometry.probe_points" => self.geometry.probe_points = parse(key, v)?,
            "geometry.eps" => self.geometry.eps = parse(key, v)?,
            "run.seed" => self.seed = parse(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.problem.m == 0 {
            return bad("problem.m must be >= 1".into());
        }
        if !(self.problem.gamma > 0.0 && self.problem.gamma < 1.0) {
            return bad(format!("problem.gamma must lie in (0, 1), got {}", self.problem.gamma));
        }
        if !matches!(self.saddle.init.as_str(), "barrier" | "zero-jiggle") {
            return bad(format!("saddle.init must be barrier or zero-jiggle, got {}", self.saddle.init));
        }
        if !matches!(self.saddle.compare_init.as_str(), "barrier" | "zero-jiggle" | "none") {
            return bad(format!("saddle.compare_init must be barrier, zero-jiggle or none, got {}", self.saddle.compare_init));
        }
        if !(self.verify.trust_s > 0.0 && self.verify.trust_s <= 1.0)
            || !(self.verify.trust_lambda > 0.0 && self.verify.trust_lambda <= 1.0)
        {
            return bad("verify.trust_s and verify.trust_lambda must lie in (0, 1]".into());
        }
        Ok(())
    }
}
