//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments, as is anything after a `#` preceded
//! by whitespace. Keys from the file are applied first, then `--set`
//! overrides, then the whole configuration is validated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chinpaint_core::control::OptimConfig;
use chinpaint_core::decay::RegularizeConfig;
use chinpaint_core::fixtures;
use chinpaint_core::{ControlBox, CostWeights, Field, Grid, PotentialParams, SolverConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    pub directions: usize,
    pub tau: f64,
    /// `grad-check` fails above this relative error.
    pub grad_tol: f64,
    pub hess_pairs: usize,
    pub hess_tau: f64,
    pub hess_symmetry_tol: f64,
    pub hess_tol: f64,
    pub second_order_directions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayOptions {
    pub ladder: Vec<f64>,
    pub amplitude: f64,
    pub eps_scan: Vec<f64>,
    pub scan_lambda0: f64,
    pub regularize: RegularizeConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Grid size; taken from the image when unset.
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    /// Cell size; the domain is `nx h x ny h`.
    pub h: f64,
    /// Side of the built-in stripe image used when no `--image` is given.
    pub fixture_n: usize,
    pub fixture_target_blur: f64,
    pub potential: PotentialParams,
    pub solver: SolverConfig,
    pub weights: CostWeights,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Constant control used by `inpaint` and as the optimiser start; the
    /// box midpoint when unset.
    pub lambda0: Option<f64>,
    pub blur_sigma: f64,
    pub binarize_threshold: f64,
    pub seed: u64,
    /// Worker threads; 0 leaves the choice to the runtime.
    pub threads: usize,
    pub write_trajectory: bool,
    /// Trajectory read by `export-diagnostics`.
    pub trajectory: Option<PathBuf>,
    /// Extension of written images: `pgm` or `png`.
    pub image_format: String,
    pub optim: OptimConfig,
    pub check: CheckOptions,
    pub decay: DecayOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nx: None,
            ny: None,
            h: 0.25,
            fixture_n: 64,
            fixture_target_blur: 2.0,
            potential: PotentialParams { eps: 0.5, ..PotentialParams::default() },
            solver: SolverConfig::new(fixtures::FIXTURE_DT, fixtures::FIXTURE_STEPS),
            weights: CostWeights::default(),
            lambda_min: fixtures::FIXTURE_LAMBDA_MIN,
            lambda_max: fixtures::FIXTURE_LAMBDA_MAX,
            lambda0: None,
            blur_sigma: 1.0,
            binarize_threshold: 0.5,
            seed: 0,
            threads: 0,
            write_trajectory: true,
            trajectory: None,
            image_format: "pgm".into(),
            optim: OptimConfig::default(),
            check: CheckOptions {
                directions: 5,
                tau: 1e-4,
                grad_tol: 1e-3,
                hess_pairs: 3,
                hess_tau: 1e-3,
                hess_symmetry_tol: 1e-8,
                hess_tol: 1e-2,
                second_order_directions: 8,
            },
            decay: DecayOptions {
                ladder: vec![1.0, 10.0, 100.0, 1000.0],
                amplitude: 0.05,
                eps_scan: Vec::new(),
                scan_lambda0: 10.0,
                regularize: RegularizeConfig::default(),
            },
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key} = {value}: expected {what}"))
}

fn real(key: &str, v: &str) -> CliResult<f64> {
    v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| bad(key, v, "a finite number"))
}

fn count(key: &str, v: &str) -> CliResult<usize> {
    v.parse::<usize>().map_err(|_| bad(key, v, "a nonnegative integer"))
}

fn flag(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, v, "true or false")),
    }
}

fn list(key: &str, v: &str) -> CliResult<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| real(key, t.trim())).collect()
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(x: &Option<T>, none: &str) -> String {
    x.as_ref().map_or_else(|| none.to_string(), |v| v.to_string())
}

/// Parses the text of a configuration file into `(line, key, value)`.
pub fn parse_entries(text: &str) -> CliResult<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let line = match line.find(" #").or_else(|| line.find("\t#")) {
            Some(p) => line[..p].trim_end(),
            None => line,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {line_no}: expected `key = value`, got `{raw}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("line {line_no}: empty key")));
        }
        if let Some((first, ..)) = out.iter().find(|(_, k, _)| k == key) {
            return Err(CliError::Config(format!("line {line_no}: duplicate key `{key}` (first set on line {first})")));
        }
        out.push((line_no, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then the file (if any), then the overrides, then validation.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", p.display())))?;
            for (line, key, value) in parse_entries(&text)? {
                cfg.set(&key, &value)
                    .map_err(|e| CliError::Config(format!("{}:{line}: {}", p.display(), strip(e))))?;
            }
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{o}`")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> CliResult<()> {
        match key {
            // empty means "take it from the image"
            "nx" => self.nx = if v.is_empty() { None } else { Some(count(key, v)?) },
            "ny" => self.ny = if v.is_empty() { None } else { Some(count(key, v)?) },
            "h" => self.h = real(key, v)?,
            "fixture.n" => self.fixture_n = count(key, v)?,
            "fixture.target_blur" => self.fixture_target_blur = real(key, v)?,
            "theta" => self.potential.theta = real(key, v)?,
            "theta_c" => self.potential.theta_c = real(key, v)?,
            "eps" => self.potential.eps = real(key, v)?,
            "delta_clip" => self.potential.delta_clip = real(key, v)?,
            "dt" => self.solver.dt = real(key, v)?,
            "n_steps" => self.solver.n_steps = count(key, v)?,
            "stabilization" => {
                self.solver.stabilization = if v == "auto" { None } else { Some(real(key, v)?) }
            }
            "picard_tol" => self.solver.picard_tol = real(key, v)?,
            "picard_max" => self.solver.picard_max = count(key, v)?,
            "alpha1" => self.weights.alpha1 = real(key, v)?,
            "alpha2" => self.weights.alpha2 = real(key, v)?,
            "beta" => self.weights.beta = real(key, v)?,
            "r" => self.weights.r = real(key, v)?,
            "lambda_min" => self.lambda_min = real(key, v)?,
            "lambda_max" => self.lambda_max = real(key, v)?,
            "lambda0" => self.lambda0 = if v == "midpoint" { None } else { Some(real(key, v)?) },
            "blur_sigma" => self.blur_sigma = real(key, v)?,
            "binarize_threshold" => self.binarize_threshold = real(key, v)?,
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v, "a nonnegative integer"))?,
            "threads" => self.threads = count(key, v)?,
            "write_trajectory" => self.write_trajectory = flag(key, v)?,
            "trajectory" => self.trajectory = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "image_format" => self.image_format = v.to_ascii_lowercase(),
            "optim.max_iter" => self.optim.max_iter = count(key, v)?,
            "optim.tol" => self.optim.tol = real(key, v)?,
            "optim.rtol" => self.optim.rtol = real(key, v)?,
            "optim.armijo_c" => self.optim.armijo_c = real(key, v)?,
            "optim.max_halvings" => self.optim.max_halvings = count(key, v)?,
            "check.directions" => self.check.directions = count(key, v)?,
            "check.tau" => self.check.tau = real(key, v)?,
            "check.grad_tol" => self.check.grad_tol = real(key, v)?,
            "check.hess_pairs" => self.check.hess_pairs = count(key, v)?,
            "check.hess_tau" => self.check.hess_tau = real(key, v)?,
            "check.hess_symmetry_tol" => self.check.hess_symmetry_tol = real(key, v)?,
            "check.hess_tol" => self.check.hess_tol = real(key, v)?,
            "check.second_order_directions" => self.check.second_order_directions = count(key, v)?,
            "decay.ladder" => self.decay.ladder = list(key, v)?,
            "decay.amplitude" => self.decay.amplitude = real(key, v)?,
            "decay.eps_scan" => self.decay.eps_scan = list(key, v)?,
            "decay.scan_lambda0" => self.decay.scan_lambda0 = real(key, v)?,
            "decay.regularize_lambda" => self.decay.regularize.lambda_big = real(key, v)?,
            "decay.regularize_dt" => self.decay.regularize.dt = real(key, v)?,
            "decay.regularize_stat_tol" => self.decay.regularize.stat_tol = real(key, v)?,
            "decay.regularize_max_steps" => self.decay.regularize.max_steps = count(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn to_text(&self) -> String {
        let c = &self.check;
        let d = &self.decay;
        let entries: Vec<(&str, String)> = vec![
            ("nx", opt(&self.nx, "")),
            ("ny", opt(&self.ny, "")),
            ("h", self.h.to_string()),
            ("fixture.n", self.fixture_n.to_string()),
            ("fixture.target_blur", self.fixture_target_blur.to_string()),
            ("theta", self.potential.theta.to_string()),
            ("theta_c", self.potential.theta_c.to_string()),
            ("eps", self.potential.eps.to_string()),
            ("delta_clip", self.potential.delta_clip.to_string()),
            ("dt", self.solver.dt.to_string()),
            ("n_steps", self.solver.n_steps.to_string()),
            ("stabilization", opt(&self.solver.stabilization, "auto")),
            ("picard_tol", self.solver.picard_tol.to_string()),
            ("picard_max", self.solver.picard_max.to_string()),
            ("alpha1", self.weights.alpha1.to_string()),
            ("alpha2", self.weights.alpha2.to_string()),
            ("beta", self.weights.beta.to_string()),
            ("r", self.weights.r.to_string()),
            ("lambda_min", self.lambda_min.to_string()),
            ("lambda_max", self.lambda_max.to_string()),
            ("lambda0", opt(&self.lambda0, "midpoint")),
            ("blur_sigma", self.blur_sigma.to_string()),
            ("binarize_threshold", self.binarize_threshold.to_string()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("write_trajectory", self.write_trajectory.to_string()),
            ("trajectory", self.trajectory.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("image_format", self.image_format.clone()),
            ("optim.max_iter", self.optim.max_iter.to_string()),
            ("optim.tol", self.optim.tol.to_string()),
            ("optim.rtol", self.optim.rtol.to_string()),
            ("optim.armijo_c", self.optim.armijo_c.to_string()),
            ("optim.max_halvings", self.optim.max_halvings.to_string()),
            ("check.directions", c.directions.to_string()),
            ("check.tau", c.tau.to_string()),
            ("check.grad_tol", c.grad_tol.to_string()),
            ("check.hess_pairs", c.hess_pairs.to_string()),
            ("check.hess_tau", c.hess_tau.to_string()),
            ("check.hess_symmetry_tol", c.hess_symmetry_tol.to_string()),
            ("check.hess_tol", c.hess_tol.to_string()),
            ("check.second_order_directions", c.second_order_directions.to_string()),
            ("decay.ladder", join(&d.ladder)),
            ("decay.amplitude", d.amplitude.to_string()),
            ("decay.eps_scan", join(&d.eps_scan)),
            ("decay.scan_lambda0", d.scan_lambda0.to_string()),
            ("decay.regularize_lambda", d.regularize.lambda_big.to_string()),
            ("decay.regularize_dt", d.regularize.dt.to_string()),
            ("decay.regularize_stat_tol", d.regularize.stat_tol.to_string()),
            ("decay.regularize_max_steps", d.regularize.max_steps.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    /// Checks every component; messages name the offending keys.
    pub fn validate(&self) -> CliResult<()> {
        let fail = |m: String| Err(CliError::Config(m));
        let p = &self.potential;
        if p.theta >= p.theta_c {
            return fail(format!(
                "theta ({}) must be below theta_c ({}): the potential has no double well otherwise",
                p.theta, p.theta_c
            ));
        }
        p.validate().map_err(|e| CliError::Config(strip(e.into())))?;
        if !(self.lambda_min > 0.0) {
            return fail(format!("lambda_min ({}) must be positive", self.lambda_min));
        }
        if self.lambda_min >= self.lambda_max {
            return fail(format!(
                "lambda_min ({}) must be below lambda_max ({})",
                self.lambda_min, self.lambda_max
            ));
        }
        let w = &self.weights;
        if w.alpha1 == 0.0 && w.alpha2 == 0.0 && w.beta == 0.0 {
            return fail("alpha1, alpha2 and beta are all zero: the cost would be identically zero".into());
        }
        w.validate().map_err(|e| CliError::Config(strip(e.into())))?;
        self.solver.validate().map_err(|e| CliError::Config(strip(e.into())))?;
        if let Some(l) = self.lambda0 {
            if !(self.lambda_min..=self.lambda_max).contains(&l) {
                return fail(format!(
                    "lambda0 ({l}) must lie in [lambda_min, lambda_max] = [{}, {}]",
                    self.lambda_min, self.lambda_max
                ));
            }
        }
        if !(self.h > 0.0) {
            return fail(format!("h ({}) must be positive", self.h));
        }
        if !(self.blur_sigma >= 0.0) {
            return fail(format!("blur_sigma ({}) must be nonnegative", self.blur_sigma));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return fail(format!("binarize_threshold ({}) must lie in (0, 1)", self.binarize_threshold));
        }
        if self.fixture_n < 8 || !self.fixture_n.is_multiple_of(8) {
            return fail(format!("fixture.n ({}) must be a positive multiple of 8", self.fixture_n));
        }
        if self.image_format != "pgm" && self.image_format != "png" {
            return fail(format!("image_format ({}) must be pgm or png", self.image_format));
        }
        let c = &self.check;
        if !(c.tau > 0.0 && c.hess_tau > 0.0) {
            return fail("check.tau and check.hess_tau must be positive".into());
        }
        if !(self.decay.amplitude > 0.0 && self.decay.amplitude < 1.0) {
            return fail(format!("decay.amplitude ({}) must lie in (0, 1)", self.decay.amplitude));
        }
        if self.decay.ladder.iter().chain([&self.decay.scan_lambda0]).any(|&l| !(l > 0.0)) {
            return fail("decay fidelity levels must be positive".into());
        }
        if self.decay.eps_scan.iter().any(|&e| !(e > 0.0)) {
            return fail("decay.eps_scan values must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self, nx: usize, ny: usize) -> CliResult<Grid> {
        Ok(Grid::new(nx, ny, nx as f64 * self.h, ny as f64 * self.h)?)
    }

    pub fn control_box(&self, mask_d: &Field) -> CliResult<ControlBox> {
        Ok(ControlBox::new(self.lambda_min, self.lambda_max, mask_d.clone())?)
    }

    pub fn initial_control(&self, bounds: &ControlBox) -> Field {
        match self.lambda0 {
            Some(l) => bounds.mask_d.map(|m| if m == 1.0 { 0.0 } else { l }),
            None => bounds.midpoint(),
        }
    }
}

/// The message of an error without its `config:` prefix.
fn strip(e: CliError) -> String {
    match e {
        CliError::Config(m) => m,
        CliError::Core(chinpaint_core::Error::InvalidParameter(m)) => m,
        other => other.to_string(),
    }
}
