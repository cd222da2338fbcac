//! Run configuration: a TOML file with one table per concern.
//!
//! ```toml
//! [problem]
//! builtin = "example1"
//!
//! [discretization]
//! h = 1e-3
//!
//! [dual]
//! step_rule = { rule = "constant", theta = 1.0 }
//! ```
//!
//! Every table except `[problem]` and `[discretization]` may be omitted.
//! Unknown keys are rejected. The resolved configuration (all defaults
//! filled in, including the grid half-width) is written next to the outputs
//! and parses back to the same value.

use std::fmt;
use std::path::Path;

use ccs_core::chain::{default_radius, Discretization, KernelScheme, DEFAULT_STEP_RATIO};
use ccs_core::dual::StepRule;
use ccs_core::model::{builtin, ControlSet, ProblemSpec};
use ccs_core::registry::ScalarProblem;
use serde::{Deserialize, Serialize};

/// The default rate-study grid of time steps.
pub const DESK_H_LIST: [f64; 5] = [1e-2, 5e-3, 2e-3, 1e-3, 5e-4];
/// Time steps appended by `--full-range`.
pub const FULL_RANGE_EXTRA: [f64; 4] = [2e-4, 1e-4, 5e-5, 2e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(default)]
    pub qualify: QualifyConfig,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemConfig {
    /// `example1` or `example2`.
    Builtin(String),
    Custom(ScalarProblem),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ControlGrid {
    fn default() -> Self {
        Self { lo: -6.0, hi: 6.0, step: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    /// `Δx = √(h / step_ratio)` unless `dx` is given.
    #[serde(default = "default_ratio")]
    pub step_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    /// Grid covers `x₀ ± half_width`; filled in on resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub scheme: KernelScheme,
    #[serde(default)]
    pub controls: ControlGrid,
}

fn default_ratio() -> f64 {
    DEFAULT_STEP_RATIO
}

/// A number or the string `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting {
    Value(f64),
    #[default]
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(de::Error::custom(format!("expected a number or \"auto\", got {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualConfig {
    /// Cost bound `M`; `auto` measures it on the grid.
    #[serde(default)]
    pub m_bound: Setting,
    /// Qualification radius; `auto` runs the qualification check.
    #[serde(default)]
    pub eps: Setting,
    #[serde(default = "default_step_rule")]
    pub step_rule: StepRule,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_kink_tol")]
    pub kink_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_certify_tol")]
    pub certify_tol: f64,
}

fn default_step_rule() -> StepRule {
    StepRule::Constant { theta: 1.0 }
}

fn default_grad_tol() -> f64 {
    1e-7
}

fn default_kink_tol() -> f64 {
    1e-4
}

fn default_max_iters() -> usize {
    200
}

fn default_certify_tol() -> f64 {
    1e-4
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            m_bound: Setting::Auto,
            eps: Setting::Auto,
            step_rule: default_step_rule(),
            grad_tol: default_grad_tol(),
            kink_tol: default_kink_tol(),
            max_iters: default_max_iters(),
            certify_tol: default_certify_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualifyConfig {
    /// Margin the minimax values must stay below (`v_e ≤ −target_eps`).
    #[serde(default = "default_target_eps")]
    pub target_eps: f64,
    #[serde(default = "default_qualify_rule")]
    pub step_rule: StepRule,
    #[serde(default = "default_qualify_iters")]
    pub max_iters: usize,
    #[serde(default = "default_qualify_tol")]
    pub tol: f64,
}

fn default_target_eps() -> f64 {
    1e-6
}

fn default_qualify_rule() -> StepRule {
    StepRule::Harmonic { theta0: None }
}

fn default_qualify_iters() -> usize {
    500
}

fn default_qualify_tol() -> f64 {
    1e-9
}

impl Default for QualifyConfig {
    fn default() -> Self {
        Self {
            target_eps: default_target_eps(),
            step_rule: default_qualify_rule(),
            max_iters: default_qualify_iters(),
            tol: default_qualify_tol(),
        }
    }
}

/// Reference values for the rate study; builtins default to the closed-form
/// optimum.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_ref: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub store_paths: bool,
}

fn default_paths() -> usize {
    100_000
}

fn default_seed() -> u64 {
    20_240_917
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n_paths: default_paths(), seed: default_seed(), store_paths: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    /// Multiplier to certify; the ascent runs first when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "yes")]
    pub trace: bool,
    #[serde(default)]
    pub value_table: bool,
    #[serde(default)]
    pub distribution: bool,
}

fn default_dir() -> String {
    "out".to_string()
}

fn yes() -> bool {
    true
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self { dir: default_dir(), trace: true, value_table: false, distribution: false }
    }
}

/// A configuration error, anchored to a line of the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// File the configuration came from, when loaded from disk.
    pub file: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.file, self.line) {
            (Some(file), Some(line)) => write!(f, "{file}:{line}: {}", self.message),
            (Some(file), None) => write!(f, "{file}: {}", self.message),
            (None, Some(line)) => write!(f, "line {line}: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of `key = …` inside `[section]` (dotted sections match by prefix).
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if in_section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl RunConfig {
    /// Parses and validates a configuration.
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(source).map_err(|e| ConfigError {
            file: None,
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().trim().to_string(),
        })?;
        config.validate(source)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file = Some(path.display().to_string());
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: file.clone(),
            line: None,
            message: format!("cannot read: {e}"),
        })?;
        Self::parse(&source).map_err(|e| ConfigError { file, ..e })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn validate(&self, source: &str) -> Result<(), ConfigError> {
        let fail = |section: &str, key: &str, message: String| ConfigError {
            file: None,
            line: locate(source, section, key),
            message,
        };
        let spec = self.spec().map_err(|m| fail("problem", "builtin", m))?;
        let d = &self.discretization;
        if d.h.is_none() && d.h_list.is_none() {
            return Err(fail("discretization", "h", "either h or h_list is required".into()));
        }
        for h in d.h.iter().chain(d.h_list.iter().flatten()) {
            steps_for(&spec, *h).map_err(|m| {
                let key = if Some(*h) == d.h { "h" } else { "h_list" };
                fail("discretization", key, m)
            })?;
        }
        if let Some(list) = &d.h_list {
            if list.is_empty() {
                return Err(fail("discretization", "h_list", "h_list is empty".into()));
            }
            if list.windows(2).any(|w| w[1] >= w[0]) {
                return Err(fail("discretization", "h_list", "h_list must be strictly decreasing".into()));
            }
        }
        if !(d.step_ratio > 0.0) {
            return Err(fail("discretization", "step_ratio", "step_ratio must be positive".into()));
        }
        if let Some(dx) = d.dx {
            if !(dx > 0.0 && dx.is_finite()) {
                return Err(fail("discretization", "dx", "dx must be positive".into()));
            }
        }
        if let Some(w) = d.half_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(fail("discretization", "half_width", "half_width must be positive".into()));
            }
        }
        self.controls().map_err(|m| fail("discretization", "step", m))?;
        let dual = &self.dual;
        for (key, s) in [("m_bound", dual.m_bound), ("eps", dual.eps)] {
            if let Setting::Value(v) = s {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(fail("dual", key, format!("{key} must be positive or \"auto\"")));
                }
            }
        }
        for (key, v) in [
            ("grad_tol", dual.grad_tol),
            ("certify_tol", dual.certify_tol),
        ] {
            if !(v > 0.0) {
                return Err(fail("dual", key, format!("{key} must be positive")));
            }
        }
        if !(dual.kink_tol >= 0.0) {
            return Err(fail("dual", "kink_tol", "kink_tol must be nonnegative".into()));
        }
        if dual.max_iters == 0 {
            return Err(fail("dual", "max_iters", "max_iters must be at least 1".into()));
        }
        if !(self.qualify.target_eps >= 0.0) {
            return Err(fail("qualify", "target_eps", "target_eps must be nonnegative".into()));
        }
        if self.simulate.n_paths == 0 {
            return Err(fail("simulate", "n_paths", "n_paths must be at least 1".into()));
        }
        let n = spec.n_constraints();
        if let Some(l) = &self.rate.lambda_ref {
            if l.len() != n {
                return Err(fail("rate", "lambda_ref", format!("lambda_ref needs {n} entries")));
            }
        }
        if let Some(l) = &self.certify.lambda {
            if l.len() != n {
                return Err(fail("certify", "lambda", format!("lambda needs {n} entries")));
            }
            if l[spec.n_equality()..].iter().any(|&v| v < 0.0) {
                return Err(fail("certify", "lambda", "inequality multipliers must be nonnegative".into()));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<ProblemSpec, String> {
        match &self.problem {
            ProblemConfig::Builtin(name) => builtin::by_name(name)
                .ok_or_else(|| format!("unknown builtin problem {name:?} (expected example1 or example2)")),
            ProblemConfig::Custom(p) => p.to_spec().map_err(|e| e.to_string()),
        }
    }

    /// Closed-form example id of a builtin problem.
    pub fn example_id(&self) -> Option<u32> {
        match &self.problem {
            ProblemConfig::Builtin(name) if name == "example1" => Some(1),
            ProblemConfig::Builtin(name) if name == "example2" => Some(2),
            _ => None,
        }
    }

    pub fn controls(&self) -> Result<ControlSet, String> {
        let c = self.discretization.controls;
        ControlSet::uniform(c.lo, c.hi, c.step).map_err(|e| e.to_string())
    }

    /// Fills in every default that depends on the problem.
    pub fn resolved(&self) -> Result<Self, String> {
        let mut out = self.clone();
        if out.discretization.half_width.is_none() {
            let spec = self.spec()?;
            out.discretization.half_width = Some(default_radius(&spec, &self.controls()?));
        }
        Ok(out)
    }

    /// The single time step used by `solve`, `qualify`, `simulate` and
    /// `certify`: `h`, or the first entry of `h_list`.
    pub fn primary_h(&self) -> f64 {
        let d = &self.discretization;
        d.h.or_else(|| d.h_list.as_ref().map(|l| l[0])).expect("validated")
    }

    /// Time steps of a rate study.
    pub fn study_h_list(&self, full_range: bool) -> Vec<f64> {
        let mut list = self
            .discretization
            .h_list
            .clone()
            .unwrap_or_else(|| DESK_H_LIST.to_vec());
        if full_range {
            let last = *list.last().expect("nonempty");
            list.extend(FULL_RANGE_EXTRA.iter().filter(|&&h| h < last));
        }
        list
    }

    pub fn discretization_for(&self, spec: &ProblemSpec, h: f64) -> Result<Discretization, String> {
        let d = &self.discretization;
        let steps = steps_for(spec, h)?;
        let controls = self.controls()?;
        let radius = match d.half_width {
            Some(w) => w,
            None => default_radius(spec, &controls),
        };
        let disc = match d.dx {
            Some(dx) => {
                let half = (radius / dx).ceil().max(1.0);
                Discretization::new(spec, steps, dx, spec.x0 - half * dx, spec.x0 + half * dx, controls)
            }
            None => Discretization::centered(spec, steps, d.step_ratio, radius, controls),
        };
        disc.map(|disc| disc.with_scheme(d.scheme)).map_err(|e| e.to_string())
    }
}

fn steps_for(spec: &ProblemSpec, h: f64) -> Result<usize, String> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(format!("time step must be positive, got {h}"));
    }
    let n = (spec.horizon / h).round();
    if n < 1.0 || (n * h - spec.horizon).abs() > 1e-9 * spec.horizon {
        return Err(format!("time step {h} does not divide the horizon {}", spec.horizon));
    }
    Ok(n as usize)
}

/// Builtin configuration for one of the two closed-form examples.
pub fn builtin_config(name: &str, h: f64) -> RunConfig {
    RunConfig {
        problem: ProblemConfig::Builtin(name.to_string()),
        discretization: DiscretizationConfig {
            h: Some(h),
            h_list: None,
            step_ratio: DEFAULT_STEP_RATIO,
            dx: None,
            half_width: None,
            scheme: KernelScheme::default(),
            controls: ControlGrid::default(),
        },
        dual: DualConfig::default(),
        qualify: QualifyConfig::default(),
        rate: RateConfig::default(),
        simulate: SimulateConfig::default(),
        certify: CertifyConfig::default(),
        outputs: OutputsConfig::default(),
    }
}
