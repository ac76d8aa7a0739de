use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::ForestConfig;
use crate::discovery::AssumptionMode;
use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::regression::{MlpConfig, Regressor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Causal,
    Correlation,
    Forest,
    None,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Causal, Method::Correlation, Method::Forest, Method::None];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Causal => "causal",
            Method::Correlation => "correlation",
            Method::Forest => "forest",
            Method::None => "none",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Method::Causal),
            "correlation" => Ok(Method::Correlation),
            "forest" => Ok(Method::Forest),
            "none" => Ok(Method::None),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Shift storms so their smoothed pressure minima coincide.
    Mslp,
    /// Keep storms at their own time origin.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StandardizeScope {
    /// Statistics over all non-test storms.
    Pool,
    /// Statistics over each fold's training storms.
    Fold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningConfig {
    pub base: Vec<Feature>,
    pub candidates: Vec<Feature>,
    /// Forecast intervals in hours.
    pub intervals: Vec<u32>,
    /// Minimum gain in explained variance (fraction, 0.002 = 0.2%).
    pub dvar: f64,
    /// Two-sided confidence level of the coefficient test.
    pub significance: f64,
    /// Consecutive intervals for condition 1, significant intervals for
    /// condition 2.
    pub runs: usize,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            base: Vec::new(),
            candidates: Vec::new(),
            intervals: (1..=28).map(|i| i * 6).collect(),
            dvar: 0.002,
            significance: 0.99,
            runs: 5,
        }
    }
}

/// Experiment settings read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: Option<PathBuf>,
    /// Generate the panel from a synthetic model spec instead of a manifest.
    pub synth_spec: Option<PathBuf>,
    /// Explicit target column; otherwise `DELV<lead>` per lead time.
    pub target: Option<String>,
    pub lead_hours: Vec<u32>,
    pub lag_min: usize,
    pub lag_max: usize,
    pub alphas: Vec<f64>,
    pub ks: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
    pub modes: Vec<AssumptionMode>,
    pub forced: Vec<String>,
    pub methods: Vec<Method>,
    pub regressor: Regressor,
    pub max_cond_size: Option<usize>,
    pub align: AlignMode,
    pub align_sigma: f64,
    pub standardize: StandardizeScope,
    pub shortlist_threshold: usize,
    pub exclude: Vec<String>,
    pub base_predictors: Vec<String>,
    pub save_models: bool,
    pub mlp: MlpConfig,
    pub forest: ForestConfig,
    pub screening: ScreeningConfig,
    pub shap_background: usize,
    pub shap_coalitions: Option<usize>,
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifest: None,
            synth_spec: None,
            target: None,
            lead_hours: vec![24],
            lag_min: 0,
            lag_max: 4,
            alphas: vec![0.001, 0.005, 0.01, 0.05, 0.1, 0.2],
            ks: vec![1, 2, 3, 5, 8, 13, 21],
            folds: 7,
            seed: 0,
            modes: vec![AssumptionMode::NoAssumps],
            forced: Vec::new(),
            methods: Method::ALL.to_vec(),
            regressor: Regressor::Mlr,
            max_cond_size: Some(3),
            align: AlignMode::Mslp,
            align_sigma: 1.0,
            standardize: StandardizeScope::Pool,
            shortlist_threshold: 3,
            exclude: Vec::new(),
            base_predictors: Vec::new(),
            save_models: false,
            mlp: MlpConfig::default(),
            forest: ForestConfig::default(),
            screening: ScreeningConfig::default(),
            shap_background: 300,
            shap_coalitions: None,
            jobs: None,
        }
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

/// Parses `CODE` (lag 0) or `CODE@lag`.
pub fn parse_feature(s: &str) -> Result<Feature> {
    match s.split_once('@') {
        Some((c, l)) => Ok(Feature::new(
            c.trim(),
            l.trim().parse().map_err(|_| Error::Config(format!("invalid lag in `{s}`")))?,
        )),
        None => Ok(Feature::new(s.trim(), 0)),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim(), base_dir)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Sets one key; relative paths resolve against `base_dir`.
    pub fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid value `{value}` for {key}: {what}"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad("expected a non-negative integer"));
        let real = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
        let flag = |v: &str| match v {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(bad("expected true or false")),
        };
        match key {
            "manifest" => self.manifest = Some(base_dir.join(value)),
            "synth_spec" => self.synth_spec = Some(base_dir.join(value)),
            "target" => self.target = Some(value.to_string()),
            "lead_hours" => {
                self.lead_hours = list(value)
                    .map(|s| s.parse::<u32>().map_err(|_| bad("expected hours")))
                    .collect::<Result<_>>()?
            }
            "lag_min" => self.lag_min = int(value)?,
            "lag_max" => self.lag_max = int(value)?,
            "alphas" => self.alphas = list(value).map(real).collect::<Result<_>>()?,
            "ks" => self.ks = list(value).map(int).collect::<Result<_>>()?,
            "folds" => self.folds = int(value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "mode" => self.modes = list(value).map(|m| m.parse()).collect::<Result<_>>()?,
            "forced" => self.forced = list(value).map(String::from).collect(),
            "methods" => self.methods = list(value).map(|m| m.parse()).collect::<Result<_>>()?,
            "regressor" => self.regressor = value.parse()?,
            "max_cond_size" => {
                self.max_cond_size = if value == "none" { None } else { Some(int(value)?) }
            }
            "align" => {
                self.align = match value {
                    "mslp" => AlignMode::Mslp,
                    "none" => AlignMode::None,
                    _ => return Err(bad("expected mslp or none")),
                }
            }
            "align_sigma" => self.align_sigma = real(value)?,
            "standardize" => {
                self.standardize = match value {
                    "pool" => StandardizeScope::Pool,
                    "fold" => StandardizeScope::Fold,
                    _ => return Err(bad("expected pool or fold")),
                }
            }
            "shortlist_threshold" => self.shortlist_threshold = int(value)?,
            "exclude" => self.exclude = list(value).map(String::from).collect(),
            "base_predictors" => self.base_predictors = list(value).map(String::from).collect(),
            "save_models" => self.save_models = flag(value)?,
            "mlp_hidden" => self.mlp.hidden = list(value).map(int).collect::<Result<_>>()?,
            "mlp_learning_rate" => self.mlp.learning_rate = real(value)?,
            "mlp_max_epochs" => self.mlp.max_epochs = int(value)?,
            "mlp_batch_size" => {
                self.mlp.batch_size = if value == "full" { None } else { Some(int(value)?) }
            }
            "mlp_patience" => self.mlp.patience = int(value)?,
            "forest_trees" => self.forest.trees = int(value)?,
            "forest_max_depth" => self.forest.max_depth = int(value)?,
            "forest_min_leaf" => self.forest.min_leaf = int(value)?,
            "forest_features_per_split" => self.forest.features_per_split = Some(int(value)?),
            "screen_base" => self.screening.base = list(value).map(parse_feature).collect::<Result<_>>()?,
            "screen_candidates" => {
                self.screening.candidates = list(value).map(parse_feature).collect::<Result<_>>()?
            }
            "screen_max_hours" => {
                let h = int(value)? as u32;
                self.screening.intervals = (1..=h / 6).map(|i| i * 6).collect();
            }
            "screen_dvar" => self.screening.dvar = real(value)?,
            "screen_significance" => self.screening.significance = real(value)?,
            "screen_runs" => self.screening.runs = int(value)?,
            "shap_background" => self.shap_background = int(value)?,
            "shap_coalitions" => self.shap_coalitions = Some(int(value)?),
            "jobs" => self.jobs = Some(int(value)?),
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.manifest.is_some() == self.synth_spec.is_some() {
            return err("exactly one of `manifest` or `synth_spec` is required");
        }
        if self.target.is_none() && self.lead_hours.iter().any(|h| *h == 0 || !h.is_multiple_of(6)) {
            return err("lead_hours must be positive multiples of 6");
        }
        if self.target.is_none() && self.lead_hours.is_empty() {
            return err("lead_hours is empty");
        }
        if self.lag_min > self.lag_max {
            return err("lag_min exceeds lag_max");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return err("alphas must be a nonempty list in (0, 1)");
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return err("ks must be a nonempty list of positive sizes");
        }
        if self.modes.is_empty() || self.methods.is_empty() {
            return err("mode and methods must be nonempty");
        }
        if self.modes.contains(&AssumptionMode::WithAssumps) && self.forced.is_empty() {
            return err("withASSUMPS requires a `forced` predictor list");
        }
        if self.jobs == Some(0) {
            return err("jobs must be positive");
        }
        if self.mlp.hidden.is_empty() || self.mlp.max_epochs == 0 {
            return err("mlp_hidden and mlp_max_epochs must be nonempty/positive");
        }
        if !(self.screening.significance > 0.0 && self.screening.significance < 1.0) || self.screening.runs == 0 {
            return err("screen_significance must be in (0, 1) and screen_runs positive");
        }
        if self.align_sigma.is_nan() || self.align_sigma <= 0.0 {
            return err("align_sigma must be positive");
        }
        Ok(())
    }

    /// Target labels to run: the explicit target, or one per lead time.
    pub fn targets(&self) -> Vec<TargetSpec> {
        match &self.target {
            Some(t) => vec![TargetSpec::Column(t.clone())],
            None => self.lead_hours.iter().map(|&h| TargetSpec::Lead(h)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Lead(u32),
    Column(String),
}

impl TargetSpec {
    pub fn code(&self) -> String {
        match self {
            TargetSpec::Lead(h) => crate::dataset::target_code(*h),
            TargetSpec::Column(c) => c.clone(),
        }
    }
}
