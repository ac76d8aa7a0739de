//! Prediction heads (least-squares linear and multilayer perceptron) and
//! skill metrics.

mod metrics;
mod mlp;
mod mlr;
mod model;
pub(crate) mod nonfinite;

use std::fmt;
use std::str::FromStr;

pub use metrics::{evaluate, Metrics};
pub use mlp::{architecture, fit_mlp, should_stop, to_matrix, Activation, EpochLog, Gradients, Layer, MlpConfig, MlpModel};
pub use mlr::{fit_mlr, MlrModel};
pub use model::{Head, RegressionModel};

use crate::dataset::AlignedPanel;
use crate::error::{Error, Result};
use crate::feature::Feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Regressor {
    Mlr,
    Mlp,
}

impl fmt::Display for Regressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regressor::Mlr => "mlr",
            Regressor::Mlp => "mlp",
        })
    }
}

impl FromStr for Regressor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlr" => Ok(Regressor::Mlr),
            "mlp" => Ok(Regressor::Mlp),
            _ => Err(Error::Config(format!("unknown regressor `{s}` (mlr, mlp)"))),
        }
    }
}

/// Checks column count and equal lengths; returns the row count.
pub(crate) fn check_columns(expected: usize, x: &[Vec<f64>]) -> Result<usize> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: x.len() });
    }
    let n = x.first().map_or(0, |c| c.len());
    if let Some(c) = x.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    Ok(n)
}

/// Complete-case design columns and target for `storms`.
pub fn panel_design(
    panel: &AlignedPanel,
    features: &[Feature],
    target: &str,
    storms: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut all = features.to_vec();
    all.push(Feature::new(target, 0));
    let mut cols = panel.gather(&all, storms)?;
    let y = cols.pop().unwrap_or_default();
    Ok((cols, y))
}

/// Fits the chosen head. The validation set drives MLP early stopping and
/// is unused by MLR.
pub fn fit_head(
    regressor: Regressor,
    features: &[Feature],
    train: (&[Vec<f64>], &[f64]),
    val: (&[Vec<f64>], &[f64]),
    mlp: &MlpConfig,
) -> Result<Head> {
    Ok(match regressor {
        Regressor::Mlr => Head::Mlr(fit_mlr(features, train.0, train.1)?),
        Regressor::Mlp => Head::Mlp(fit_mlp(features, train.0, train.1, val.0, val.1, mlp)?),
    })
}
