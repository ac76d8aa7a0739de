use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pearson;

/// Skill scores of a prediction vector. `r2` is NaN when the truth has no
/// variance and `pcc` is NaN when either side is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(with = "super::nonfinite")]
    pub r2: f64,
    #[serde(with = "super::nonfinite")]
    pub pcc: f64,
    pub mae: f64,
    pub n: usize,
}

impl Metrics {
    pub fn r2_defined(&self) -> bool {
        !self.r2.is_nan()
    }
}

pub fn evaluate(y_true: &[f64], y_pred: &[f64]) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let n = y_true.len();
    if n < 2 {
        return Err(Error::Validation(format!("metrics need at least 2 samples, got {n}")));
    }
    let mean = y_true.iter().sum::<f64>() / n as f64;
    let (mut sse, mut sst, mut abs) = (0.0, 0.0, 0.0);
    for (y, p) in y_true.iter().zip(y_pred) {
        sse += (y - p) * (y - p);
        sst += (y - mean) * (y - mean);
        abs += (y - p).abs();
    }
    Ok(Metrics {
        r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
        pcc: pearson(y_true, y_pred).unwrap_or(f64::NAN),
        mae: abs / n as f64,
        n,
    })
}
