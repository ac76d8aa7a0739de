use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::linalg::{collinear_columns, design_with_intercept, ols, student_t_two_sided};

/// Multiple linear regression fitted by least squares, with the residual
/// diagnostics used by predictor screening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrModel {
    pub features: Vec<Feature>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Per-coefficient standard errors, NaN when there are no residual
    /// degrees of freedom.
    #[serde(with = "super::nonfinite::vec")]
    pub std_errors: Vec<f64>,
    #[serde(with = "super::nonfinite::vec")]
    pub t_stats: Vec<f64>,
    #[serde(with = "super::nonfinite::vec")]
    pub p_values: Vec<f64>,
    pub df_resid: usize,
    pub sse: f64,
}

/// Fits `y ~ 1 + x`, `x` column-major with one vector per feature.
pub fn fit_mlr(features: &[Feature], x: &[Vec<f64>], y: &[f64]) -> Result<MlrModel> {
    let n = y.len();
    if x.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: x.len(),
        });
    }
    if let Some(c) = x.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: c.len() });
    }
    if n < features.len() + 1 {
        return Err(Error::Validation(format!(
            "{n} rows cannot fit {} coefficients plus intercept",
            features.len()
        )));
    }
    if x.iter().chain(std::iter::once(&y.to_vec())).flatten().any(|v| !v.is_finite()) {
        return Err(Error::Validation("regression inputs must be complete and finite".into()));
    }
    let cols: Vec<&[f64]> = x.iter().map(|c| c.as_slice()).collect();
    let z = design_with_intercept(&cols, n);
    let yv = DVector::from_column_slice(y);
    let Some((beta, var)) = ols(&z, &yv) else {
        let names: Vec<String> = collinear_columns(&z)
            .into_iter()
            .map(|j| if j == 0 { "intercept".to_string() } else { features[j - 1].to_string() })
            .collect();
        return Err(Error::RankDeficient(format!("collinear columns: {}", names.join(", "))));
    };
    let resid = &yv - &z * &beta;
    let sse = resid.norm_squared();
    let df = n - features.len() - 1;
    let sigma2 = if df > 0 { sse / df as f64 } else { f64::NAN };
    let k = features.len();
    let std_errors: Vec<f64> = (1..=k).map(|j| (sigma2 * var[j]).sqrt()).collect();
    let t_stats: Vec<f64> = (0..k)
        .map(|j| {
            let se = std_errors[j];
            if se > 0.0 {
                beta[j + 1] / se
            } else if se == 0.0 && beta[j + 1] != 0.0 {
                beta[j + 1].signum() * f64::INFINITY
            } else {
                f64::NAN
            }
        })
        .collect();
    let p_values = t_stats.iter().map(|&t| student_t_two_sided(t, df as f64)).collect();
    Ok(MlrModel {
        features: features.to_vec(),
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        std_errors,
        t_stats,
        p_values,
        df_resid: df,
        sse,
    })
}

impl MlrModel {
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = super::check_columns(self.features.len(), x)?;
        Ok((0..n)
            .map(|i| {
                self.intercept + self.coefficients.iter().zip(x).map(|(c, col)| c * col[i]).sum::<f64>()
            })
            .collect())
    }

    /// Training R² recovered from stored diagnostics.
    pub fn r2_from(&self, y: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        let sst: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
        if sst > 0.0 { 1.0 - self.sse / sst } else { f64::NAN }
    }
}
