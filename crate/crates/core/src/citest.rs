//! Linear partial-correlation conditional-independence test on samples
//! pooled across storms.

use nalgebra::DVector;

use crate::dataset::AlignedPanel;
use crate::error::Result;
use crate::feature::Feature;
use crate::linalg::{design_with_intercept, residualize, student_t_two_sided};

/// Complete-case samples for one test. Column 0 is `x`, column 1 is `y`,
/// the remaining columns are the conditioning block.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    pub columns: Vec<Vec<f64>>,
}

impl SampleMatrix {
    pub fn new(x: Vec<f64>, y: Vec<f64>, cond: Vec<Vec<f64>>) -> Self {
        let mut columns = vec![x, y];
        columns.extend(cond);
        SampleMatrix { columns }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn cond_size(&self) -> usize {
        self.columns.len().saturating_sub(2)
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows() == 0
    }
}

/// Gathers `(x, y, cond...)` rows across `storms`, `y` being the target at
/// lag 0. Rows with any missing value are dropped.
pub fn pooled_samples(
    panel: &AlignedPanel,
    x: &Feature,
    target: &str,
    cond: &[Feature],
    storms: &[usize],
) -> Result<SampleMatrix> {
    let mut features = Vec::with_capacity(cond.len() + 2);
    features.push(x.clone());
    features.push(Feature::new(target, 0));
    features.extend_from_slice(cond);
    Ok(SampleMatrix {
        columns: panel.gather(&features, storms)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiTestResult {
    pub r: f64,
    pub stat: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub cond_size: usize,
    /// Residual variance collapsed; `r` and `p_value` were clamped.
    pub degenerate: bool,
}

impl CiTestResult {
    pub fn df(&self) -> usize {
        self.n_effective - 2 - self.cond_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CiOutcome {
    Tested(CiTestResult),
    /// Too few complete cases for a positive degree of freedom.
    Untestable { n_effective: usize, cond_size: usize },
}

impl CiOutcome {
    pub fn result(&self) -> Option<&CiTestResult> {
        match self {
            CiOutcome::Tested(r) => Some(r),
            CiOutcome::Untestable { .. } => None,
        }
    }

    /// `|r|`, zero when untestable.
    pub fn strength(&self) -> f64 {
        self.result().map_or(0.0, |r| r.r.abs())
    }
}

const DEGENERATE_VAR: f64 = 1e-12;

/// Correlation of the residuals of `x` and `y` after regressing both on the
/// conditioning block plus an intercept, with a two-sided Student-t p-value
/// on `df = n - 2 - |cond|`.
pub fn partial_correlation(samples: &SampleMatrix) -> CiOutcome {
    let n = samples.n_rows();
    let k = samples.cond_size();
    if n < k + 3 {
        return CiOutcome::Untestable {
            n_effective: n,
            cond_size: k,
        };
    }
    let cond: Vec<&[f64]> = samples.columns[2..].iter().map(Vec::as_slice).collect();
    let z = design_with_intercept(&cond, n);
    let res = residualize(&z, &[&samples.columns[0], &samples.columns[1]]);
    let (rx, ry) = (&res[0], &res[1]);
    let df = (n - 2 - k) as f64;

    let sxx = rx.norm_squared() / n as f64;
    let syy = ry.norm_squared() / n as f64;
    let scale_x = centered_var(&samples.columns[0]).max(1.0);
    let scale_y = centered_var(&samples.columns[1]).max(1.0);
    if sxx <= DEGENERATE_VAR * scale_x || syy <= DEGENERATE_VAR * scale_y {
        // Nothing left to correlate once the conditioning block is removed.
        return CiOutcome::Tested(CiTestResult {
            r: 0.0,
            stat: 0.0,
            p_value: 1.0,
            n_effective: n,
            cond_size: k,
            degenerate: true,
        });
    }
    let r = (rx.dot(ry) / (rx.norm() * ry.norm())).clamp(-1.0, 1.0);
    let one_minus = 1.0 - r * r;
    if one_minus <= DEGENERATE_VAR {
        let sign = if r < 0.0 { -1.0 } else { 1.0 };
        return CiOutcome::Tested(CiTestResult {
            r: sign,
            stat: sign * f64::INFINITY,
            p_value: 0.0,
            n_effective: n,
            cond_size: k,
            degenerate: true,
        });
    }
    let stat = r * (df / one_minus).sqrt();
    CiOutcome::Tested(CiTestResult {
        r,
        stat,
        p_value: student_t_two_sided(stat, df),
        n_effective: n,
        cond_size: k,
        degenerate: false,
    })
}

fn centered_var(v: &[f64]) -> f64 {
    let d = DVector::from_column_slice(v);
    let m = d.mean();
    d.map(|x| (x - m) * (x - m)).mean()
}

/// Independence is accepted when `p > pc_alpha`; `p == pc_alpha` keeps the
/// dependence. Untestable outcomes count as independent.
pub fn is_independent(outcome: &CiOutcome, pc_alpha: f64) -> bool {
    match outcome {
        CiOutcome::Tested(r) => r.p_value > pc_alpha,
        CiOutcome::Untestable {
            n_effective,
            cond_size,
        } => {
            log::warn!(
                "untestable link ({n_effective} complete cases, {cond_size} conditions); treated as independent"
            );
            true
        }
    }
}
