//! Small dense least-squares and distribution helpers.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Relative tolerance on the diagonal of R (after column equilibration)
/// below which a design is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-9;

/// Builds an n x (1 + k) design with a leading intercept column.
pub fn design_with_intercept(columns: &[&[f64]], n: usize) -> DMatrix<f64> {
    let mut z = DMatrix::from_element(n, columns.len() + 1, 1.0);
    for (j, col) in columns.iter().enumerate() {
        z.column_mut(j + 1).copy_from_slice(col);
    }
    z
}

/// Column 2-norms, with zero columns mapped to 1.
pub fn column_scales(z: &DMatrix<f64>) -> Vec<f64> {
    z.column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 { n } else { 1.0 }
        })
        .collect()
}

fn equilibrated_qr(z: &DMatrix<f64>) -> nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let mut scaled = z.clone();
    for (j, s) in column_scales(z).into_iter().enumerate() {
        scaled.column_mut(j).unscale_mut(s);
    }
    scaled.qr()
}

fn qr_full_rank(qr: &nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    let r = qr.r();
    (0..r.ncols()).all(|i| r[(i, i)].abs() > RANK_TOL)
}

/// Whether the equilibrated design has full column rank.
pub fn has_full_rank(z: &DMatrix<f64>) -> bool {
    z.ncols() <= z.nrows() && qr_full_rank(&equilibrated_qr(z))
}

/// Residuals of each target column after least-squares projection onto the
/// column space of `z`. Rank-deficient `z` falls back to a minimum-norm SVD
/// solve, which projects onto the same space.
pub fn residualize(z: &DMatrix<f64>, targets: &[&[f64]]) -> Vec<DVector<f64>> {
    if z.ncols() <= z.nrows() {
        let qr = equilibrated_qr(z);
        if qr_full_rank(&qr) {
            let q = qr.q();
            return targets
                .iter()
                .map(|t| {
                    let v = DVector::from_column_slice(t);
                    let coef = q.tr_mul(&v);
                    v - &q * coef
                })
                .collect();
        }
    }
    let svd = z.clone().svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    targets
        .iter()
        .map(|t| {
            let v = DVector::from_column_slice(t);
            let beta = svd
                .solve(&v, eps)
                .unwrap_or_else(|_| DVector::zeros(z.ncols()));
            &v - z * beta
        })
        .collect()
}

/// Least-squares solution of `z beta = y` with the diagonal of
/// `(z'z)^-1`, or `None` when `z` is rank deficient.
pub fn ols(z: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    if z.ncols() > z.nrows() {
        return None;
    }
    let scales = column_scales(z);
    let qr = equilibrated_qr(z);
    if !qr_full_rank(&qr) {
        return None;
    }
    let r = qr.r();
    let qty = qr.q().tr_mul(y);
    let mut beta = r.solve_upper_triangular(&qty)?;
    let rinv = r.solve_upper_triangular(&DMatrix::identity(r.nrows(), r.ncols()))?;
    let mut var = DVector::zeros(z.ncols());
    for j in 0..z.ncols() {
        beta[j] /= scales[j];
        var[j] = rinv.row(j).norm_squared() / (scales[j] * scales[j]);
    }
    Some((beta, var))
}

/// Columns participating in the weakest linear dependency of `z`, read off
/// the right singular vector of its smallest singular value.
pub fn collinear_columns(z: &DMatrix<f64>) -> Vec<usize> {
    let mut scaled = z.clone();
    for (j, s) in column_scales(z).into_iter().enumerate() {
        scaled.column_mut(j).unscale_mut(s);
    }
    let svd = scaled.svd(false, true);
    let Some(vt) = svd.v_t else { return Vec::new() };
    let k = svd.singular_values.imin();
    let v = vt.row(k);
    let peak = v.amax();
    (0..v.len()).filter(|&j| v[j].abs() > 0.1 * peak).collect()
}

/// Two-sided Student-t tail probability of `|t|` with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() || df <= 0.0 {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Pearson correlation, `None` when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_tail_matches_tables() {
        // Two-sided 5% critical values.
        assert!((student_t_two_sided(2.228, 10.0) - 0.05).abs() < 1e-3);
        assert!((student_t_two_sided(1.960, 1e7) - 0.05).abs() < 1e-4);
        assert_eq!(student_t_two_sided(0.0, 5.0), 1.0);
    }

    #[test]
    fn residuals_orthogonal_even_when_collinear() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let y = [1.0, 0.0, 2.0, 5.0, 3.0];
        let z = design_with_intercept(&[&a, &b], 5);
        assert!(!has_full_rank(&z));
        let r = &residualize(&z, &[&y])[0];
        assert!(r.sum().abs() < 1e-10);
        assert!(r.dot(&DVector::from_column_slice(&a)).abs() < 1e-10);
    }
}
