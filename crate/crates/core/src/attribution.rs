//! Kernel SHAP with expected-value imputation over a background set, and the
//! decomposition of the difference between two models' predictions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::{Feature, FeatureRanking};
use crate::regression::{MlpModel, MlrModel, RegressionModel};
use crate::rng::rng_for;

/// Anything that maps column-major feature vectors to predictions.
pub trait Predictor: Sync {
    fn features(&self) -> &[Feature];
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>>;
}

impl Predictor for RegressionModel {
    fn features(&self) -> &[Feature] {
        &self.features
    }
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        RegressionModel::predict(self, x)
    }
}

impl Predictor for MlrModel {
    fn features(&self) -> &[Feature] {
        &self.features
    }
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        MlrModel::predict(self, x)
    }
}

impl Predictor for MlpModel {
    fn features(&self) -> &[Feature] {
        &self.features
    }
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        MlpModel::predict(self, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapAttribution {
    pub features: Vec<Feature>,
    /// Mean prediction over the background.
    pub base_value: f64,
    /// `values[i][j]`: attribution of feature `j` on instance `i`.
    pub values: Vec<Vec<f64>>,
    pub predictions: Vec<f64>,
    /// Column-major, as passed to the model.
    pub instances: Vec<Vec<f64>>,
    pub background: Vec<Vec<f64>>,
    pub n_coalitions: usize,
    pub seed: u64,
    pub flags: Vec<String>,
}

impl ShapAttribution {
    pub fn n_instances(&self) -> usize {
        self.values.len()
    }

    /// `prediction - base - sum(values)` per instance.
    pub fn additivity_slack(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.predictions)
            .map(|(v, p)| p - self.base_value - v.iter().sum::<f64>())
            .collect()
    }

    /// CSV with one row per instance and a leading `base_value` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance");
        for f in &self.features {
            out.push_str(&format!(",{f}"));
        }
        out.push_str(",prediction\n");
        out.push_str("base_value");
        for _ in &self.features {
            out.push(',');
        }
        out.push_str(&format!(",{}\n", self.base_value));
        for (i, (v, p)) in self.values.iter().zip(&self.predictions).enumerate() {
            out.push_str(&i.to_string());
            for x in v {
                out.push_str(&format!(",{x}"));
            }
            out.push_str(&format!(",{p}\n"));
        }
        out
    }
}

/// Default coalition budget for `d` features: `2d + 2048`, capped at `2^d`.
pub fn default_coalitions(d: usize) -> usize {
    let full = if d >= 63 { usize::MAX } else { 1usize << d };
    (2 * d + 2048).min(full)
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coalitions (excluding empty and full) with their regression weights.
fn coalitions(d: usize, budget: usize, seed: u64, instance: usize) -> Vec<(Vec<bool>, f64)> {
    let proper = if d >= 63 { usize::MAX } else { (1usize << d) - 2 };
    if budget.saturating_sub(2) >= proper {
        return (1..=proper)
            .map(|mask| {
                let z: Vec<bool> = (0..d).map(|j| mask & (1 << j) != 0).collect();
                let s = z.iter().filter(|&&b| b).count();
                let w = (d - 1) as f64 / (binom(d, s) * (s * (d - s)) as f64);
                (z, w)
            })
            .collect();
    }
    // Sample sizes from the Shapley kernel's size marginal; paired
    // complements keep the design balanced. Repeat draws add weight to the
    // existing coalition so the budget counts distinct coalitions.
    let mut rng = rng_for(seed, "kernel-shap", instance as u64);
    let size_w: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let target = budget.saturating_sub(2).max(2);
    let mut out: Vec<(Vec<bool>, f64)> = Vec::with_capacity(target);
    let mut seen: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut draws = 0;
    while out.len() + 2 <= target && draws < 20 * target {
        draws += 1;
        let mut u = rng.random::<f64>() * total;
        let mut s = d - 1;
        for (i, w) in size_w.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; d];
        for j in sample(&mut rng, d, s).iter() {
            z[j] = true;
        }
        let comp: Vec<bool> = z.iter().map(|b| !b).collect();
        for c in [z, comp] {
            match seen.get(&c) {
                Some(&i) => out[i].1 += 1.0,
                None => {
                    seen.insert(c.clone(), out.len());
                    out.push((c, 1.0));
                }
            }
        }
    }
    out
}

/// Kernel SHAP values of `model` on each column of `instances`.
pub fn kernel_shap<P: Predictor + ?Sized>(
    model: &P,
    background: &[Vec<f64>],
    instances: &[Vec<f64>],
    n_coalitions: Option<usize>,
    seed: u64,
) -> Result<ShapAttribution> {
    let d = model.features().len();
    let check = |x: &[Vec<f64>], what: &str| -> Result<usize> {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let n = x.first().map_or(0, |c| c.len());
        if x.iter().any(|c| c.len() != n) {
            return Err(Error::Validation(format!("{what} columns have unequal lengths")));
        }
        Ok(n)
    };
    let m = check(background, "background")?;
    let n = check(instances, "instance")?;
    if m == 0 || d == 0 {
        return Err(Error::Validation("kernel SHAP needs a nonempty background and features".into()));
    }
    let budget = n_coalitions.unwrap_or_else(|| default_coalitions(d));
    let bg_pred = model.predict(background)?;
    let base = bg_pred.iter().sum::<f64>() / m as f64;
    let predictions = model.predict(instances)?;

    let per_instance: Vec<(Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = instances.iter().map(|c| c[i]).collect();
            let delta = predictions[i] - base;
            if d == 1 {
                return Ok((vec![delta], false));
            }
            let coal = coalitions(d, budget, seed, i);
            // Evaluate every coalition over the whole background at once.
            let rows = coal.len() * m;
            let mut masked: Vec<Vec<f64>> = vec![Vec::with_capacity(rows); d];
            for (z, _) in &coal {
                for (j, col) in masked.iter_mut().enumerate() {
                    if z[j] {
                        col.extend(std::iter::repeat_n(x[j], m));
                    } else {
                        col.extend_from_slice(&background[j]);
                    }
                }
            }
            let out = model.predict(&masked)?;
            let k = d - 1;
            let mut a = DMatrix::<f64>::zeros(k, k);
            let mut b = DVector::<f64>::zeros(k);
            let mut row = vec![0.0; k];
            for (c, (z, w)) in coal.iter().enumerate() {
                let v = out[c * m..(c + 1) * m].iter().sum::<f64>() / m as f64;
                let zl = if z[d - 1] { 1.0 } else { 0.0 };
                let y = v - base - zl * delta;
                for j in 0..k {
                    row[j] = (if z[j] { 1.0 } else { 0.0 }) - zl;
                }
                for p in 0..k {
                    if row[p] == 0.0 {
                        continue;
                    }
                    b[p] += w * row[p] * y;
                    for q in 0..k {
                        a[(p, q)] += w * row[p] * row[q];
                    }
                }
            }
            let (phi, ridged) = match a.clone().cholesky() {
                Some(ch) => (ch.solve(&b), false),
                None => {
                    let scale = a.diagonal().amax().max(1.0);
                    for j in 0..k {
                        a[(j, j)] += 1e-8 * scale;
                    }
                    let sol = a.clone().cholesky().map(|c| c.solve(&b)).or_else(|| a.lu().solve(&b));
                    (sol.ok_or_else(|| Error::Internal("kernel SHAP system unsolvable".into()))?, true)
                }
            };
            let mut values: Vec<f64> = phi.iter().copied().collect();
            values.push(delta - values.iter().sum::<f64>());
            Ok((values, ridged))
        })
        .collect::<Result<_>>()?;

    let mut flags = Vec::new();
    let values = per_instance
        .into_iter()
        .enumerate()
        .map(|(i, (v, ridged))| {
            if ridged {
                flags.push(format!("ridge:{i}"));
            }
            v
        })
        .collect();
    Ok(ShapAttribution {
        features: model.features().to_vec(),
        base_value: base,
        values,
        predictions,
        instances: instances.to_vec(),
        background: background.to_vec(),
        n_coalitions: budget,
        seed,
        flags,
    })
}

/// Per-instance decomposition of `f(x) - g(x)`, where `g` uses the
/// features of `f` plus `added`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceDecomposition {
    pub common: Vec<Feature>,
    pub added: Vec<Feature>,
    pub delta_base: f64,
    /// `common_terms[i][j] = shap_f[i][j] - shap_g[i][j]` per common feature.
    pub common_terms: Vec<Vec<f64>>,
    /// `added_terms[i][j] = -shap_g[i][j]` per added feature.
    pub added_terms: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub difference: Vec<f64>,
}

impl DifferenceDecomposition {
    /// CSV time series of the decomposition terms per instance.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance,difference,delta_base");
        for f in &self.common {
            out.push_str(&format!(",common:{f}"));
        }
        for f in &self.added {
            out.push_str(&format!(",added:{f}"));
        }
        out.push_str(",residual\n");
        for i in 0..self.difference.len() {
            out.push_str(&format!("{i},{},{}", self.difference[i], self.delta_base));
            for v in self.common_terms[i].iter().chain(&self.added_terms[i]) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.residual[i]));
        }
        out
    }
}

pub fn decompose_difference(
    shap_f: &ShapAttribution,
    shap_g: &ShapAttribution,
    common: &[Feature],
    added: &[Feature],
) -> Result<DifferenceDecomposition> {
    let mut expect_g: Vec<&Feature> = common.iter().chain(added).collect();
    expect_g.sort();
    let mut have_g: Vec<&Feature> = shap_g.features.iter().collect();
    have_g.sort();
    let mut expect_f: Vec<&Feature> = common.iter().collect();
    expect_f.sort();
    let mut have_f: Vec<&Feature> = shap_f.features.iter().collect();
    have_f.sort();
    let sym = |a: &[&Feature], b: &[&Feature]| -> Vec<String> {
        a.iter()
            .filter(|x| !b.contains(x))
            .chain(b.iter().filter(|x| !a.contains(x)))
            .map(|f| f.to_string())
            .collect()
    };
    let mut diff = sym(&expect_f, &have_f);
    diff.extend(sym(&expect_g, &have_g));
    if !diff.is_empty() {
        diff.sort();
        diff.dedup();
        return Err(Error::FeatureMismatch(format!("features differ: {}", diff.join(", "))));
    }
    if shap_f.n_instances() != shap_g.n_instances() {
        return Err(Error::DimensionMismatch {
            expected: shap_f.n_instances(),
            got: shap_g.n_instances(),
        });
    }
    let pos = |s: &ShapAttribution, f: &Feature| s.features.iter().position(|x| x == f).expect("checked");
    let delta_base = shap_f.base_value - shap_g.base_value;
    let n = shap_f.n_instances();
    let mut common_terms = Vec::with_capacity(n);
    let mut added_terms = Vec::with_capacity(n);
    let mut residual = Vec::with_capacity(n);
    let mut difference = Vec::with_capacity(n);
    for i in 0..n {
        let c: Vec<f64> = common
            .iter()
            .map(|f| shap_f.values[i][pos(shap_f, f)] - shap_g.values[i][pos(shap_g, f)])
            .collect();
        let a: Vec<f64> = added.iter().map(|f| -shap_g.values[i][pos(shap_g, f)]).collect();
        let dy = shap_f.predictions[i] - shap_g.predictions[i];
        residual.push(dy - (delta_base + c.iter().sum::<f64>() + a.iter().sum::<f64>()));
        difference.push(dy);
        common_terms.push(c);
        added_terms.push(a);
    }
    Ok(DifferenceDecomposition {
        common: common.to_vec(),
        added: added.to_vec(),
        delta_base,
        common_terms,
        added_terms,
        residual,
        difference,
    })
}

/// Ranks features by mean |SHAP| over instances.
pub fn rank_mean_abs_shap(attr: &ShapAttribution) -> Result<FeatureRanking> {
    if attr.values.is_empty() {
        return Err(Error::Validation("empty attribution".into()));
    }
    let n = attr.values.len() as f64;
    Ok(FeatureRanking::from_scores(
        attr.features
            .iter()
            .enumerate()
            .map(|(j, f)| (f.clone(), attr.values.iter().map(|v| v[j].abs()).sum::<f64>() / n))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(coefs: &[f64], intercept: f64) -> MlrModel {
        let d = coefs.len();
        MlrModel {
            features: (0..d).map(|j| Feature::new(format!("F{j}"), 0)).collect(),
            coefficients: coefs.to_vec(),
            intercept,
            std_errors: vec![f64::NAN; d],
            t_stats: vec![f64::NAN; d],
            p_values: vec![f64::NAN; d],
            df_resid: 0,
            sse: 0.0,
        }
    }

    fn cols(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, "test", 0);
        (0..d).map(|_| (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect()
    }

    #[test]
    fn linear_model_matches_analytic_values() {
        let m = linear(&[1.5, -2.0, 0.0, 0.7], 0.3);
        let bg = cols(4, 30, 1);
        let inst = cols(4, 5, 2);
        let a = kernel_shap(&m, &bg, &inst, None, 0).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mean = bg[j].iter().sum::<f64>() / 30.0;
                let exact = m.coefficients[j] * (inst[j][i] - mean);
                assert!((a.values[i][j] - exact).abs() < 1e-6);
            }
        }
        assert!(a.additivity_slack().iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn sampled_coalitions_stay_exact_for_linear() {
        let coefs: Vec<f64> = (0..14).map(|j| j as f64 * 0.25 - 1.0).collect();
        let m = linear(&coefs, 0.0);
        let bg = cols(14, 20, 3);
        let inst = cols(14, 2, 4);
        let a = kernel_shap(&m, &bg, &inst, Some(200), 9).unwrap();
        assert_eq!(a.n_coalitions, 200);
        for j in 0..14 {
            let mean = bg[j].iter().sum::<f64>() / 20.0;
            assert!((a.values[1][j] - coefs[j] * (inst[j][1] - mean)).abs() < 1e-6);
        }
    }

    #[test]
    fn ranking_of_values() {
        let a = ShapAttribution {
            features: vec![Feature::new("A", 0), Feature::new("B", 0)],
            base_value: 0.0,
            values: vec![vec![3.0, -5.0]],
            predictions: vec![-2.0],
            instances: vec![],
            background: vec![],
            n_coalitions: 4,
            seed: 0,
            flags: vec![],
        };
        let r = rank_mean_abs_shap(&a).unwrap();
        assert_eq!(r.ordered, vec![Feature::new("B", 0), Feature::new("A", 0)]);
        assert_eq!(r.scores, vec![5.0, 3.0]);
    }

    #[test]
    fn decomposition_reconstructs_and_checks_features() {
        let f = linear(&[1.0, 2.0], 0.0);
        let g = linear(&[1.0, 2.0, 0.0], 0.5);
        let bg = cols(3, 10, 5);
        let inst = cols(3, 4, 6);
        let sf = kernel_shap(&f, &bg[..2], &inst[..2], None, 0).unwrap();
        let sg = kernel_shap(&g, &bg, &inst, None, 0).unwrap();
        let common = vec![Feature::new("F0", 0), Feature::new("F1", 0)];
        let added = vec![Feature::new("F2", 0)];
        let dec = decompose_difference(&sf, &sg, &common, &added).unwrap();
        for i in 0..4 {
            assert!(dec.added_terms[i][0].abs() < 1e-9);
            assert!(dec.common_terms[i].iter().all(|v| v.abs() < 1e-9));
            assert!((dec.delta_base + 0.5).abs() < 1e-12);
        }
        let err = decompose_difference(&sf, &sg, &common, &[Feature::new("ZZ", 1)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("F2@0") && msg.contains("ZZ@1"), "{msg}");
    }

    #[test]
    fn coalition_budget_default() {
        assert_eq!(default_coalitions(3), 8);
        assert_eq!(default_coalitions(20), 2088);
    }
}
