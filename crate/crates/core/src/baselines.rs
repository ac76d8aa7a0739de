//! Non-causal ranking baselines: absolute correlation, random-forest
//! variance-reduction importance, and prefix sets of a ranking.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::citest::pooled_samples;
use crate::dataset::AlignedPanel;
use crate::error::{Error, Result};
use crate::feature::{Feature, FeatureRanking};
use crate::linalg::pearson;
use crate::rng::rng_for;

/// Ranks each feature by |Pearson r| with the target over pooled training
/// rows (pairwise complete cases).
pub fn rank_by_correlation(
    panel: &AlignedPanel,
    target: &str,
    features: &[Feature],
    train_ids: &[String],
) -> Result<FeatureRanking> {
    let storms = panel.storm_indices(train_ids)?;
    let mut flags = Vec::new();
    let mut scores = Vec::with_capacity(features.len());
    for f in features {
        let s = pooled_samples(panel, f, target, &[], &storms)?;
        if s.n_rows() < 3 {
            return Err(Error::Validation(format!(
                "{f}: {} pooled samples, need at least 3",
                s.n_rows()
            )));
        }
        let score = match pearson(&s.columns[0], &s.columns[1]) {
            Some(r) => r.abs(),
            None => {
                flags.push(format!("constant:{f}"));
                0.0
            }
        };
        scores.push((f.clone(), score));
    }
    let mut ranking = FeatureRanking::from_scores(scores);
    ranking.flags = flags;
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 200,
            max_depth: 12,
            min_leaf: 5,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART regression tree fitted by variance reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    /// Unnormalized sum-of-squares decrease per feature.
    pub importance: Vec<f64>,
}

struct TreeBuilder<'a, R: Rng> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: R,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    (sum_sq - sum * sum / n).max(0.0)
}

impl<R: Rng> TreeBuilder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len() as f64;
        let (sum, sum_sq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| (s + self.y[i], q + self.y[i] * self.y[i]));
        let node = self.nodes.len();
        self.nodes.push(Node::Leaf(sum / n));
        let parent_sse = sse(sum, sum_sq, n);
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_leaf || parent_sse <= 1e-12 * sum_sq.max(1e-300) {
            return node;
        }
        let d = self.x.len();
        let candidates = sample(&mut self.rng, d, self.mtry.min(d)).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in &candidates {
            let col = &self.x[f];
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let (mut ls, mut lq) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                let v = self.y[order[k]];
                ls += v;
                lq += v * v;
                let nl = k + 1;
                if nl < self.cfg.min_leaf || order.len() - nl < self.cfg.min_leaf {
                    continue;
                }
                let (a, b) = (col[order[k]], col[order[k + 1]]);
                if a == b {
                    continue;
                }
                let nr = (order.len() - nl) as f64;
                let gain = parent_sse - sse(ls, lq, nl as f64) - sse(sum - ls, sum_sq - lq, nr);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, a + (b - a) / 2.0));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return node;
        };
        if gain <= 0.0 {
            return node;
        }
        self.importance[feature] += gain;
        let col = &self.x[feature];
        idx.sort_by(|&a, &b| (col[a] > threshold).cmp(&(col[b] > threshold)).then(a.cmp(&b)));
        let split = idx.partition_point(|&i| col[i] <= threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[node] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        node
    }
}

impl RegressionTree {
    /// Fits on the rows listed in `idx` (repeats allowed). `x` is
    /// column-major.
    pub fn fit<R: Rng>(x: &[Vec<f64>], y: &[f64], idx: &mut [usize], cfg: &ForestConfig, mtry: usize, rng: R) -> Self {
        let mut b = TreeBuilder {
            x,
            y,
            cfg,
            mtry: mtry.max(1),
            rng,
            nodes: Vec::new(),
            importance: vec![0.0; x.len()],
        };
        if !idx.is_empty() {
            b.build(idx, 0);
        }
        RegressionTree {
            nodes: b.nodes,
            importance: b.importance,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    pub trees: Vec<RegressionTree>,
    /// Per-tree normalized importances averaged over trees; sums to 1
    /// whenever any tree split.
    pub importance: Vec<f64>,
}

impl RegressionForest {
    /// `x` is column-major, one vector per feature.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig) -> Result<Self> {
        let n = y.len();
        if x.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.iter().map(|c| c.len()).find(|&l| l != n).unwrap_or(0),
            });
        }
        if cfg.trees == 0 || cfg.min_leaf == 0 {
            return Err(Error::Config("forest needs trees >= 1 and min_leaf >= 1".into()));
        }
        let d = x.len();
        let mtry = cfg
            .features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1));
        let trees: Vec<RegressionTree> = (0..cfg.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(cfg.seed, "forest-tree", t as u64);
                let mut idx: Vec<usize> = if cfg.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, &mut idx, cfg, mtry, rng)
            })
            .collect();
        let mut importance = vec![0.0; d];
        for t in &trees {
            let total: f64 = t.importance.iter().sum();
            if total > 0.0 {
                for (acc, v) in importance.iter_mut().zip(&t.importance) {
                    *acc += v / total;
                }
            }
        }
        let total: f64 = importance.iter().sum();
        if total > 0.0 {
            importance.iter_mut().for_each(|v| *v /= total);
        }
        Ok(RegressionForest { trees, importance })
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Ranks features by forest importance on listwise-complete pooled training
/// rows.
pub fn rank_by_forest_importance(
    panel: &AlignedPanel,
    target: &str,
    features: &[Feature],
    train_ids: &[String],
    cfg: &ForestConfig,
) -> Result<FeatureRanking> {
    let storms = panel.storm_indices(train_ids)?;
    let mut all = features.to_vec();
    all.push(Feature::new(target, 0));
    let mut cols = panel.gather(&all, &storms)?;
    let y = cols.pop().unwrap_or_default();
    if y.len() < 20 {
        return Err(Error::Validation(format!(
            "forest importance needs at least 20 pooled samples, got {}",
            y.len()
        )));
    }
    let forest = RegressionForest::fit(&cols, &y, cfg)?;
    let any_split = forest.importance.iter().any(|&v| v > 0.0);
    let scores: Vec<f64> = if any_split {
        forest.importance
    } else {
        vec![1.0 / features.len().max(1) as f64; features.len()]
    };
    let mut ranking = FeatureRanking::from_scores(features.iter().cloned().zip(scores).collect());
    if !any_split {
        log::warn!("forest made no split (degenerate target variance); uniform importances");
        ranking.flags.push("degenerate-target".into());
    }
    Ok(ranking)
}

/// Nested prefix sets of `ranking`, one per `k`; oversize `k` truncates.
pub fn top_k_sets(ranking: &FeatureRanking, ks: &[usize]) -> Result<Vec<Vec<Feature>>> {
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::Validation("top-k sizes must be positive".into()));
            }
            if k > ranking.len() {
                log::warn!("k={k} exceeds ranking size {}; truncated", ranking.len());
            }
            Ok(ranking.ordered[..k.min(ranking.len())].to_vec())
        })
        .collect()
}
