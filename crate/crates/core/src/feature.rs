//! Predictor/lag identifiers shared by discovery, baselines and regression.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A predictor code evaluated `lag` steps before the target time.
///
/// Ordering is lexicographic by `(code, lag)`; every candidate list in the
/// crate is kept in this order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Feature {
    pub code: String,
    pub lag: usize,
}

impl Feature {
    pub fn new(code: impl Into<String>, lag: usize) -> Self {
        Feature {
            code: code.into(),
            lag,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.code, self.lag)
    }
}

/// A feature ranking, strongest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureRanking {
    pub ordered: Vec<Feature>,
    pub scores: Vec<f64>,
    /// Set when the ranking was produced from degenerate input (constant
    /// predictors, zero target variance).
    pub flags: Vec<String>,
}

impl FeatureRanking {
    /// Sorts by score descending with lexicographic tie-breaking.
    pub fn from_scores(mut pairs: Vec<(Feature, f64)>) -> Self {
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (ordered, scores) = pairs.into_iter().unzip();
        FeatureRanking {
            ordered,
            scores,
            flags: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    pub fn score_of(&self, feature: &Feature) -> Option<f64> {
        self.ordered
            .iter()
            .position(|f| f == feature)
            .map(|i| self.scores[i])
    }

    /// `predictor,lag,score` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,lag,score\n");
        for (f, s) in self.ordered.iter().zip(&self.scores) {
            out.push_str(&format!("{},{},{}\n", f.code, f.lag, s));
        }
        out
    }
}
