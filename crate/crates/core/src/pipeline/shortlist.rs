use std::collections::{BTreeMap, BTreeSet};

use crate::feature::Feature;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortlistMember {
    pub code: String,
    /// Number of best-fold sets containing the code at any lag.
    pub count: usize,
    /// Lags seen across those sets.
    pub lags: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortlist {
    /// Ordered by count descending, then code.
    pub members: Vec<ShortlistMember>,
    pub threshold: usize,
    pub n_sets: usize,
}

impl Shortlist {
    pub fn codes(&self) -> Vec<String> {
        self.members.iter().map(|m| m.code.clone()).collect()
    }
}

/// Keeps predictor codes appearing in strictly more than `threshold` of the
/// best sets, lags collapsed, minus `exclude`.
pub fn aggregate_shortlist(best_sets: &[Vec<Feature>], threshold: usize, exclude: &[String]) -> Shortlist {
    let mut counts: BTreeMap<&str, (usize, BTreeSet<usize>)> = BTreeMap::new();
    for set in best_sets {
        let mut seen = BTreeSet::new();
        for f in set {
            let e = counts.entry(f.code.as_str()).or_default();
            e.1.insert(f.lag);
            if seen.insert(f.code.as_str()) {
                e.0 += 1;
            }
        }
    }
    let mut members: Vec<ShortlistMember> = counts
        .into_iter()
        .filter(|(code, (n, _))| *n > threshold && !exclude.iter().any(|x| x == code))
        .map(|(code, (count, lags))| ShortlistMember {
            code: code.to_string(),
            count,
            lags: lags.into_iter().collect(),
        })
        .collect();
    members.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.code.cmp(&b.code)));
    Shortlist {
        members,
        threshold,
        n_sets: best_sets.len(),
    }
}

/// `base` followed by shortlist codes not already present.
pub fn assemble_ships_plus(base: &[String], shortlist: &Shortlist) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(base.len() + shortlist.members.len());
    for c in base.iter().chain(shortlist.members.iter().map(|m| &m.code)) {
        if !out.contains(c) {
            out.push(c.clone());
        }
    }
    out
}
