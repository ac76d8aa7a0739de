//! Single-target PC-stable parent discovery over pooled storm samples.
//!
//! Candidates are `(predictor, lag)` pairs. Level 0 tests each candidate
//! against the target unconditionally; level `p` conditions each non-forced
//! survivor on the `p` strongest other survivors (by their latest `|r|`).
//! Removals within a level are applied only once the whole level has been
//! tested, so the result does not depend on candidate order.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::citest::{is_independent, partial_correlation, pooled_samples, CiOutcome};
use crate::dataset::AlignedPanel;
use crate::error::{Error, Result};
use crate::feature::Feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkStatus {
    Forced,
    Allowed,
    Forbidden,
}

/// Prior knowledge on target links. Per-feature entries override per-code
/// entries; anything unlisted is allowed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkAssumptions {
    by_feature: BTreeMap<Feature, LinkStatus>,
    by_code: BTreeMap<String, LinkStatus>,
}

impl LinkAssumptions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, feature: Feature, status: LinkStatus) -> &mut Self {
        self.by_feature.insert(feature, status);
        self
    }

    /// Applies `status` to every lag of `code`.
    pub fn set_code(&mut self, code: impl Into<String>, status: LinkStatus) -> &mut Self {
        self.by_code.insert(code.into(), status);
        self
    }

    /// Forces every lag of each code, as done for operational predictors.
    pub fn forcing_codes<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut a = Self::new();
        for c in codes {
            a.set_code(c, LinkStatus::Forced);
        }
        a
    }

    pub fn status(&self, feature: &Feature) -> LinkStatus {
        self.by_feature
            .get(feature)
            .or_else(|| self.by_code.get(&feature.code))
            .copied()
            .unwrap_or(LinkStatus::Allowed)
    }

    pub fn is_forced(&self, feature: &Feature) -> bool {
        self.status(feature) == LinkStatus::Forced
    }

    pub fn has_forced(&self) -> bool {
        self.by_feature.values().chain(self.by_code.values()).any(|s| *s == LinkStatus::Forced)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssumptionMode {
    WithAssumps,
    NoAssumps,
}

impl fmt::Display for AssumptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssumptionMode::WithAssumps => "withASSUMPS",
            AssumptionMode::NoAssumps => "noASSUMPS",
        })
    }
}

impl FromStr for AssumptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "withassumps" | "with" => Ok(AssumptionMode::WithAssumps),
            "noassumps" | "no" | "none" => Ok(AssumptionMode::NoAssumps),
            _ => Err(Error::Config(format!("unknown assumptions mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFeature {
    pub feature: Feature,
    /// `|r|` from the feature's last conditional-independence test.
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFeatureSet {
    /// Lexicographic by `(code, lag)`.
    pub members: Vec<SelectedFeature>,
    pub pc_alpha: f64,
    pub mode: AssumptionMode,
    pub fold: Option<usize>,
}

impl SelectedFeatureSet {
    pub fn features(&self) -> Vec<Feature> {
        self.members.iter().map(|m| m.feature.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, f: &Feature) -> bool {
        self.members.iter().any(|m| &m.feature == f)
    }

    /// Header line `# pc_alpha=<a> mode=<m> fold=<f|->`, then
    /// `predictor,lag,strength` rows.
    pub fn to_text(&self) -> String {
        let fold = self.fold.map_or("-".to_string(), |f| f.to_string());
        let mut out = format!(
            "# pc_alpha={} mode={} fold={}\npredictor,lag,strength\n",
            self.pc_alpha, self.mode, fold
        );
        for m in &self.members {
            out.push_str(&format!("{},{},{}\n", m.feature.code, m.feature.lag, m.strength));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |row: usize, message: String| Error::Parse {
            context: "feature set".into(),
            row,
            message,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| bad(1, "missing header".into()))?;
        let mut pc_alpha = None;
        let mut mode = None;
        let mut fold = None;
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(1, format!("bad header field `{kv}`")))?;
            match k {
                "pc_alpha" => pc_alpha = v.parse::<f64>().ok(),
                "mode" => mode = Some(v.parse::<AssumptionMode>()?),
                "fold" => fold = Some(if v == "-" { None } else { v.parse::<usize>().ok() }),
                _ => return Err(bad(1, format!("unknown header key `{k}`"))),
            }
        }
        if lines.next() != Some("predictor,lag,strength") {
            return Err(bad(2, "missing column header".into()));
        }
        let mut members = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = i + 3;
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad(row, "expected predictor,lag,strength".into()));
            }
            let lag = parts[1].parse().map_err(|_| bad(row, "invalid lag".into()))?;
            let strength = parts[2].parse().map_err(|_| bad(row, "invalid strength".into()))?;
            members.push(SelectedFeature {
                feature: Feature::new(parts[0], lag),
                strength,
            });
        }
        Ok(SelectedFeatureSet {
            members,
            pc_alpha: pc_alpha.ok_or_else(|| bad(1, "missing pc_alpha".into()))?,
            mode: mode.ok_or_else(|| bad(1, "missing mode".into()))?,
            fold: fold.ok_or_else(|| bad(1, "missing fold".into()))?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub lag_min: usize,
    pub lag_max: usize,
    pub pc_alpha: f64,
    /// `None` for unbounded conditioning sets.
    pub max_cond_size: Option<usize>,
    pub assumptions: LinkAssumptions,
    pub mode: AssumptionMode,
    pub fold: Option<usize>,
}

impl MpcConfig {
    pub fn new(lag_min: usize, lag_max: usize, pc_alpha: f64) -> Self {
        MpcConfig {
            lag_min,
            lag_max,
            pc_alpha,
            max_cond_size: Some(3),
            assumptions: LinkAssumptions::new(),
            mode: AssumptionMode::NoAssumps,
            fold: None,
        }
    }
}

/// Memo of CI outcomes keyed by `(candidate, conditioning set)`; shared
/// across an alpha sweep, where the same tests recur.
#[derive(Default)]
pub struct CiCache {
    inner: Mutex<HashMap<(Feature, Vec<Feature>), CiOutcome>>,
}

impl CiCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_run(&self, key: (Feature, Vec<Feature>), run: impl FnOnce() -> Result<CiOutcome>) -> Result<CiOutcome> {
        if let Some(hit) = self.inner.lock().expect("ci cache poisoned").get(&key) {
            return Ok(*hit);
        }
        let out = run()?;
        self.inner.lock().expect("ci cache poisoned").insert(key, out);
        Ok(out)
    }
}

/// Candidate `(predictor, lag)` pairs in canonical order.
pub fn candidate_features(
    panel: &AlignedPanel,
    target: &str,
    lag_min: usize,
    lag_max: usize,
    assumptions: &LinkAssumptions,
) -> Vec<Feature> {
    let mut codes: Vec<&String> = panel.codes().iter().collect();
    codes.sort();
    let mut out = Vec::new();
    for code in codes {
        for lag in lag_min..=lag_max {
            let f = Feature::new(code.clone(), lag);
            if (code == target && lag == 0) || assumptions.status(&f) == LinkStatus::Forbidden {
                continue;
            }
            out.push(f);
        }
    }
    out
}

fn validate(panel: &AlignedPanel, target: &str, cfg: &MpcConfig) -> Result<()> {
    if cfg.lag_min > cfg.lag_max || cfg.lag_max >= panel.len() {
        return Err(Error::Validation(format!(
            "lag window [{}, {}] invalid for panel length {}",
            cfg.lag_min,
            cfg.lag_max,
            panel.len()
        )));
    }
    if !(cfg.pc_alpha > 0.0 && cfg.pc_alpha < 1.0) {
        return Err(Error::Validation(format!("pc_alpha {} outside (0, 1)", cfg.pc_alpha)));
    }
    if panel.code_index(target).is_none() {
        return Err(Error::Validation(format!("target {target} not in panel")));
    }
    Ok(())
}

/// Runs the selection for one `pc_alpha`.
pub fn mpc_select(
    panel: &AlignedPanel,
    target: &str,
    cfg: &MpcConfig,
    train_ids: &[String],
) -> Result<SelectedFeatureSet> {
    mpc_select_cached(panel, target, cfg, train_ids, &CiCache::new())
}

pub fn mpc_select_cached(
    panel: &AlignedPanel,
    target: &str,
    cfg: &MpcConfig,
    train_ids: &[String],
    cache: &CiCache,
) -> Result<SelectedFeatureSet> {
    validate(panel, target, cfg)?;
    let storms = panel.storm_indices(train_ids)?;
    if storms.is_empty() {
        return Err(Error::Validation("discovery needs training storms".into()));
    }
    let candidates = candidate_features(panel, target, cfg.lag_min, cfg.lag_max, &cfg.assumptions);
    let forced = |f: &Feature| cfg.assumptions.is_forced(f);

    let test = |x: &Feature, cond: Vec<Feature>| -> Result<CiOutcome> {
        cache.get_or_run((x.clone(), cond.clone()), || {
            let samples = pooled_samples(panel, x, target, &cond, &storms)?;
            Ok(partial_correlation(&samples))
        })
    };

    let level0: Vec<CiOutcome> = candidates
        .par_iter()
        .map(|c| test(c, Vec::new()))
        .collect::<Result<_>>()?;
    let mut strength: BTreeMap<Feature, f64> = BTreeMap::new();
    let mut survivors = Vec::new();
    for (c, out) in candidates.iter().zip(&level0) {
        if forced(c) || !is_independent(out, cfg.pc_alpha) {
            strength.insert(c.clone(), out.strength());
            survivors.push(c.clone());
        }
    }

    let mut p = 1;
    loop {
        if cfg.max_cond_size.is_some_and(|m| p > m) || p + 1 > survivors.len() {
            break;
        }
        let to_test: Vec<&Feature> = survivors.iter().filter(|c| !forced(c)).collect();
        if to_test.is_empty() {
            break;
        }
        let outcomes: Vec<CiOutcome> = to_test
            .par_iter()
            .map(|c| {
                let mut others: Vec<&Feature> = survivors.iter().filter(|o| o != c).collect();
                others.sort_by(|a, b| strength[*b].total_cmp(&strength[*a]).then_with(|| a.cmp(b)));
                let mut cond: Vec<Feature> = others.into_iter().take(p).cloned().collect();
                cond.sort();
                test(c, cond)
            })
            .collect::<Result<_>>()?;
        let mut removed = Vec::new();
        for (c, out) in to_test.iter().zip(&outcomes) {
            if is_independent(out, cfg.pc_alpha) {
                removed.push((*c).clone());
            } else {
                strength.insert((*c).clone(), out.strength());
            }
        }
        survivors.retain(|s| !removed.contains(s));
        p += 1;
    }

    Ok(SelectedFeatureSet {
        members: survivors
            .into_iter()
            .map(|f| SelectedFeature {
                strength: strength[&f],
                feature: f,
            })
            .collect(),
        pc_alpha: cfg.pc_alpha,
        mode: cfg.mode,
        fold: cfg.fold,
    })
}

/// One independent selection per alpha, sharing a CI-test memo.
pub fn sweep_alpha(
    panel: &AlignedPanel,
    target: &str,
    alphas: &[f64],
    cfg: &MpcConfig,
    train_ids: &[String],
) -> Result<Vec<SelectedFeatureSet>> {
    if alphas.is_empty() {
        return Err(Error::Validation("alpha grid is empty".into()));
    }
    let cache = CiCache::new();
    let out = alphas
        .iter()
        .map(|&a| {
            let mut c = cfg.clone();
            c.pc_alpha = a;
            mpc_select_cached(panel, target, &c, train_ids, &cache)
        })
        .collect::<Result<Vec<_>>>()?;
    for s in &out {
        log::info!("pc_alpha={} selected {} features", s.pc_alpha, s.len());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_panel, ScmSpec};

    fn chain() -> (AlignedPanel, Vec<String>) {
        let spec = ScmSpec::new(&["X1", "X2", "Y"], "Y", 20, 200, 17)
            .link("X1", "X2", 1, 0.8)
            .link("X2", "Y", 1, 0.8);
        let (panel, _) = generate_panel(&spec).unwrap();
        let ids = panel.storm_ids();
        (panel, ids)
    }

    #[test]
    fn candidates_skip_target_at_lag_zero_and_forbidden() {
        let (panel, _) = chain();
        let mut a = LinkAssumptions::new();
        a.set(Feature::new("X1", 1), LinkStatus::Forbidden);
        let c = candidate_features(&panel, "Y", 0, 1, &a);
        let names: Vec<String> = c.iter().map(|f| f.to_string()).collect();
        assert_eq!(names, ["X1@0", "X2@0", "X2@1", "Y@1"]);
    }

    #[test]
    fn chain_selects_only_the_direct_parent() {
        let (panel, ids) = chain();
        let cfg = MpcConfig::new(1, 1, 0.01);
        let sel = mpc_select(&panel, "Y", &cfg, &ids).unwrap();
        assert_eq!(sel.features(), vec![Feature::new("X2", 1)]);
        assert!(sel.members[0].strength > 0.3);
    }

    #[test]
    fn selection_is_deterministic() {
        let (panel, ids) = chain();
        let cfg = MpcConfig::new(1, 3, 0.05);
        let a = mpc_select(&panel, "Y", &cfg, &ids).unwrap();
        let b = mpc_select(&panel, "Y", &cfg, &ids).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_links_always_survive_and_do_not_change_strength() {
        let (panel, ids) = chain();
        let mut cfg = MpcConfig::new(1, 1, 0.01);
        cfg.assumptions.set_code("X1", LinkStatus::Forced);
        cfg.mode = AssumptionMode::WithAssumps;
        let sel = mpc_select(&panel, "Y", &cfg, &ids).unwrap();
        assert!(sel.contains(&Feature::new("X1", 1)));
        assert!(sel.contains(&Feature::new("X2", 1)));
        let storms = panel.storm_indices(&ids).unwrap();
        let marginal =
            partial_correlation(&pooled_samples(&panel, &Feature::new("X1", 1), "Y", &[], &storms).unwrap());
        let forced = sel.members.iter().find(|m| m.feature.code == "X1").unwrap();
        assert_eq!(forced.strength, marginal.strength());
    }

    #[test]
    fn unbounded_conditioning_agrees_on_small_chain() {
        let (panel, ids) = chain();
        let mut cfg = MpcConfig::new(1, 2, 0.01);
        cfg.max_cond_size = None;
        let sel = mpc_select(&panel, "Y", &cfg, &ids).unwrap();
        assert!(sel.contains(&Feature::new("X2", 1)));
        assert!(!sel.contains(&Feature::new("X1", 1)));
    }

    #[test]
    fn sweep_matches_independent_runs() {
        let (panel, ids) = chain();
        let cfg = MpcConfig::new(1, 2, 0.05);
        let alphas = [0.001, 0.05, 0.2];
        let swept = sweep_alpha(&panel, "Y", &alphas, &cfg, &ids).unwrap();
        for (s, &a) in swept.iter().zip(&alphas) {
            let mut c = cfg.clone();
            c.pc_alpha = a;
            assert_eq!(*s, mpc_select(&panel, "Y", &c, &ids).unwrap());
        }
    }

    #[test]
    fn invalid_configuration_is_rejected() {
        let (panel, ids) = chain();
        assert!(mpc_select(&panel, "Y", &MpcConfig::new(2, 1, 0.05), &ids).is_err());
        assert!(mpc_select(&panel, "Y", &MpcConfig::new(0, 1, 1.5), &ids).is_err());
        assert!(mpc_select(&panel, "NOPE", &MpcConfig::new(0, 1, 0.05), &ids).is_err());
        assert!(mpc_select(&panel, "Y", &MpcConfig::new(0, 1, 0.05), &[]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let set = SelectedFeatureSet {
            members: vec![
                SelectedFeature { feature: Feature::new("SHRD", 2), strength: 0.25 },
                SelectedFeature { feature: Feature::new("VMAX", 0), strength: 0.1 + 0.2 },
            ],
            pc_alpha: 0.05,
            mode: AssumptionMode::WithAssumps,
            fold: Some(3),
        };
        assert_eq!(SelectedFeatureSet::from_text(&set.to_text()).unwrap(), set);
        let none = SelectedFeatureSet { fold: None, members: vec![], ..set };
        assert_eq!(SelectedFeatureSet::from_text(&none.to_text()).unwrap(), none);
    }
}
