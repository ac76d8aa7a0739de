use std::collections::BTreeMap;
use std::fs::File;

use rayon::prelude::*;

use super::config::{AlignMode, ExperimentConfig, Method, StandardizeScope, TargetSpec};
use super::shortlist::{aggregate_shortlist, assemble_ships_plus, Shortlist};
use crate::baselines::{rank_by_correlation, rank_by_forest_importance, top_k_sets, ForestConfig};
use crate::dataset::{
    align_by_mslp_minimum, load_manifest, make_folds, parse_storm_csv, standardize, AlignedPanel, FoldSpec, Role,
    StormSeries,
};
use crate::discovery::{candidate_features, sweep_alpha, AssumptionMode, LinkAssumptions, LinkStatus, MpcConfig, SelectedFeatureSet};
use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::regression::{evaluate, fit_head, panel_design, Head, Metrics, Regressor, RegressionModel};
use crate::rng::derive_seed;
use crate::synth::{generate_panel, split_ids, ScmSpec};

/// Loaded, aligned, unstandardized data with its train/test split and folds.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub panel: AlignedPanel,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub folds: FoldSpec,
}

fn load_storms(cfg: &ExperimentConfig) -> Result<(Vec<StormSeries>, Vec<String>, Vec<String>)> {
    if let Some(spec_path) = &cfg.synth_spec {
        let spec = ScmSpec::load(spec_path)?;
        let (panel, _) = generate_panel(&spec)?;
        let (train, test) = split_ids(&spec);
        return Ok((panel.to_series()?, train, test));
    }
    let path = cfg.manifest.as_ref().ok_or_else(|| Error::Config("no data source configured".into()))?;
    let entries = load_manifest(path)?;
    let storms: Vec<StormSeries> = entries
        .par_iter()
        .map(|e| {
            let f = File::open(&e.path).map_err(|err| Error::io(&e.path, err))?;
            parse_storm_csv(&e.storm_id, f, &e.path.display().to_string())
        })
        .collect::<Result<_>>()?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for e in &entries {
        match e.role {
            Role::Train => train.push(e.storm_id.clone()),
            Role::Test => test.push(e.storm_id.clone()),
        }
    }
    Ok((storms, train, test))
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (storms, mut train, mut test) = load_storms(cfg)?;
    let panel = match cfg.align {
        AlignMode::None => AlignedPanel::unaligned(&storms)?,
        AlignMode::Mslp => {
            let a = align_by_mslp_minimum(&storms, cfg.align_sigma)?;
            if !a.rejected.is_empty() {
                log::warn!("{} storms without pressure data excluded: {}", a.rejected.len(), a.rejected.join(", "));
                train.retain(|s| !a.rejected.contains(s));
                test.retain(|s| !a.rejected.contains(s));
            }
            a.panel
        }
    };
    if train.len() < cfg.folds {
        return Err(Error::Validation(format!("{} training storms for {} folds", train.len(), cfg.folds)));
    }
    let folds = make_folds(&train, cfg.folds, cfg.seed)?.with_test_ids(test.clone())?;
    Ok(Prepared {
        panel,
        train_ids: train,
        test_ids: test,
        folds,
    })
}

/// One target's panel (pool-standardized) and its candidate space.
#[derive(Debug, Clone)]
pub struct TargetContext {
    pub label: String,
    pub target: String,
    /// Target set, unstandardized.
    pub raw: AlignedPanel,
    /// Standardized over the training pool.
    pub panel: AlignedPanel,
    pub forbidden: Vec<Feature>,
}

pub fn target_context(prep: &Prepared, spec: &TargetSpec, cfg: &ExperimentConfig) -> Result<TargetContext> {
    let raw = match spec {
        TargetSpec::Lead(h) => prep.panel.clone().with_intensity_target(*h)?,
        TargetSpec::Column(c) => prep.panel.clone().with_target_column(c)?,
    };
    let target = spec.code();
    // An intensity-change target lagged less than its lead overlaps the
    // future and is never a valid predictor.
    let forbidden = match spec {
        TargetSpec::Lead(h) => (0..(*h / 6) as usize).map(|l| Feature::new(target.clone(), l)).collect(),
        TargetSpec::Column(_) => Vec::new(),
    };
    if cfg.lag_max >= raw.len() {
        return Err(Error::Validation(format!("lag_max {} exceeds panel length {}", cfg.lag_max, raw.len())));
    }
    let panel = standardize(&raw, &prep.train_ids)?;
    Ok(TargetContext {
        label: target.clone(),
        target,
        raw,
        panel,
        forbidden,
    })
}

impl TargetContext {
    pub fn assumptions(&self, mode: AssumptionMode, cfg: &ExperimentConfig) -> LinkAssumptions {
        let mut a = match mode {
            AssumptionMode::WithAssumps => LinkAssumptions::forcing_codes(cfg.forced.iter().cloned()),
            AssumptionMode::NoAssumps => LinkAssumptions::new(),
        };
        for f in &self.forbidden {
            a.set(f.clone(), LinkStatus::Forbidden);
        }
        a
    }

    fn fold_panel(&self, prep: &Prepared, fold: usize, cfg: &ExperimentConfig) -> Result<AlignedPanel> {
        match cfg.standardize {
            StandardizeScope::Pool => Ok(self.panel.clone()),
            StandardizeScope::Fold => standardize(&self.raw, &prep.folds.training(fold)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPoint {
    Alpha(f64),
    K(usize),
    All,
}

impl std::fmt::Display for GridPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridPoint::Alpha(a) => write!(f, "alpha={a}"),
            GridPoint::K(k) => write!(f, "k={k}"),
            GridPoint::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldEntry {
    pub grid: GridPoint,
    pub features: Vec<Feature>,
    pub train: Option<Metrics>,
    pub val: Option<Metrics>,
    pub test: Option<Metrics>,
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub target: String,
    pub fold: usize,
    pub method: Method,
    pub mode: AssumptionMode,
    pub regressor: Regressor,
    pub entries: Vec<FoldEntry>,
    pub best_entry: Option<usize>,
    /// Fitted head of the best entry.
    pub best_model: Option<RegressionModel>,
}

impl FoldReport {
    pub fn best(&self) -> Option<&FoldEntry> {
        self.best_entry.map(|i| &self.entries[i])
    }
}

fn nan_low(v: f64) -> f64 {
    if v.is_nan() { f64::NEG_INFINITY } else { v }
}

/// Highest validation R², then PCC, then fewer features, then earliest.
pub fn select_best(entries: &[FoldEntry]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in entries.iter().enumerate() {
        let Some(v) = e.val.filter(|m| m.r2_defined()) else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bv = entries[b].val.expect("selected entries have metrics");
                v.r2 > bv.r2
                    || (v.r2 == bv.r2
                        && (nan_low(v.pcc) > nan_low(bv.pcc)
                            || (nan_low(v.pcc) == nan_low(bv.pcc) && e.features.len() < entries[b].features.len())))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Feature sets for each grid point of `method` on one fold.
fn feature_sets(
    ctx: &TargetContext,
    panel: &AlignedPanel,
    train: &[String],
    fold: usize,
    method: Method,
    mode: AssumptionMode,
    cfg: &ExperimentConfig,
) -> Result<Vec<(GridPoint, Vec<Feature>)>> {
    let assumptions = ctx.assumptions(mode, cfg);
    let candidates = candidate_features(panel, &ctx.target, cfg.lag_min, cfg.lag_max, &assumptions);
    let forced: Vec<Feature> = candidates.iter().filter(|f| assumptions.is_forced(f)).cloned().collect();
    let with_forced = |set: Vec<Feature>| -> Vec<Feature> {
        let mut out = forced.clone();
        out.extend(set.into_iter().filter(|f| !forced.contains(f)));
        out
    };
    Ok(match method {
        Method::Causal => {
            let mpc = MpcConfig {
                lag_min: cfg.lag_min,
                lag_max: cfg.lag_max,
                pc_alpha: cfg.alphas[0],
                max_cond_size: cfg.max_cond_size,
                assumptions,
                mode,
                fold: Some(fold),
            };
            sweep_alpha(panel, &ctx.target, &cfg.alphas, &mpc, train)?
                .into_iter()
                .map(|s| (GridPoint::Alpha(s.pc_alpha), s.features()))
                .collect()
        }
        Method::Correlation | Method::Forest => {
            let ranking = if method == Method::Correlation {
                rank_by_correlation(panel, &ctx.target, &candidates, train)?
            } else {
                let fc = ForestConfig {
                    seed: derive_seed(cfg.seed, &format!("forest/{}/{mode}", ctx.label), fold as u64),
                    ..cfg.forest.clone()
                };
                rank_by_forest_importance(panel, &ctx.target, &candidates, train, &fc)?
            };
            let ks: Vec<usize> = cfg.ks.iter().copied().filter(|&k| k <= ranking.len()).collect();
            let ks = if ks.is_empty() { vec![ranking.len()] } else { ks };
            top_k_sets(&ranking, &ks)?
                .into_iter()
                .zip(ks)
                .map(|(s, k)| (GridPoint::K(k), if mode == AssumptionMode::WithAssumps { with_forced(s) } else { s }))
                .collect()
        }
        Method::None => vec![(GridPoint::All, candidates)],
    })
}

pub fn run_fold(
    prep: &Prepared,
    ctx: &TargetContext,
    fold: usize,
    method: Method,
    mode: AssumptionMode,
    cfg: &ExperimentConfig,
) -> Result<FoldReport> {
    let panel = ctx.fold_panel(prep, fold, cfg)?;
    let train = prep.folds.training(fold);
    let val = prep.folds.members(fold);
    let storms = |ids: &[String]| panel.storm_indices(ids);
    let (tr_s, va_s, te_s) = (storms(&train)?, storms(&val)?, storms(&prep.test_ids)?);
    let sets = feature_sets(ctx, &panel, &train, fold, method, mode, cfg)?;
    let component = format!("mlp/{}/{method}/{mode}/{fold}", ctx.label);
    let fitted: Vec<(FoldEntry, Option<Head>)> = sets
        .into_par_iter()
        .enumerate()
        .map(|(i, (grid, features))| {
            if features.is_empty() {
                return Ok((
                    FoldEntry { grid, features, train: None, val: None, test: None, flag: Some("empty-set".into()) },
                    None,
                ));
            }
            let (xt, yt) = panel_design(&panel, &features, &ctx.target, &tr_s)?;
            let (xv, yv) = panel_design(&panel, &features, &ctx.target, &va_s)?;
            let (xe, ye) = panel_design(&panel, &features, &ctx.target, &te_s)?;
            let mlp = crate::regression::MlpConfig { seed: derive_seed(cfg.seed, &component, i as u64), ..cfg.mlp.clone() };
            let head = match fit_head(cfg.regressor, &features, (&xt, &yt), (&xv, &yv), &mlp) {
                Ok(h) => h,
                Err(Error::RankDeficient(m)) => {
                    return Ok((
                        FoldEntry { grid, features, train: None, val: None, test: None, flag: Some(format!("rank-deficient: {m}")) },
                        None,
                    ))
                }
                Err(e) => return Err(e),
            };
            let predict = |x: &[Vec<f64>]| match &head {
                Head::Mlr(m) => m.predict(x),
                Head::Mlp(m) => m.predict(x),
            };
            let metrics = |x: &[Vec<f64>], y: &[f64]| -> Result<Option<Metrics>> {
                if y.len() < 2 {
                    return Ok(None);
                }
                Ok(Some(evaluate(y, &predict(x)?)?))
            };
            let entry = FoldEntry {
                grid,
                train: metrics(&xt, &yt)?,
                val: metrics(&xv, &yv)?,
                test: metrics(&xe, &ye)?,
                features,
                flag: None,
            };
            Ok((entry, Some(head)))
        })
        .collect::<Result<_>>()?;
    let (entries, mut heads): (Vec<FoldEntry>, Vec<Option<Head>>) = fitted.into_iter().unzip();
    let best_entry = select_best(&entries);
    let best_model = best_entry
        .and_then(|b| heads[b].take())
        .map(|h| RegressionModel::new(&ctx.target, panel.standardization().clone(), h));
    Ok(FoldReport {
        target: ctx.label.clone(),
        fold,
        method,
        mode,
        regressor: cfg.regressor,
        entries,
        best_entry,
        best_model,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub target: String,
    pub method: Method,
    pub mode: AssumptionMode,
    pub n_folds: usize,
    pub median_test_r2: f64,
    pub q1_test_r2: f64,
    pub q3_test_r2: f64,
    pub median_val_r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShortlistResult {
    pub target: String,
    pub mode: AssumptionMode,
    pub shortlist: Shortlist,
    pub ships_plus: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub reports: Vec<FoldReport>,
    pub summary: Vec<SummaryRow>,
    pub shortlists: Vec<ShortlistResult>,
}

/// Linear-interpolation quantile of sorted-ascending finite values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn sorted_finite(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    out.sort_by(f64::total_cmp);
    out
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let prep = prepare(cfg)?;
    run_prepared(&prep, cfg)
}

pub fn run_prepared(prep: &Prepared, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    let mut shortlists = Vec::new();
    for spec in cfg.targets() {
        let ctx = target_context(prep, &spec, cfg)?;
        for &mode in &cfg.modes {
            for &method in &cfg.methods {
                let fold_reports: Vec<FoldReport> = (0..cfg.folds)
                    .into_par_iter()
                    .map(|f| run_fold(prep, &ctx, f, method, mode, cfg))
                    .collect::<Result<_>>()?;
                let best = |m: fn(&FoldEntry) -> Option<Metrics>| {
                    sorted_finite(fold_reports.iter().filter_map(|r| r.best().and_then(m)).map(|x| x.r2))
                };
                let test = best(|e| e.test);
                let val = best(|e| e.val);
                summary.push(SummaryRow {
                    target: ctx.label.clone(),
                    method,
                    mode,
                    n_folds: test.len(),
                    median_test_r2: quantile(&test, 0.5),
                    q1_test_r2: quantile(&test, 0.25),
                    q3_test_r2: quantile(&test, 0.75),
                    median_val_r2: quantile(&val, 0.5),
                });
                if method == Method::Causal {
                    let sets: Vec<Vec<Feature>> =
                        fold_reports.iter().filter_map(|r| r.best().map(|e| e.features.clone())).collect();
                    let shortlist = aggregate_shortlist(&sets, cfg.shortlist_threshold, &cfg.exclude);
                    let ships_plus = assemble_ships_plus(&cfg.base_predictors, &shortlist);
                    shortlists.push(ShortlistResult { target: ctx.label.clone(), mode, shortlist, ships_plus });
                }
                reports.extend(fold_reports);
            }
        }
    }
    Ok(ExperimentResult { reports, summary, shortlists })
}

/// Causal selections for every (target, mode, fold) over the alpha grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryRun {
    pub target: String,
    pub mode: AssumptionMode,
    pub fold: usize,
    pub sets: Vec<SelectedFeatureSet>,
}

pub fn run_discovery(prep: &Prepared, cfg: &ExperimentConfig) -> Result<Vec<DiscoveryRun>> {
    let mut out = Vec::new();
    for spec in cfg.targets() {
        let ctx = target_context(prep, &spec, cfg)?;
        for &mode in &cfg.modes {
            let runs: Vec<DiscoveryRun> = (0..cfg.folds)
                .into_par_iter()
                .map(|fold| {
                    let panel = ctx.fold_panel(prep, fold, cfg)?;
                    let mpc = MpcConfig {
                        lag_min: cfg.lag_min,
                        lag_max: cfg.lag_max,
                        pc_alpha: cfg.alphas[0],
                        max_cond_size: cfg.max_cond_size,
                        assumptions: ctx.assumptions(mode, cfg),
                        mode,
                        fold: Some(fold),
                    };
                    let sets = sweep_alpha(&panel, &ctx.target, &cfg.alphas, &mpc, &prep.folds.training(fold))?;
                    Ok(DiscoveryRun { target: ctx.label.clone(), mode, fold, sets })
                })
                .collect::<Result<_>>()?;
            out.extend(runs);
        }
    }
    Ok(out)
}

fn metric_cells(m: &Option<Metrics>) -> String {
    match m {
        Some(m) => format!("{},{},{},{}", m.r2, m.pcc, m.mae, m.n),
        None => ",,,".into(),
    }
}

pub const FOLD_REPORT_HEADER: &str = "target,method,mode,regressor,fold,entry,grid,n_features,features,train_r2,train_pcc,train_mae,train_n,val_r2,val_pcc,val_mae,val_n,test_r2,test_pcc,test_mae,test_n,best,flag";

pub fn fold_reports_csv(reports: &[FoldReport]) -> String {
    let mut out = format!("{FOLD_REPORT_HEADER}\n");
    for r in reports {
        for (i, e) in r.entries.iter().enumerate() {
            let feats: Vec<String> = e.features.iter().map(|f| f.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.target,
                r.method,
                r.mode,
                r.regressor,
                r.fold,
                i,
                e.grid,
                e.features.len(),
                feats.join(";"),
                metric_cells(&e.train),
                metric_cells(&e.val),
                metric_cells(&e.test),
                (r.best_entry == Some(i)) as u8,
                e.flag.as_deref().unwrap_or("")
            ));
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("target,method,mode,n_folds,median_test_r2,q1_test_r2,q3_test_r2,median_val_r2\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.target, r.method, r.mode, r.n_folds, r.median_test_r2, r.q1_test_r2, r.q3_test_r2, r.median_val_r2
        ));
    }
    out
}

pub fn shortlist_csv(rows: &[ShortlistResult]) -> String {
    let mut out = String::from("target,mode,predictor,count,n_sets,threshold,lags\n");
    for r in rows {
        for m in &r.shortlist.members {
            let lags: Vec<String> = m.lags.iter().map(|l| l.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.target, r.mode, m.code, m.count, r.shortlist.n_sets, r.shortlist.threshold, lags.join(";")
            ));
        }
    }
    out
}

pub fn ships_plus_csv(rows: &[ShortlistResult]) -> String {
    let mut out = String::from("target,mode,position,predictor\n");
    for r in rows {
        for (i, c) in r.ships_plus.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", r.target, r.mode, i, c));
        }
    }
    out
}

/// Predictor-presence matrix: one row per (target, mode, fold, feature),
/// one 0/1 column per alpha.
pub fn abacus_csv(runs: &[DiscoveryRun], alphas: &[f64]) -> String {
    let mut out = String::from("target,mode,fold,predictor,lag");
    for a in alphas {
        out.push_str(&format!(",alpha_{a}"));
    }
    out.push('\n');
    for r in runs {
        let mut rows: BTreeMap<Feature, Vec<u8>> = BTreeMap::new();
        for (ai, s) in r.sets.iter().enumerate() {
            for f in s.features() {
                rows.entry(f).or_insert_with(|| vec![0; r.sets.len()])[ai] = 1;
            }
        }
        for (f, flags) in rows {
            out.push_str(&format!("{},{},{},{},{}", r.target, r.mode, r.fold, f.code, f.lag));
            for v in flags {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Abacus rows derived from the causal fold reports of an experiment.
pub fn abacus_from_reports(reports: &[FoldReport]) -> Vec<DiscoveryRun> {
    reports
        .iter()
        .filter(|r| r.method == Method::Causal)
        .map(|r| DiscoveryRun {
            target: r.target.clone(),
            mode: r.mode,
            fold: r.fold,
            sets: r
                .entries
                .iter()
                .map(|e| SelectedFeatureSet {
                    members: e
                        .features
                        .iter()
                        .map(|f| crate::discovery::SelectedFeature { feature: f.clone(), strength: f64::NAN })
                        .collect(),
                    pc_alpha: match e.grid {
                        GridPoint::Alpha(a) => a,
                        _ => f64::NAN,
                    },
                    mode: r.mode,
                    fold: Some(r.fold),
                })
                .collect(),
        })
        .collect()
}
