use crate::dataset::AlignedPanel;
use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::regression::{fit_mlr, panel_design, MlrModel};

use super::config::ScreeningConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScreen {
    pub feature: Feature,
    /// Gain in training R² from adding the candidate alone, per interval.
    pub delta_r2: Vec<f64>,
    /// Candidate t-statistic and p-value in the base-plus-candidate fit.
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Largest mean gain over any `runs` consecutive intervals.
    pub best_window_gain: f64,
    pub significant_intervals: usize,
    pub cond1: bool,
    pub cond2: bool,
    /// Survived the joint refit and backward elimination.
    pub cond3: bool,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    pub intervals: Vec<u32>,
    pub candidates: Vec<CandidateScreen>,
    /// Removed by backward elimination, in removal order.
    pub eliminated: Vec<Feature>,
    pub retained: Vec<Feature>,
}

pub const SCREENING_HEADER: &str =
    "predictor,lag,best_window_gain,significant_intervals,cond1,cond2,cond3,retained,flags";
pub const SCREENING_INTERVAL_HEADER: &str = "predictor,lag,interval_hours,delta_r2,t_stat,p_value";

impl ScreeningReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SCREENING_HEADER}\n");
        for c in &self.candidates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.feature.code,
                c.feature.lag,
                c.best_window_gain,
                c.significant_intervals,
                c.cond1 as u8,
                c.cond2 as u8,
                c.cond3 as u8,
                self.retained.contains(&c.feature) as u8,
                c.flags.join(";")
            ));
        }
        out
    }

    pub fn intervals_csv(&self) -> String {
        let mut out = format!("{SCREENING_INTERVAL_HEADER}\n");
        for c in &self.candidates {
            for (i, h) in self.intervals.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    c.feature.code, c.feature.lag, h, c.delta_r2[i], c.t_stats[i], c.p_values[i]
                ));
            }
        }
        out
    }
}

/// `k`-th largest `|t|` (1-based), NaN counted as zero.
fn kth_largest_abs(t: &[f64], k: usize) -> f64 {
    let mut a: Vec<f64> = t.iter().map(|v| if v.is_nan() { 0.0 } else { v.abs() }).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    a.get(k.saturating_sub(1)).copied().unwrap_or(0.0)
}

fn best_window(gains: &[f64], runs: usize) -> f64 {
    if runs == 0 || gains.len() < runs {
        return f64::NEG_INFINITY;
    }
    gains
        .windows(runs)
        .map(|w| w.iter().sum::<f64>() / runs as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

struct IntervalData {
    panel: AlignedPanel,
    target: String,
}

fn fit_on(data: &IntervalData, features: &[Feature], storms: &[usize]) -> Result<(MlrModel, Vec<f64>)> {
    let (x, y) = panel_design(&data.panel, features, &data.target, storms)?;
    let m = fit_mlr(features, &x, &y)?;
    Ok((m, y))
}

/// Three-condition predictor screening over forecast intervals, with
/// backward elimination on the joint refit.
pub fn screen_predictors(
    panel: &AlignedPanel,
    train_ids: &[String],
    cfg: &ScreeningConfig,
) -> Result<ScreeningReport> {
    if cfg.intervals.is_empty() {
        return Err(Error::Validation("screening needs at least one interval".into()));
    }
    if let Some(c) = cfg.candidates.iter().find(|c| cfg.base.contains(c)) {
        return Err(Error::Validation(format!("candidate {c} is already in the base set")));
    }
    let storms = panel.storm_indices(train_ids)?;
    let alpha = 1.0 - cfg.significance;
    let data: Vec<IntervalData> = cfg
        .intervals
        .iter()
        .map(|&h| {
            let p = panel.clone().with_intensity_target(h)?;
            Ok(IntervalData {
                target: p.target_code().unwrap_or_default().to_string(),
                panel: p,
            })
        })
        .collect::<Result<_>>()?;

    let mut candidates: Vec<CandidateScreen> = Vec::with_capacity(cfg.candidates.len());
    for cand in &cfg.candidates {
        let mut with = cfg.base.clone();
        with.push(cand.clone());
        let mut screen = CandidateScreen {
            feature: cand.clone(),
            delta_r2: Vec::new(),
            t_stats: Vec::new(),
            p_values: Vec::new(),
            best_window_gain: 0.0,
            significant_intervals: 0,
            cond1: false,
            cond2: false,
            cond3: false,
            flags: Vec::new(),
        };
        for (d, h) in data.iter().zip(&cfg.intervals) {
            // Both fits use the rows complete for the candidate too.
            let (x, y) = panel_design(&d.panel, &with, &d.target, &storms)?;
            let base_x: Vec<Vec<f64>> = x[..cfg.base.len()].to_vec();
            let base = fit_mlr(&cfg.base, &base_x, &y)
                .map_err(|e| Error::Validation(format!("base set fit failed at {h} h: {e}")))?;
            match fit_mlr(&with, &x, &y) {
                Ok(m) => {
                    screen.delta_r2.push(m.r2_from(&y) - base.r2_from(&y));
                    screen.t_stats.push(*m.t_stats.last().unwrap());
                    screen.p_values.push(*m.p_values.last().unwrap());
                }
                Err(Error::RankDeficient(_)) => {
                    screen.flags.push(format!("rank-deficient@{h}"));
                    screen.delta_r2.push(0.0);
                    screen.t_stats.push(f64::NAN);
                    screen.p_values.push(f64::NAN);
                }
                Err(e) => return Err(e),
            }
        }
        screen.best_window_gain = best_window(&screen.delta_r2, cfg.runs);
        screen.significant_intervals = screen.p_values.iter().filter(|p| **p < alpha).count();
        screen.cond1 = screen.best_window_gain >= cfg.dvar;
        screen.cond2 = screen.significant_intervals >= cfg.runs;
        candidates.push(screen);
    }

    let mut joint: Vec<Feature> = candidates
        .iter()
        .filter(|c| c.cond1 && c.cond2)
        .map(|c| c.feature.clone())
        .collect();
    joint.sort();
    let mut eliminated = Vec::new();
    'refit: while !joint.is_empty() {
        let mut feats = cfg.base.clone();
        feats.extend(joint.iter().cloned());
        let mut t_by_cand = vec![Vec::with_capacity(data.len()); joint.len()];
        let mut sig = vec![0usize; joint.len()];
        for (d, h) in data.iter().zip(&cfg.intervals) {
            let m = match fit_on(d, &feats, &storms) {
                Ok((m, _)) => m,
                Err(Error::RankDeficient(msg)) => {
                    let victim = joint
                        .iter()
                        .rev()
                        .find(|f| msg.contains(&f.to_string()))
                        .or(joint.last())
                        .cloned()
                        .expect("nonempty");
                    log::warn!("joint refit rank deficient at {h} h; dropping {victim}");
                    if let Some(c) = candidates.iter_mut().find(|c| c.feature == victim) {
                        c.flags.push(format!("dropped-rank-deficient@{h}"));
                    }
                    joint.retain(|f| *f != victim);
                    eliminated.push(victim);
                    continue 'refit;
                }
                Err(e) => return Err(e),
            };
            for (j, _) in joint.iter().enumerate() {
                let k = cfg.base.len() + j;
                t_by_cand[j].push(m.t_stats[k]);
                if m.p_values[k] < alpha {
                    sig[j] += 1;
                }
            }
        }
        if sig.iter().all(|&s| s >= cfg.runs) {
            break;
        }
        let (worst, _) = joint
            .iter()
            .enumerate()
            .map(|(j, _)| (j, kth_largest_abs(&t_by_cand[j], cfg.runs)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("nonempty");
        eliminated.push(joint.remove(worst));
    }
    for c in &mut candidates {
        c.cond3 = joint.contains(&c.feature);
    }
    Ok(ScreeningReport {
        intervals: cfg.intervals.clone(),
        candidates,
        eliminated,
        retained: joint,
    })
}
