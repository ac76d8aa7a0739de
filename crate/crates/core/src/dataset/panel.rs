use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::storm::{intensity_change, target_code, StormSeries, VMAX_CODE};
use crate::error::{Error, Result};
use crate::feature::Feature;

/// Mean and population standard deviation of one predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// A storm placed on the common panel index.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelStorm {
    pub id: String,
    /// Panel position of the storm's first step.
    pub offset: usize,
    /// Number of steps the storm occupies (its original length).
    pub span: usize,
    /// One column per panel code, panel length, NaN outside the span or
    /// where unobserved.
    pub columns: Vec<Vec<f64>>,
}

/// Storms on a common life-cycle index.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    codes: Vec<String>,
    storms: Vec<PanelStorm>,
    len: usize,
    anchor_index: usize,
    standardization: BTreeMap<String, ColumnStats>,
    target_code: Option<String>,
    dropped: Vec<String>,
}

/// Outcome of alignment: the panel plus the ids of storms that could not be
/// anchored (no observed pressure).
#[derive(Debug, Clone)]
pub struct Alignment {
    pub panel: AlignedPanel,
    pub rejected: Vec<String>,
}

impl AlignedPanel {
    /// Places storms at the given offsets. Columns are the union of storm
    /// codes in first-seen order.
    pub fn from_offsets(storms: &[StormSeries], offsets: &[usize], anchor_index: usize) -> Result<Self> {
        if storms.is_empty() {
            return Err(Error::Validation("panel needs at least one storm".into()));
        }
        let mut codes: Vec<String> = Vec::new();
        for s in storms {
            for c in s.codes() {
                if !codes.contains(c) {
                    codes.push(c.clone());
                }
            }
        }
        let len = storms
            .iter()
            .zip(offsets)
            .map(|(s, &o)| o + s.len())
            .max()
            .unwrap_or(0);
        let mut seen = std::collections::HashSet::new();
        let mut placed = Vec::with_capacity(storms.len());
        for (s, &offset) in storms.iter().zip(offsets) {
            if !seen.insert(s.storm_id.clone()) {
                return Err(Error::Validation(format!("duplicate storm id {}", s.storm_id)));
            }
            let columns = codes
                .iter()
                .map(|code| {
                    let mut col = vec![f64::NAN; len];
                    if let Some(src) = s.column(code) {
                        col[offset..offset + src.len()].copy_from_slice(src);
                    }
                    col
                })
                .collect();
            placed.push(PanelStorm {
                id: s.storm_id.clone(),
                offset,
                span: s.len(),
                columns,
            });
        }
        Ok(AlignedPanel {
            codes,
            storms: placed,
            len,
            anchor_index,
            standardization: BTreeMap::new(),
            target_code: None,
            dropped: Vec::new(),
        })
    }

    /// Stacks storms without shifting them (anchor 0). Used for panels that
    /// are aligned by construction, e.g. simulated ones.
    pub fn unaligned(storms: &[StormSeries]) -> Result<Self> {
        Self::from_offsets(storms, &vec![0; storms.len()], 0)
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn storms(&self) -> &[PanelStorm] {
        &self.storms
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn standardization(&self) -> &BTreeMap<String, ColumnStats> {
        &self.standardization
    }

    pub fn target_code(&self) -> Option<&str> {
        self.target_code.as_deref()
    }

    /// Predictors removed by [`standardize`] for lack of variance.
    pub fn dropped(&self) -> &[String] {
        &self.dropped
    }

    pub fn storm_ids(&self) -> Vec<String> {
        self.storms.iter().map(|s| s.id.clone()).collect()
    }

    pub fn code_index(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }

    pub fn storm_index(&self, id: &str) -> Option<usize> {
        self.storms.iter().position(|s| s.id == id)
    }

    /// Resolves storm ids to indices, failing on unknown ids.
    pub fn storm_indices(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.storm_index(id)
                    .ok_or_else(|| Error::Validation(format!("unknown storm id {id}")))
            })
            .collect()
    }

    pub fn column(&self, storm: usize, code: &str) -> Option<&[f64]> {
        self.code_index(code)
            .map(|c| self.storms[storm].columns[c].as_slice())
    }

    /// Per-step mask: true inside the storm's original span, false on
    /// padding.
    pub fn step_mask(&self, storm: usize) -> Vec<bool> {
        let s = &self.storms[storm];
        (0..self.len)
            .map(|t| t >= s.offset && t < s.offset + s.span)
            .collect()
    }

    /// Per-entry observation mask for one column.
    pub fn mask(&self, storm: usize, code: &str) -> Option<Vec<bool>> {
        self.column(storm, code)
            .map(|c| c.iter().map(|v| !v.is_nan()).collect())
    }

    /// Adds the intensity-change target `DELV<lead>` computed from VMAX and
    /// marks it as the panel target.
    pub fn with_intensity_target(mut self, lead_hours: u32) -> Result<Self> {
        if lead_hours == 0 || !lead_hours.is_multiple_of(6) {
            return Err(Error::Validation(format!(
                "lead time {lead_hours} h is not a positive multiple of 6"
            )));
        }
        let vi = self
            .code_index(VMAX_CODE)
            .ok_or_else(|| Error::Validation(format!("panel has no {VMAX_CODE} column")))?;
        let code = target_code(lead_hours);
        let steps = (lead_hours / 6) as usize;
        let ci = self.ensure_code(&code);
        for s in &mut self.storms {
            s.columns[ci] = intensity_change(&s.columns[vi], steps);
        }
        self.target_code = Some(code);
        Ok(self)
    }

    /// Marks an existing column as the target.
    pub fn with_target_column(mut self, code: &str) -> Result<Self> {
        if self.code_index(code).is_none() {
            return Err(Error::Validation(format!("target column {code} not in panel")));
        }
        self.target_code = Some(code.to_string());
        Ok(self)
    }

    fn ensure_code(&mut self, code: &str) -> usize {
        if let Some(i) = self.code_index(code) {
            return i;
        }
        self.codes.push(code.to_string());
        for s in &mut self.storms {
            s.columns.push(vec![f64::NAN; self.len]);
        }
        self.codes.len() - 1
    }

    /// Inverse of the stored standardization on every transformed column.
    pub fn destandardized(&self) -> AlignedPanel {
        let mut out = self.clone();
        for (code, st) in &self.standardization {
            if let Some(ci) = out.code_index(code) {
                for s in &mut out.storms {
                    for v in &mut s.columns[ci] {
                        *v = *v * st.std + st.mean;
                    }
                }
            }
        }
        out.standardization.clear();
        out
    }

    /// Applies previously computed statistics to an unstandardized panel.
    pub fn with_standardization(&self, stats: &BTreeMap<String, ColumnStats>) -> Result<AlignedPanel> {
        if !self.standardization.is_empty() {
            return Err(Error::Validation("panel is already standardized".into()));
        }
        let mut out = self.clone();
        for (code, st) in stats {
            let ci = self
                .code_index(code)
                .ok_or_else(|| Error::Validation(format!("standardized column {code} not in panel")))?;
            for s in &mut out.storms {
                for v in &mut s.columns[ci] {
                    *v = (*v - st.mean) / st.std;
                }
            }
        }
        out.standardization = stats.clone();
        Ok(out)
    }

    /// Subset of storms, keeping codes, length and standardization.
    pub fn select_storms(&self, ids: &[String]) -> Result<AlignedPanel> {
        let idx = self.storm_indices(ids)?;
        let mut out = self.clone();
        out.storms = idx.into_iter().map(|i| self.storms[i].clone()).collect();
        Ok(out)
    }

    /// Listwise complete-case rows pooled across `storms`.
    ///
    /// Row `t` pairs each feature's value at `t - lag`; rows start at the
    /// largest lag so every lag is in range. Returns one vector per feature.
    pub fn gather(&self, features: &[Feature], storms: &[usize]) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<(usize, usize)> = features
            .iter()
            .map(|f| {
                let ci = self.code_index(&f.code).ok_or_else(|| {
                    Error::Validation(format!("predictor {} not in panel", f.code))
                })?;
                if f.lag >= self.len.max(1) {
                    return Err(Error::Validation(format!(
                        "lag {} exceeds panel length {}",
                        f.lag, self.len
                    )));
                }
                Ok((ci, f.lag))
            })
            .collect::<Result<_>>()?;
        let max_lag = idx.iter().map(|&(_, l)| l).max().unwrap_or(0);
        let mut out = vec![Vec::new(); features.len()];
        let mut row = vec![0.0; features.len()];
        for &s in storms {
            let storm = self.storms.get(s).ok_or_else(|| {
                Error::Validation(format!("storm index {s} out of range"))
            })?;
            let lo = max_lag.max(storm.offset);
            let hi = storm.offset + storm.span;
            'rows: for t in lo..hi {
                for (k, &(ci, lag)) in idx.iter().enumerate() {
                    let v = storm.columns[ci][t - lag];
                    if v.is_nan() {
                        continue 'rows;
                    }
                    row[k] = v;
                }
                for (col, &v) in out.iter_mut().zip(&row) {
                    col.push(v);
                }
            }
        }
        Ok(out)
    }

    /// Exports each storm as a series over its own span (padding removed).
    pub fn to_series(&self) -> Result<Vec<StormSeries>> {
        self.storms
            .iter()
            .map(|s| {
                let time = (0..s.span as i64).collect();
                let cols = s
                    .columns
                    .iter()
                    .map(|c| c[s.offset..s.offset + s.span].to_vec())
                    .collect();
                StormSeries::new(s.id.clone(), time, self.codes.clone(), cols)
            })
            .collect()
    }
}

/// Gaussian smoothing truncated at ±4σ, renormalised over observed
/// neighbours. Unobserved positions stay NaN.
pub fn smooth_missing_aware(values: &[f64], sigma_steps: f64) -> Vec<f64> {
    let half = (4.0 * sigma_steps).ceil() as isize;
    let weights: Vec<f64> = (-half..=half)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma_steps * sigma_steps)).exp())
        .collect();
    let n = values.len() as isize;
    (0..n)
        .map(|t| {
            if values[t as usize].is_nan() {
                return f64::NAN;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for k in -half..=half {
                let j = t + k;
                if j < 0 || j >= n {
                    continue;
                }
                let v = values[j as usize];
                if !v.is_nan() {
                    let w = weights[(k + half) as usize];
                    num += w * v;
                    den += w;
                }
            }
            num / den
        })
        .collect()
}

/// Index of the smoothed pressure minimum (earliest on ties).
pub fn mslp_anchor(mslp: &[f64], sigma_steps: f64) -> Option<usize> {
    let smoothed = smooth_missing_aware(mslp, sigma_steps);
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in smoothed.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Shifts storms so their smoothed-pressure minima share one panel position,
/// padding both sides with missing values.
pub fn align_by_mslp_minimum(storms: &[StormSeries], sigma_steps: f64) -> Result<Alignment> {
    if sigma_steps.is_nan() || sigma_steps <= 0.0 {
        return Err(Error::Validation(format!("sigma must be positive, got {sigma_steps}")));
    }
    let mut kept = Vec::new();
    let mut anchors = Vec::new();
    let mut rejected = Vec::new();
    for s in storms {
        match s.mslp().and_then(|m| mslp_anchor(m, sigma_steps)) {
            Some(a) => {
                kept.push(s.clone());
                anchors.push(a);
            }
            None => {
                log::warn!("storm {} rejected: no observed pressure", s.storm_id);
                rejected.push(s.storm_id.clone());
            }
        }
    }
    let anchor = match anchors.iter().max() {
        Some(&a) => a,
        None => {
            return Err(Error::Validation(format!(
                "no storm has observed pressure (rejected: {})",
                rejected.join(", ")
            )))
        }
    };
    let offsets: Vec<usize> = anchors.iter().map(|a| anchor - a).collect();
    Ok(Alignment {
        panel: AlignedPanel::from_offsets(&kept, &offsets, anchor)?,
        rejected,
    })
}

/// Population mean/std of the observed entries, if there are at least two.
fn column_moments(values: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let (mut n, mut sum) = (0usize, 0.0);
    let obs: Vec<f64> = values.filter(|v| !v.is_nan()).collect();
    for v in &obs {
        n += 1;
        sum += v;
    }
    if n < 2 {
        return None;
    }
    let mean = sum / n as f64;
    let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Some((mean, var.sqrt(), n))
}

/// Standardizes every predictor column (all codes except the target) with
/// statistics computed over the observed entries of the training storms.
/// Predictors without variance are dropped with a warning.
pub fn standardize(panel: &AlignedPanel, training_ids: &[String]) -> Result<AlignedPanel> {
    if !panel.standardization.is_empty() {
        return Err(Error::Validation("panel is already standardized".into()));
    }
    let train = panel.storm_indices(training_ids)?;
    if train.is_empty() {
        return Err(Error::Validation("standardization needs training storms".into()));
    }
    let mut out = panel.clone();
    let mut keep = vec![true; panel.codes.len()];
    for (ci, code) in panel.codes.iter().enumerate() {
        if Some(code.as_str()) == panel.target_code() {
            continue;
        }
        let values = train
            .iter()
            .flat_map(|&s| panel.storms[s].columns[ci].iter().copied());
        let stats = column_moments(values).filter(|&(mean, std, _)| std > 1e-12 * mean.abs().max(1.0));
        match stats {
            Some((mean, std, _)) => {
                for s in &mut out.storms {
                    for v in &mut s.columns[ci] {
                        *v = (*v - mean) / std;
                    }
                }
                out.standardization.insert(code.clone(), ColumnStats { mean, std });
            }
            None => {
                log::warn!("predictor {code} dropped: fewer than two observed training values or zero variance");
                keep[ci] = false;
                out.dropped.push(code.clone());
            }
        }
    }
    if keep.iter().any(|k| !k) {
        out.codes = panel
            .codes
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(c, _)| c.clone())
            .collect();
        for s in &mut out.storms {
            s.columns = std::mem::take(&mut s.columns)
                .into_iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(c, _)| c)
                .collect();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn storm(id: &str, pmin: &[f64]) -> StormSeries {
        let n = pmin.len();
        StormSeries::new(
            id,
            (0..n as i64).collect(),
            vec!["PMIN".into(), "X".into()],
            vec![pmin.to_vec(), (0..n).map(|i| i as f64).collect()],
        )
        .unwrap()
    }

    fn v_shape(n: usize, vertex: usize) -> Vec<f64> {
        (0..n).map(|i| 1000.0 - 40.0 + 4.0 * (i as f64 - vertex as f64).abs()).collect()
    }

    #[test]
    fn single_storm_needs_no_padding() {
        let s = storm("A", &v_shape(15, 6));
        let a = align_by_mslp_minimum(&[s], 3.0).unwrap();
        assert_eq!(a.panel.anchor_index(), 6);
        assert_eq!(a.panel.len(), 15);
        assert!(a.panel.step_mask(0).iter().all(|&m| m));
    }

    #[test]
    fn v_shape_anchor_is_vertex_for_any_sigma() {
        for sigma in [0.5, 1.0, 3.0, 7.5] {
            assert_eq!(mslp_anchor(&v_shape(61, 30), sigma), Some(30), "sigma {sigma}");
        }
    }

    #[test]
    fn two_storms_shift_to_common_anchor() {
        // Hand-computed: minima at 5 and 9, so the first storm is placed 4
        // steps to the right and the panel spans max(4 + 12, 0 + 14) = 16.
        let a = storm("A", &v_shape(12, 5));
        let b = storm("B", &v_shape(14, 9));
        let al = align_by_mslp_minimum(&[a, b], 1.0).unwrap();
        let p = &al.panel;
        assert_eq!(p.anchor_index(), 9);
        assert_eq!(p.storms()[0].offset, 4);
        assert_eq!(p.storms()[1].offset, 0);
        assert_eq!(p.len(), 16);
        let pa = p.column(0, "PMIN").unwrap();
        let pb = p.column(1, "PMIN").unwrap();
        assert_eq!(pa[9], 960.0);
        assert_eq!(pb[9], 960.0);
        assert!(pa[..4].iter().all(|v| v.is_nan()));
        assert!(pb[14..].iter().all(|v| v.is_nan()));
        assert_eq!(p.step_mask(0).iter().filter(|&&m| m).count(), 12);
    }

    #[test]
    fn tie_breaks_to_earliest() {
        assert_eq!(mslp_anchor(&[1000.0, 990.0, 990.0, 1000.0], 0.01), Some(1));
    }

    #[test]
    fn storm_without_pressure_is_rejected() {
        let a = storm("A", &v_shape(10, 3));
        let b = storm("B", &[f64::NAN; 10]);
        let al = align_by_mslp_minimum(&[a, b], 3.0).unwrap();
        assert_eq!(al.rejected, vec!["B".to_string()]);
        assert_eq!(al.panel.storms().len(), 1);
        assert!(align_by_mslp_minimum(&[storm("C", &[f64::NAN; 4])], 3.0).is_err());
    }

    #[test]
    fn smoothing_skips_gaps() {
        let v = [1.0, f64::NAN, 3.0];
        let s = smooth_missing_aware(&v, 1.0);
        assert!(s[1].is_nan());
        assert!((s[0] - s[2]).abs() > 0.0);
        assert!(s[0] > 1.0 && s[2] < 3.0);
    }

    #[test]
    fn standardize_symmetric_example() {
        let s = StormSeries::new(
            "A",
            vec![0, 1, 2],
            vec!["X".into()],
            vec![vec![1.0, 2.0, 3.0]],
        )
        .unwrap();
        let p = AlignedPanel::unaligned(&[s]).unwrap();
        let z = standardize(&p, &["A".into()]).unwrap();
        let st = z.standardization()["X"];
        assert_eq!(st.mean, 2.0);
        assert!((st.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let c = z.column(0, "X").unwrap();
        assert_eq!(c[1], 0.0);
        assert!((c[0] + c[2]).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_is_dropped() {
        let s = StormSeries::new(
            "A",
            vec![0, 1, 2],
            vec!["X".into(), "K".into()],
            vec![vec![1.0, 2.0, 4.0], vec![5.0; 3]],
        )
        .unwrap();
        let p = AlignedPanel::unaligned(&[s]).unwrap();
        let z = standardize(&p, &["A".into()]).unwrap();
        assert_eq!(z.codes(), ["X"]);
        assert_eq!(z.dropped(), ["K"]);
    }

    #[test]
    fn target_column_is_not_standardized() {
        let s = StormSeries::new(
            "A",
            (0..6).collect(),
            vec!["VMAX".into()],
            vec![vec![30.0, 35.0, 45.0, 50.0, 60.0, 60.0]],
        )
        .unwrap();
        let p = AlignedPanel::unaligned(&[s])
            .unwrap()
            .with_intensity_target(6)
            .unwrap();
        let z = standardize(&p, &["A".into()]).unwrap();
        assert_eq!(z.target_code(), Some("DELV6"));
        assert_eq!(&z.column(0, "DELV6").unwrap()[..5], &[5.0, 10.0, 5.0, 10.0, 0.0]);
        assert!(z.standardization().contains_key("VMAX"));
        assert!(!z.standardization().contains_key("DELV6"));
    }
}
