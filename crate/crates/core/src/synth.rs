//! Synthetic structural-causal time-series panels with known parents, and a
//! brute-force CI oracle used to check discovery.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::citest::{is_independent, partial_correlation, pooled_samples};
use crate::dataset::{AlignedPanel, StormSeries};
use crate::error::{Error, Result};
use crate::feature::Feature;
use crate::rng::rng_for;

const UNSTABLE: f64 = 1e6;
pub const MAX_ORACLE_CANDIDATES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkShape {
    Linear,
    Squared,
    /// `tanh(parent)`, saturating for large parent values.
    Tanh,
}

impl LinkShape {
    fn apply(self, v: f64) -> f64 {
        match self {
            LinkShape::Linear => v,
            LinkShape::Squared => v * v,
            LinkShape::Tanh => v.tanh(),
        }
    }
}

impl fmt::Display for LinkShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkShape::Linear => "linear",
            LinkShape::Squared => "squared",
            LinkShape::Tanh => "tanh",
        })
    }
}

impl FromStr for LinkShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LinkShape::Linear),
            "squared" => Ok(LinkShape::Squared),
            "tanh" | "tanh-saturating" => Ok(LinkShape::Tanh),
            _ => Err(Error::Config(format!("unknown link shape `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmLink {
    pub parent: String,
    pub child: String,
    pub lag: usize,
    pub coefficient: f64,
    pub shape: LinkShape,
}

impl ScmLink {
    pub fn linear(parent: &str, child: &str, lag: usize, coefficient: f64) -> Self {
        ScmLink {
            parent: parent.into(),
            child: child.into(),
            lag,
            coefficient,
            shape: LinkShape::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmSpec {
    pub variables: Vec<String>,
    pub links: Vec<ScmLink>,
    /// One entry per variable.
    pub noise_std: Vec<f64>,
    pub target: String,
    pub n_storms: usize,
    pub length: usize,
    pub seed: u64,
    /// Trailing storms marked `test` when exported.
    pub test_storms: usize,
}

impl ScmSpec {
    pub fn new(variables: &[&str], target: &str, n_storms: usize, length: usize, seed: u64) -> Self {
        ScmSpec {
            variables: variables.iter().map(|v| v.to_string()).collect(),
            links: Vec::new(),
            noise_std: vec![1.0; variables.len()],
            target: target.into(),
            n_storms,
            length,
            seed,
            test_storms: 0,
        }
    }

    pub fn link(mut self, parent: &str, child: &str, lag: usize, coefficient: f64) -> Self {
        self.links.push(ScmLink::linear(parent, child, lag, coefficient));
        self
    }

    pub fn shaped_link(mut self, parent: &str, child: &str, lag: usize, coefficient: f64, shape: LinkShape) -> Self {
        self.links.push(ScmLink {
            parent: parent.into(),
            child: child.into(),
            lag,
            coefficient,
            shape,
        });
        self
    }

    pub fn noise(mut self, var: &str, std: f64) -> Self {
        if let Some(i) = self.var_index(var) {
            self.noise_std[i] = std;
        }
        self
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn max_lag(&self) -> usize {
        self.links.iter().map(|l| l.lag).max().unwrap_or(0)
    }

    /// Ground-truth `(parent, lag)` set of the target, sorted.
    pub fn target_parents(&self) -> Vec<Feature> {
        let set: BTreeSet<Feature> = self
            .links
            .iter()
            .filter(|l| l.child == self.target)
            .map(|l| Feature::new(l.parent.clone(), l.lag))
            .collect();
        set.into_iter().collect()
    }

    /// Variable evaluation order respecting lag-0 links.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.variables.len();
        let mut indeg = vec![0usize; n];
        let mut edges = vec![Vec::new(); n];
        for l in self.links.iter().filter(|l| l.lag == 0) {
            let (p, c) = (self.var_index(&l.parent).unwrap(), self.var_index(&l.child).unwrap());
            edges[p].push(c);
            indeg[c] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        ready.reverse();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for &c in &edges[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(0, c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Validation("contemporaneous (lag 0) links form a cycle".into()));
        }
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::Validation(m));
        for (i, v) in self.variables.iter().enumerate() {
            if v.is_empty() || v.contains(',') || self.variables[..i].contains(v) {
                return invalid(format!("invalid or duplicate variable `{v}`"));
            }
        }
        if self.var_index(&self.target).is_none() {
            return invalid(format!("target {} is not a declared variable", self.target));
        }
        if self.noise_std.len() != self.variables.len()
            || self.noise_std.iter().any(|s| !s.is_finite() || *s < 0.0)
        {
            return invalid("noise_std must be finite, non-negative, one per variable".into());
        }
        for l in &self.links {
            if self.var_index(&l.parent).is_none() || self.var_index(&l.child).is_none() {
                return invalid(format!("link {} -> {} names an unknown variable", l.parent, l.child));
            }
            if !l.coefficient.is_finite() {
                return invalid(format!("link {} -> {} has non-finite coefficient", l.parent, l.child));
            }
            if l.lag == 0 && l.parent == l.child {
                return invalid(format!("self-link on {} at lag 0", l.parent));
            }
        }
        if self.n_storms == 0 || self.length == 0 {
            return invalid("n_storms and length must be positive".into());
        }
        if self.test_storms >= self.n_storms {
            return invalid("test_storms must leave at least one training storm".into());
        }
        self.topological_order().map(|_| ())
    }

    /// Parses the key-value spec format:
    ///
    /// ```text
    /// variables = X1, X2, Y
    /// target = Y
    /// n_storms = 40
    /// length = 200
    /// seed = 7
    /// noise_std = 1.0
    /// test_storms = 8
    /// noise X1 0.5
    /// link X1 X2 1 0.8
    /// link X2 Y 1 0.6 squared
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |row: usize, message: String| Error::Parse {
            context: "scm spec".into(),
            row,
            message,
        };
        let mut variables = None;
        let mut target = None;
        let (mut n_storms, mut length, mut seed, mut test_storms) = (None, None, 0u64, 0usize);
        let mut default_noise = 1.0;
        let mut noise_lines = Vec::new();
        let mut link_lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let row = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("link ") {
                link_lines.push((row, rest.to_string()));
                continue;
            }
            if let Some(rest) = line.strip_prefix("noise ") {
                noise_lines.push((row, rest.to_string()));
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(row, format!("expected key = value, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|_| bad(row, format!("invalid integer for {k}")));
            match k {
                "variables" => {
                    variables = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect::<Vec<_>>())
                }
                "target" => target = Some(v.to_string()),
                "n_storms" => n_storms = Some(num(v)? as usize),
                "length" => length = Some(num(v)? as usize),
                "seed" => seed = num(v)?,
                "test_storms" => test_storms = num(v)? as usize,
                "noise_std" => {
                    default_noise = v.parse().map_err(|_| bad(row, "invalid noise_std".into()))?
                }
                _ => return Err(bad(row, format!("unknown key `{k}`"))),
            }
        }
        let variables = variables.ok_or_else(|| bad(0, "missing `variables`".into()))?;
        let mut spec = ScmSpec {
            noise_std: vec![default_noise; variables.len()],
            variables,
            links: Vec::new(),
            target: target.ok_or_else(|| bad(0, "missing `target`".into()))?,
            n_storms: n_storms.ok_or_else(|| bad(0, "missing `n_storms`".into()))?,
            length: length.ok_or_else(|| bad(0, "missing `length`".into()))?,
            seed,
            test_storms,
        };
        for (row, rest) in noise_lines {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let (Some(var), Some(std), 2) = (parts.first(), parts.get(1), parts.len()) else {
                return Err(bad(row, "expected `noise <var> <std>`".into()));
            };
            let idx = spec
                .var_index(var)
                .ok_or_else(|| bad(row, format!("unknown variable {var}")))?;
            spec.noise_std[idx] = std.parse().map_err(|_| bad(row, "invalid std".into()))?;
        }
        for (row, rest) in link_lines {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if !(4..=5).contains(&parts.len()) {
                return Err(bad(row, "expected `link parent child lag coeff [shape]`".into()));
            }
            spec.links.push(ScmLink {
                parent: parts[0].into(),
                child: parts[1].into(),
                lag: parts[2].parse().map_err(|_| bad(row, "invalid lag".into()))?,
                coefficient: parts[3].parse().map_err(|_| bad(row, "invalid coefficient".into()))?,
                shape: match parts.get(4) {
                    Some(s) => s.parse()?,
                    None => LinkShape::Linear,
                },
            });
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

pub fn storm_id(index: usize) -> String {
    format!("SYN{index:04}")
}

/// Simulates one storm. Innovations are drawn in (time, topological order)
/// order from the storm's own derived stream.
pub fn simulate_storm(spec: &ScmSpec, order: &[usize], storm: usize) -> Result<StormSeries> {
    let mut rng = rng_for(spec.seed, "synth-storm", storm as u64);
    let burn = 10 * spec.max_lag();
    let total = burn + spec.length;
    let nv = spec.variables.len();
    let parents: Vec<Vec<(usize, &ScmLink)>> = (0..nv)
        .map(|v| {
            spec.links
                .iter()
                .filter(|l| l.child == spec.variables[v])
                .map(|l| (spec.var_index(&l.parent).unwrap(), l))
                .collect()
        })
        .collect();
    let mut values = vec![vec![0.0; total]; nv];
    for t in 0..total {
        for &v in order {
            let mut x = 0.0;
            for &(p, l) in &parents[v] {
                if t >= l.lag {
                    x += l.coefficient * l.shape.apply(values[p][t - l.lag]);
                }
            }
            let e: f64 = StandardNormal.sample(&mut rng);
            x += spec.noise_std[v] * e;
            if x.is_nan() || x.abs() > UNSTABLE {
                return Err(Error::Validation(format!(
                    "unstable dynamics: {} exceeded {UNSTABLE:e} at step {t} of storm {storm}; rescale coefficients",
                    spec.variables[v]
                )));
            }
            values[v][t] = x;
        }
    }
    let columns = values.into_iter().map(|c| c[burn..].to_vec()).collect();
    StormSeries::new(
        storm_id(storm),
        (0..spec.length as i64).collect(),
        spec.variables.clone(),
        columns,
    )
}

/// Simulates every storm and returns the panel (target column marked) plus
/// the target's true parents.
pub fn generate_panel(spec: &ScmSpec) -> Result<(AlignedPanel, Vec<Feature>)> {
    spec.validate()?;
    let order = spec.topological_order()?;
    let storms: Vec<StormSeries> = (0..spec.n_storms)
        .into_par_iter()
        .map(|s| simulate_storm(spec, &order, s))
        .collect::<Result<_>>()?;
    let panel = AlignedPanel::unaligned(&storms)?.with_target_column(&spec.target)?;
    Ok((panel, spec.target_parents()))
}

/// Storm ids split as (train, test): the last `test_storms` are test.
pub fn split_ids(spec: &ScmSpec) -> (Vec<String>, Vec<String>) {
    let ids: Vec<String> = (0..spec.n_storms).map(storm_id).collect();
    let cut = spec.n_storms - spec.test_storms;
    (ids[..cut].to_vec(), ids[cut..].to_vec())
}

/// Writes one CSV per storm, `manifest.txt` and `truth.csv` into `dir`.
pub fn export_panel(spec: &ScmSpec, panel: &AlignedPanel, truth: &[Feature], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (_, test) = split_ids(spec);
    let mut written = Vec::new();
    let mut manifest = String::from("storm_id,path,role\n");
    for s in panel.to_series()? {
        let name = format!("{}.csv", s.storm_id);
        let path = dir.join(&name);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        let role = if test.contains(&s.storm_id) { "test" } else { "train" };
        manifest.push_str(&format!("{},{},{}\n", s.storm_id, name, role));
        written.push(path);
    }
    let mpath = dir.join("manifest.txt");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    written.push(mpath);
    let mut truth_text = format!("# target={}\npredictor,lag\n", spec.target);
    for f in truth {
        truth_text.push_str(&format!("{},{}\n", f.code, f.lag));
    }
    let tpath = dir.join("truth.csv");
    std::fs::write(&tpath, truth_text).map_err(|e| Error::io(&tpath, e))?;
    written.push(tpath);
    Ok(written)
}

/// Reference PC semantics: a candidate survives iff no subset of the other
/// candidates renders it conditionally independent of the target.
pub fn exhaustive_ci_oracle(
    panel: &AlignedPanel,
    target: &str,
    candidates: &[Feature],
    pc_alpha: f64,
    train_ids: &[String],
) -> Result<Vec<Feature>> {
    if candidates.len() > MAX_ORACLE_CANDIDATES {
        return Err(Error::Validation(format!(
            "exhaustive oracle refuses {} candidates (max {MAX_ORACLE_CANDIDATES})",
            candidates.len()
        )));
    }
    let storms = panel.storm_indices(train_ids)?;
    let mut kept = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let others: Vec<&Feature> = candidates.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, f)| f).collect();
        let mut separated = false;
        for mask in 0u32..(1 << others.len()) {
            let cond: Vec<Feature> = others
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .map(|(_, f)| (*f).clone())
                .collect();
            let samples = pooled_samples(panel, c, target, &cond, &storms)?;
            if is_independent(&partial_correlation(&samples), pc_alpha) {
                separated = true;
                break;
            }
        }
        if !separated {
            kept.push(c.clone());
        }
    }
    kept.sort();
    Ok(kept)
}
