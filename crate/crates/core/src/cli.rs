//! Command implementations behind the `stormcause` binary. Each command
//! writes its outputs plus a `run_manifest.json` with SHA-256 digests.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attribution::{decompose_difference, kernel_shap, rank_mean_abs_shap};
use crate::dataset::AlignedPanel;
use crate::error::{Error, Result};
use crate::pipeline::{
    abacus_csv, abacus_from_reports, fold_reports_csv, prepare, run_discovery, run_prepared, screen_predictors,
    ships_plus_csv, shortlist_csv, summary_csv, ExperimentConfig,
};
use crate::regression::RegressionModel;
use crate::rng::rng_for;
use crate::synth::{export_panel, generate_panel, ScmSpec};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs. Paths are
/// relative so reruns in other directories compare equal.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Option<String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Collects written files and their digests.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileDigest>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileDigest {
            path: rel.to_string(),
            sha256: sha256_hex(contents),
        });
        Ok(())
    }

    /// Writes the manifest and returns every output path, manifest last.
    pub fn finish(mut self, command: &str, config: Option<&Path>, seed: u64, inputs: Vec<FileDigest>) -> Result<Vec<PathBuf>> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()),
            seed,
            inputs,
            outputs: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let mpath = self.root.join(MANIFEST_FILE);
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        let mut out: Vec<PathBuf> = self.files.iter().map(|f| self.root.join(&f.path)).collect();
        out.push(mpath);
        Ok(out)
    }
}

fn relative_name(path: &Path, base: Option<&Path>) -> String {
    base.and_then(|b| path.strip_prefix(b).ok())
        .unwrap_or_else(|| Path::new(path.file_name().unwrap_or(path.as_os_str())))
        .to_string_lossy()
        .replace('\\', "/")
}

fn digest_file(path: &Path, base: Option<&Path>) -> Result<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: relative_name(path, base),
        sha256: sha256_hex(&bytes),
    })
}

/// Digests of the config, manifest/spec and every storm file it lists.
fn input_digests(config: &Path, cfg: &ExperimentConfig) -> Result<Vec<FileDigest>> {
    let base = config.parent();
    let mut out = vec![digest_file(config, base)?];
    if let Some(spec) = &cfg.synth_spec {
        out.push(digest_file(spec, base)?);
    }
    if let Some(m) = &cfg.manifest {
        out.push(digest_file(m, base)?);
        for e in crate::dataset::load_manifest(m)? {
            out.push(digest_file(&e.path, base)?);
        }
    }
    Ok(out)
}

/// Loads a config file and applies the `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::Config(format!("config file {} not found", path.display())));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn cmd_synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    if !spec_path.exists() {
        return Err(Error::Config(format!("spec file {} not found", spec_path.display())));
    }
    let mut spec = ScmSpec::load(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (panel, truth) = generate_panel(&spec)?;
    let tmp = tempdir_in(out)?;
    let written = export_panel(&spec, &panel, &truth, &tmp)?;
    let mut dir = OutputDir::new(out)?;
    for p in &written {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        dir.write(&relative_name(p, Some(&tmp)), &bytes)?;
    }
    std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let inputs = vec![digest_file(spec_path, spec_path.parent())?];
    dir.finish("synth", Some(spec_path), spec.seed, inputs)
}

fn tempdir_in(out: &Path) -> Result<PathBuf> {
    let p = out.join(".staging");
    std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

pub fn cmd_discover(config: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(config, seed)?;
    let prep = prepare(&cfg)?;
    let runs = run_discovery(&prep, &cfg)?;
    let mut dir = OutputDir::new(out)?;
    for r in &runs {
        for s in &r.sets {
            let name = format!("sets/{}_{}_fold{}_alpha{}.txt", r.target, r.mode, r.fold, s.pc_alpha);
            dir.write(&name, s.to_text().as_bytes())?;
        }
    }
    dir.write("abacus.csv", abacus_csv(&runs, &cfg.alphas).as_bytes())?;
    dir.finish("discover", Some(config), cfg.seed, input_digests(config, &cfg)?)
}

pub fn cmd_experiment(config: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(config, seed)?;
    let prep = prepare(&cfg)?;
    let res = run_prepared(&prep, &cfg)?;
    let mut dir = OutputDir::new(out)?;
    dir.write("fold_reports.csv", fold_reports_csv(&res.reports).as_bytes())?;
    dir.write("summary.csv", summary_csv(&res.summary).as_bytes())?;
    dir.write("shortlist.csv", shortlist_csv(&res.shortlists).as_bytes())?;
    dir.write("ships_plus.csv", ships_plus_csv(&res.shortlists).as_bytes())?;
    dir.write("abacus.csv", abacus_csv(&abacus_from_reports(&res.reports), &cfg.alphas).as_bytes())?;
    if cfg.save_models {
        for r in &res.reports {
            if let Some(m) = &r.best_model {
                let name = format!("models/{}_{}_{}_fold{}.json", r.target, r.method, r.mode, r.fold);
                dir.write(&name, m.to_json().as_bytes())?;
            }
        }
    }
    dir.finish("experiment", Some(config), cfg.seed, input_digests(config, &cfg)?)
}

pub fn cmd_screen(config: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(config, seed)?;
    if cfg.screening.base.is_empty() || cfg.screening.candidates.is_empty() {
        return Err(Error::Config("screening needs `screen_base` and `screen_candidates`".into()));
    }
    let prep = prepare(&cfg)?;
    let report = screen_predictors(&prep.panel, &prep.train_ids, &cfg.screening)?;
    let mut dir = OutputDir::new(out)?;
    dir.write("screening.csv", report.to_csv().as_bytes())?;
    dir.write("screening_intervals.csv", report.intervals_csv().as_bytes())?;
    dir.finish("screen", Some(config), cfg.seed, input_digests(config, &cfg)?)
}

fn model_panel(raw: &AlignedPanel, model: &RegressionModel) -> Result<AlignedPanel> {
    let lead = model
        .target
        .strip_prefix("DELV")
        .and_then(|h| h.parse::<u32>().ok())
        .filter(|_| raw.code_index(&model.target).is_none());
    let p = match lead {
        Some(h) => raw.clone().with_intensity_target(h)?,
        None => raw.clone().with_target_column(&model.target)?,
    };
    p.with_standardization(&model.standardization)
}

/// Attributions of both models on the test rows and the decomposition of
/// `A - B`, where `B` must use every feature of `A`.
pub fn cmd_shap(config: &Path, model_a: &Path, model_b: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let cfg = load_config(config, seed)?;
    for p in [model_a, model_b] {
        if !p.exists() {
            return Err(Error::Config(format!("model file {} not found", p.display())));
        }
    }
    let a = RegressionModel::load(model_a)?;
    let b = RegressionModel::load(model_b)?;
    let missing: Vec<String> = a.features.iter().filter(|f| !b.features.contains(f)).map(|f| f.to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::FeatureMismatch(format!("model B lacks features of model A: {}", missing.join(", "))));
    }
    let added: Vec<_> = b.features.iter().filter(|f| !a.features.contains(f)).cloned().collect();
    let prep = prepare(&cfg)?;
    let pa = model_panel(&prep.panel, &a)?;
    let pb = model_panel(&prep.panel, &b)?;
    let rows = |panel: &AlignedPanel, ids: &[String]| -> Result<(Columns, Columns)> {
        let storms = panel.storm_indices(ids)?;
        let cols = panel.gather(&b.features, &storms)?;
        let pick = |m: &RegressionModel| -> Vec<Vec<f64>> {
            m.features
                .iter()
                .map(|f| cols[b.features.iter().position(|g| g == f).expect("subset")].clone())
                .collect()
        };
        Ok((pick(&a), pick(&b)))
    };
    let inst_ids = if prep.test_ids.is_empty() { prep.train_ids.clone() } else { prep.test_ids.clone() };
    let (inst_a, _) = rows(&pa, &inst_ids)?;
    let (_, inst_b) = rows(&pb, &inst_ids)?;
    let (bg_a_all, _) = rows(&pa, &prep.train_ids)?;
    let (_, bg_b_all) = rows(&pb, &prep.train_ids)?;
    let n_bg = bg_b_all.first().map_or(0, |c| c.len());
    let mut order: Vec<usize> = (0..n_bg).collect();
    order.shuffle(&mut rng_for(cfg.seed, "shap-background", 0));
    order.truncate(cfg.shap_background);
    order.sort_unstable();
    let take = |cols: &[Vec<f64>]| -> Vec<Vec<f64>> { cols.iter().map(|c| order.iter().map(|&i| c[i]).collect()).collect() };
    let (bg_a, bg_b) = (take(&bg_a_all), take(&bg_b_all));
    let sa = kernel_shap(&a, &bg_a, &inst_a, cfg.shap_coalitions, derive(cfg.seed, 0))?;
    let sb = kernel_shap(&b, &bg_b, &inst_b, cfg.shap_coalitions, derive(cfg.seed, 1))?;
    let dec = decompose_difference(&sa, &sb, &a.features, &added)?;
    let mut dir = OutputDir::new(out)?;
    dir.write("shap_a.csv", sa.to_csv().as_bytes())?;
    dir.write("shap_b.csv", sb.to_csv().as_bytes())?;
    dir.write("ranking_a.csv", rank_mean_abs_shap(&sa)?.to_csv().as_bytes())?;
    dir.write("ranking_b.csv", rank_mean_abs_shap(&sb)?.to_csv().as_bytes())?;
    dir.write("decomposition.csv", dec.to_csv().as_bytes())?;
    let mut inputs = input_digests(config, &cfg)?;
    inputs.push(digest_file(model_a, config.parent())?);
    inputs.push(digest_file(model_b, config.parent())?);
    dir.finish("shap", Some(config), cfg.seed, inputs)
}

type Columns = Vec<Vec<f64>>;

fn derive(seed: u64, i: u64) -> u64 {
    crate::rng::derive_seed(seed, "kernel-shap-model", i)
}

/// Exit code for a command result: 0 success, 2 user or configuration
/// error, 1 internal failure.
pub fn exit_code<T>(r: &Result<T>) -> i32 {
    match r {
        Ok(_) => 0,
        Err(e) if e.is_user_error() => 2,
        Err(_) => 1,
    }
}
