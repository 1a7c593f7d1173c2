//! End-to-end runs: train, fit, score, evaluate, PCA export, transfer sweep
//! and the one-command synthetic reproduction.

use std::fs;
use std::path::{Path, PathBuf};

use crate::cae::{build_model, finetune_subset, train, CaeConfig, CaeModel, TrainConfig, TrainHistory};
use crate::config::{format_list, parse_list, KeyValues};
use crate::detect::{fit_ensemble_with, EnsembleConfig, EnsembleDetector, GmmOptions, StatsMode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, pca_csv, pca_fit, pca_project, EvalReport};
use crate::signal::{save_dataset, split_dataset, Dataset, Format, SplitSpec};
use crate::synth::{make_benchmark_with, BenchmarkSpec};

/// Every tunable of a run. Rendered as flat `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub split: [f64; 3],
    pub ks: Vec<usize>,
    pub reg_eps: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub stats: StatsMode,
    pub standardize: bool,
    pub eval_seeds: Vec<u64>,
    pub fractions: Vec<f64>,
    pub sizes: [usize; 3],
    pub csv_sample_rate: f32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            channels: vec![1, 32, 64],
            kernel: 7,
            stride: 4,
            epochs: 100,
            batch_size: 64,
            lr: 1e-4,
            weight_decay: 0.01,
            split: [0.8, 0.1, 0.1],
            ks: (1..=10).collect(),
            reg_eps: 1e-6,
            max_iter: 200,
            tol: 1e-6,
            stats: StatsMode::Hard,
            standardize: false,
            eval_seeds: (1..=5).collect(),
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            sizes: [2000, 400, 400],
            csv_sample_rate: 256.0,
        }
    }
}

fn stats_name(m: StatsMode) -> &'static str {
    match m {
        StatsMode::Hard => "hard",
        StatsMode::Gmm => "gmm",
    }
}

impl RunConfig {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed);
        kv.set("channels", format_list(&self.channels));
        kv.set("kernel", self.kernel);
        kv.set("stride", self.stride);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("lr", self.lr);
        kv.set("weight_decay", self.weight_decay);
        kv.set("split", format_list(&self.split));
        kv.set("ks", format_list(&self.ks));
        kv.set("reg_eps", self.reg_eps);
        kv.set("max_iter", self.max_iter);
        kv.set("tol", self.tol);
        kv.set("stats", stats_name(self.stats));
        kv.set("standardize", self.standardize);
        kv.set("seeds", format_list(&self.eval_seeds));
        kv.set("fractions", format_list(&self.fractions));
        kv.set("sizes", format_list(&self.sizes));
        kv.set("csv_sample_rate", self.csv_sample_rate);
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_key_values().to_text()
    }

    /// Defaults overridden by every key present in `kv`. Unknown keys are errors.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut c = RunConfig::default();
        for (k, v) in kv.iter() {
            match k {
                "seed" => c.seed = one(k, v)?,
                "channels" => c.channels = parse_list(v)?,
                "kernel" => c.kernel = one(k, v)?,
                "stride" => c.stride = one(k, v)?,
                "epochs" => c.epochs = one(k, v)?,
                "batch_size" => c.batch_size = one(k, v)?,
                "lr" => c.lr = one(k, v)?,
                "weight_decay" => c.weight_decay = one(k, v)?,
                "split" => {
                    c.split = parse_list::<f64>(v)?
                        .try_into()
                        .map_err(|_| Error::Config(format!("split needs 3 fractions, got {v:?}")))?
                }
                "ks" => c.ks = parse_list(v)?,
                "reg_eps" => c.reg_eps = one(k, v)?,
                "max_iter" => c.max_iter = one(k, v)?,
                "tol" => c.tol = one(k, v)?,
                "stats" => c.stats = v.parse()?,
                "standardize" => c.standardize = one(k, v)?,
                "seeds" => c.eval_seeds = parse_list(v)?,
                "fractions" => c.fractions = parse_list(v)?,
                "sizes" => {
                    c.sizes = parse_list::<usize>(v)?
                        .try_into()
                        .map_err(|_| Error::Config(format!("sizes needs 3 counts, got {v:?}")))?
                }
                "csv_sample_rate" => c.csv_sample_rate = one(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be a nonempty list of positive counts".into()));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::Config("fractions must lie in (0, 1]".into()));
        }
        if self.channels.len() < 2 || self.channels[0] != 1 {
            return Err(Error::Config("channels must start at 1 and name at least one encoder layer".into()));
        }
        self.split_spec().validate()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { train_frac: self.split[0], val_frac: self.split[1], test_frac: self.split[2], seed: self.seed }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch_size, lr: self.lr, weight_decay: self.weight_decay, seed: self.seed }
    }

    pub fn cae_config(&self, window_len: usize) -> CaeConfig {
        let mut c = CaeConfig::mirrored(window_len, &self.channels, self.kernel, self.stride);
        c.train = self.train_config();
        c
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            ks: self.ks.clone(),
            gmm: GmmOptions { max_iter: self.max_iter, tol: self.tol, reg_eps: self.reg_eps },
            mode: self.stats,
            standardize: self.standardize,
        }
    }

    pub fn benchmark_spec(&self) -> BenchmarkSpec {
        BenchmarkSpec::default().with_sizes(self.sizes)
    }

    fn header(&self) -> Vec<String> {
        self.to_key_values().iter().map(|(k, v)| format!("{k}={v}")).collect()
    }
}

fn one<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("key {k:?}: cannot parse {v:?}")))
}

/// Normalized Level 1 train / val / test parts.
pub struct Level1Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn split_level1(level1: &Dataset, cfg: &RunConfig) -> Result<Level1Split> {
    let (train, val, test) = split_dataset(&level1.normalized(), &cfg.split_spec())?;
    let train = train.ok_or_else(|| Error::InvalidArgument("train split is empty".into()))?;
    // an empty validation part falls back to selecting on the training set
    let val = val.unwrap_or_else(|| train.clone());
    let test = test.ok_or_else(|| Error::InvalidArgument("test split is empty".into()))?;
    Ok(Level1Split { train, val, test })
}

pub fn train_stage(cfg: &RunConfig, split: &Level1Split) -> Result<(CaeModel, TrainHistory)> {
    let model = build_model(&cfg.cae_config(split.train.window_len()))?;
    train(&model, &split.train, &split.val, &cfg.train_config())
}

pub fn fit_stage(cfg: &RunConfig, model: &CaeModel, train_set: &Dataset) -> Result<EnsembleDetector> {
    let features = model.encode_dataset(train_set)?;
    fit_ensemble_with(&features, &cfg.ensemble_config(), cfg.seed)
}

/// Which score to compute per window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mahalanobis,
    Recon,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis" => Ok(Method::Mahalanobis),
            "recon" => Ok(Method::Recon),
            _ => Err(Error::InvalidArgument(format!("unknown method {s:?}, expected mahalanobis or recon"))),
        }
    }
}

fn check_dims(model: &CaeModel, det: &EnsembleDetector) -> Result<()> {
    if model.latent_dim() != det.dim() {
        return Err(Error::Shape(format!("model latent dimension {} but detector dimension {}", model.latent_dim(), det.dim())));
    }
    Ok(())
}

/// Scores (higher is cleaner) of every window of a normalized dataset.
pub fn score_dataset(model: &CaeModel, det: Option<&EnsembleDetector>, data: &Dataset, method: Method) -> Result<Vec<f64>> {
    match method {
        Method::Recon => model.recon_scores(data),
        Method::Mahalanobis => {
            let det = det.ok_or_else(|| Error::InvalidArgument("mahalanobis scoring needs a detector".into()))?;
            check_dims(model, det)?;
            det.ensemble_scores(&model.encode_dataset(data)?)
        }
    }
}

/// `index,label,score,noisiness` rows.
pub fn scores_csv(data: &Dataset, scores: &[f64]) -> String {
    let mut s = String::from("index,label,score,noisiness\n");
    for (i, (w, sc)) in data.windows().iter().zip(scores).enumerate() {
        s.push_str(&format!("{i},{},{sc},{}\n", w.label.code(), -sc));
    }
    s
}

/// Recon, each member and the ensemble against Level 2 and Level 3.
pub fn detection_report(
    cfg: &RunConfig,
    model: &CaeModel,
    det: &EnsembleDetector,
    clean: &Dataset,
    noisy: &[(&str, &Dataset)],
) -> Result<EvalReport> {
    check_dims(model, det)?;
    let clean_f = model.encode_dataset(clean)?;
    let clean_recon = model.recon_scores(clean)?;
    let mut report = EvalReport::new("method");
    report.header = cfg.header();
    let noisy_parts: Vec<_> = noisy
        .iter()
        .map(|(name, d)| Ok((*name, model.encode_dataset(d)?, model.recon_scores(d)?)))
        .collect::<Result<_>>()?;
    for (level, _, recon) in &noisy_parts {
        report.push("recon", *level, evaluate(&clean_recon, recon, &cfg.eval_seeds)?);
    }
    for m in &det.members {
        let c = m.noise_scores(&clean_f)?;
        for (level, f, _) in &noisy_parts {
            report.push(format!("m={}", m.k), *level, evaluate(&c, &m.noise_scores(f)?, &cfg.eval_seeds)?);
        }
    }
    let c = det.ensemble_scores(&clean_f)?;
    for (level, f, _) in &noisy_parts {
        report.push("ensemble", *level, evaluate(&c, &det.ensemble_scores(f)?, &cfg.eval_seeds)?);
    }
    Ok(report)
}

/// PCA fitted on Level 1 features; every input projected into that basis.
pub struct PcaExport {
    pub points: Vec<([f64; 2], String)>,
    /// Mean 2-D distance from the Level 1 centroid, per input in order.
    pub mean_distance: Vec<(String, f64)>,
    /// Distance of each input's own 2-D centroid from the Level 1 centroid.
    pub centroid_shift: Vec<(String, f64)>,
}

impl PcaExport {
    pub fn csv(&self) -> String {
        pca_csv(&self.points)
    }

    pub fn distance(&self, level: &str) -> Option<f64> {
        self.mean_distance.iter().find(|(l, _)| l == level).map(|(_, d)| *d)
    }

    pub fn shift(&self, level: &str) -> Option<f64> {
        self.centroid_shift.iter().find(|(l, _)| l == level).map(|(_, d)| *d)
    }
}

/// `inputs[0]` must be the Level 1 set the basis is fitted on.
pub fn pca_export(model: &CaeModel, inputs: &[(&str, &Dataset)]) -> Result<PcaExport> {
    let (_, base) = inputs.first().ok_or(Error::EmptyDataset)?;
    let base_f = model.encode_dataset(base)?;
    let pca = pca_fit(&base_f)?;
    let mut out = PcaExport { points: Vec::new(), mean_distance: Vec::new(), centroid_shift: Vec::new() };
    for (i, (level, d)) in inputs.iter().enumerate() {
        let f = if i == 0 { base_f.clone() } else { model.encode_dataset(d)? };
        let proj = pca_project(&pca, &f)?;
        // the Level 1 projection is centered, so its centroid is the origin
        let md = proj.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / proj.len() as f64;
        let n = proj.len() as f64;
        let c = [proj.iter().map(|p| p[0]).sum::<f64>() / n, proj.iter().map(|p| p[1]).sum::<f64>() / n];
        out.mean_distance.push((level.to_string(), md));
        out.centroid_shift.push((level.to_string(), c[0].hypot(c[1])));
        out.points.extend(proj.into_iter().map(|p| (p, level.to_string())));
    }
    Ok(out)
}

/// Pass/fail of one fixture threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn auroc_of(report: &EvalReport, method: &str, level: &str) -> Result<f64> {
    report
        .get(method, level)
        .map(|c| c.auroc.mean)
        .ok_or_else(|| Error::Acceptance(format!("report has no {method} / {level} cell")))
}

pub const LEVEL2: &str = "Level 2";
pub const LEVEL3: &str = "Level 3";

/// Files and verdicts of a synthetic reproduction.
pub struct ReproOutcome {
    pub report: EvalReport,
    pub history: TrainHistory,
    pub pca: PcaExport,
    /// AUROC thresholds; these decide the exit status of the CLI command.
    pub checks: Vec<Check>,
    pub pca_check: Check,
    pub files: Vec<PathBuf>,
}

impl ReproOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// AUROC thresholds of the synthetic fixture.
pub fn repro_checks(report: &EvalReport) -> Result<Vec<Check>> {
    let e2 = auroc_of(report, "ensemble", LEVEL2)?;
    let e3 = auroc_of(report, "ensemble", LEVEL3)?;
    let r2 = auroc_of(report, "recon", LEVEL2)?;
    Ok(vec![
        Check::new("ensemble AUROC Level 3 >= Level 2", e3 >= e2, format!("{e3:.4} vs {e2:.4}")),
        Check::new("ensemble AUROC Level 3 >= 0.90", e3 >= 0.90, format!("{e3:.4}")),
        Check::new("ensemble AUROC Level 2 >= 0.70", e2 >= 0.70, format!("{e2:.4}")),
        Check::new("ensemble AUROC Level 2 >= recon - 0.02", e2 >= r2 - 0.02, format!("{e2:.4} vs recon {r2:.4}")),
    ])
}

/// Mean 2-D distance from the Level 1 centroid, Level 3 against Level 2.
pub fn pca_check(pca: &PcaExport) -> Check {
    let d2 = pca.distance(LEVEL2).unwrap_or(f64::NAN);
    let d3 = pca.distance(LEVEL3).unwrap_or(f64::NAN);
    let s2 = pca.shift(LEVEL2).unwrap_or(f64::NAN);
    let s3 = pca.shift(LEVEL3).unwrap_or(f64::NAN);
    Check::new(
        "PCA mean distance from Level 1 centroid, Level 3 > Level 2",
        d3 > d2,
        format!("{d3:.4} vs {d2:.4} (centroid shift {s3:.4} vs {s2:.4})"),
    )
}

/// Generate, train, fit, evaluate and export into `out`.
pub fn repro_synthetic(cfg: &RunConfig, out: &Path) -> Result<ReproOutcome> {
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut emit = |name: &str, contents: &[u8]| -> Result<()> {
        let p = out.join(name);
        write(&p, contents)?;
        files.push(p);
        Ok(())
    };
    let (l1, l2, l3) = make_benchmark_with(&cfg.benchmark_spec(), cfg.seed)?;
    for (name, d) in [("level1.ecgw", &l1), ("level2.ecgw", &l2), ("level3.ecgw", &l3)] {
        emit(name, &crate::signal::encode_binary(d))?;
    }
    log::info!("generated {} / {} / {} windows", l1.len(), l2.len(), l3.len());
    let split = split_level1(&l1, cfg)?;
    let (model, history) = train_stage(cfg, &split)?;
    emit("cae.ckpt", &model.checkpoint_bytes())?;
    emit("history.csv", history.to_csv().as_bytes())?;
    log::info!("trained {} epochs", history.epochs());
    let det = fit_stage(cfg, &model, &split.train)?;
    emit("detector.det", &det.to_bytes())?;
    let (n2, n3) = (l2.normalized(), l3.normalized());
    let report = detection_report(cfg, &model, &det, &split.test, &[(LEVEL2, &n2), (LEVEL3, &n3)])?;
    emit("report.csv", report.to_csv().as_bytes())?;
    emit("report.txt", report.to_table().as_bytes())?;
    let n1 = l1.normalized();
    let pca = pca_export(&model, &[("Level 1", &n1), (LEVEL2, &n2), (LEVEL3, &n3)])?;
    emit("pca.csv", pca.csv().as_bytes())?;
    let checks = repro_checks(&report)?;
    let pca_check = pca_check(&pca);
    let lines: String = checks.iter().chain([&pca_check]).map(|c| c.line() + "\n").collect();
    emit("checks.txt", lines.as_bytes())?;
    Ok(ReproOutcome { report, history, pca, checks, pca_check, files })
}

/// Finetune a pretrained model on fractions of a new Level 1 set, refit the
/// detector on each finetune subset, and evaluate on the new noisy sets.
pub struct SweepOutcome {
    pub report: EvalReport,
    pub models: Vec<(f64, CaeModel)>,
}

pub fn fraction_label(f: f64) -> String {
    format!("{}%", (f * 100.0).round())
}

pub fn transfer_sweep(cfg: &RunConfig, pretrained: &CaeModel, new_level1: &Dataset, noisy: &[(&str, &Dataset)]) -> Result<SweepOutcome> {
    let split = split_level1(new_level1, cfg)?;
    let mut report = EvalReport::new("fraction");
    report.header = cfg.header();
    let mut models = Vec::new();
    let noisy: Vec<(&str, Dataset)> = noisy.iter().map(|(n, d)| (*n, d.normalized())).collect();
    for &f in &cfg.fractions {
        let subset = finetune_subset(&split.train, f, cfg.seed)?;
        let (model, _) = train(pretrained, &subset, &subset, &cfg.train_config())?;
        let det = fit_stage(cfg, &model, &subset)?;
        let clean = det.ensemble_scores(&model.encode_dataset(&split.test)?)?;
        for (level, d) in &noisy {
            let s = det.ensemble_scores(&model.encode_dataset(d)?)?;
            report.push(fraction_label(f), *level, evaluate(&clean, &s, &cfg.eval_seeds)?);
        }
        log::info!("finetuned on {} of {} windows", subset.len(), split.train.len());
        models.push((f, model));
    }
    Ok(SweepOutcome { report, models })
}

/// Mean AUROC over fractions >= 0.4 against the 0.2 value, per level.
pub fn sweep_checks(cfg: &RunConfig, report: &EvalReport) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for level in [LEVEL2, LEVEL3] {
        let at = |f: f64| auroc_of(report, &fraction_label(f), level);
        let base = at(0.2)?;
        let rest: Vec<f64> = cfg.fractions.iter().filter(|&&f| f >= 0.4 - 1e-12).map(|&f| at(f)).collect::<Result<_>>()?;
        let mean = rest.iter().sum::<f64>() / rest.len().max(1) as f64;
        checks.push(Check::new(
            &format!("{level}: mean AUROC over fractions >= 40% >= AUROC at 20% - 0.02"),
            !rest.is_empty() && mean >= base - 0.02,
            format!("{mean:.4} vs {base:.4}"),
        ));
    }
    let cells = cfg.fractions.len() * 2 * 2;
    let present = report.rows.len() * 2;
    checks.push(Check::new("sweep report cells", present == cells && cells == 20, format!("{present} of {cells}")));
    Ok(checks)
}

/// Two corpora from different populations: pretrain on `seed_a`, finetune on `seed_b`.
pub fn transfer_synthetic(cfg: &RunConfig, seed_a: u64, seed_b: u64, out: &Path) -> Result<(SweepOutcome, Vec<Check>)> {
    fs::create_dir_all(out)?;
    let (a1, _, _) = make_benchmark_with(&cfg.benchmark_spec(), seed_a)?;
    let shifted = BenchmarkSpec { sizes: cfg.sizes, ..BenchmarkSpec::shifted() };
    let (b1, b2, b3) = make_benchmark_with(&shifted, seed_b)?;
    let pre_cfg = RunConfig { seed: seed_a, ..cfg.clone() };
    let (pretrained, _) = train_stage(&pre_cfg, &split_level1(&a1, &pre_cfg)?)?;
    write(&out.join("pretrained.ckpt"), pretrained.checkpoint_bytes())?;
    let sweep_cfg = RunConfig { seed: seed_b, ..cfg.clone() };
    let outcome = transfer_sweep(&sweep_cfg, &pretrained, &b1, &[(LEVEL2, &b2), (LEVEL3, &b3)])?;
    for (f, m) in &outcome.models {
        write(&out.join(format!("finetuned_{}.ckpt", (f * 100.0).round())), m.checkpoint_bytes())?;
    }
    write(&out.join("sweep.csv"), outcome.report.to_csv())?;
    write(&out.join("sweep.txt"), outcome.report.to_table())?;
    let checks = sweep_checks(&sweep_cfg, &outcome.report)?;
    Ok((outcome, checks))
}

/// Write a dataset in the format implied by its extension.
pub fn save_any(dataset: &Dataset, path: &Path, csv_rate: f32) -> Result<()> {
    save_dataset(dataset, path, Format::from_path(path, csv_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_benchmark_with;

    fn small() -> RunConfig {
        RunConfig {
            epochs: 3,
            batch_size: 16,
            lr: 1e-3,
            ks: vec![1, 2],
            eval_seeds: vec![1, 2],
            sizes: [80, 30, 30],
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            ..RunConfig::default()
        }
    }

    #[test]
    fn config_text_round_trip() {
        let c = small();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::from_text("").unwrap(), RunConfig::default());
        assert!(RunConfig::from_text("bogus=1").is_err());
        assert!(RunConfig::from_text("ks=").is_err());
        assert!(RunConfig::from_text("split=0.5,0.5").is_err());
        assert!(RunConfig::from_text("epochs=x").is_err());
        let d = RunConfig::default();
        assert_eq!(d.ks.len(), 10);
        assert_eq!(d.eval_seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(d.fractions, vec![0.2, 0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn small_repro_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let out = repro_synthetic(&cfg, dir.path()).unwrap();
        for f in ["level1.ecgw", "cae.ckpt", "history.csv", "detector.det", "report.csv", "report.txt", "pca.csv", "checks.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        // recon + 2 members + ensemble, two levels each
        assert_eq!(out.report.rows.len(), 8);
        assert_eq!(out.history.epochs(), 3);
        assert_eq!(out.pca.points.len(), 80 + 30 + 30);
        let l1: Vec<&([f64; 2], String)> = out.pca.points.iter().filter(|p| p.1 == "Level 1").collect();
        for k in 0..2 {
            assert!((l1.iter().map(|p| p.0[k]).sum::<f64>() / l1.len() as f64).abs() < 1e-6);
        }
        assert_eq!(out.checks.len(), 4);
        assert!(out.pca.shift("Level 1").unwrap() < 1e-9);
    }

    #[test]
    fn scoring_paths() {
        let cfg = small();
        let (l1, l2, _) = make_benchmark_with(&cfg.benchmark_spec(), 1).unwrap();
        let split = split_level1(&l1, &cfg).unwrap();
        let (model, _) = train_stage(&cfg, &split).unwrap();
        let det = fit_stage(&cfg, &model, &split.train).unwrap();
        let n2 = l2.normalized();
        let s = score_dataset(&model, Some(&det), &n2, Method::Mahalanobis).unwrap();
        assert_eq!(s.len(), n2.len());
        assert!(s.iter().all(|&v| v <= 0.0));
        let r = score_dataset(&model, None, &n2, Method::Recon).unwrap();
        assert_eq!(r.len(), n2.len());
        assert!(score_dataset(&model, None, &n2, Method::Mahalanobis).is_err());
        let csv = scores_csv(&n2, &s);
        assert_eq!(csv.lines().count(), n2.len() + 1);
        assert!(csv.starts_with("index,label,score,noisiness\n0,2,"));
        assert_eq!("recon".parse::<Method>().unwrap(), Method::Recon);
    }

    #[test]
    fn sweep_has_all_cells() {
        let cfg = small();
        let (a1, _, _) = make_benchmark_with(&cfg.benchmark_spec(), 1).unwrap();
        let (model, _) = train_stage(&cfg, &split_level1(&a1, &cfg).unwrap()).unwrap();
        let shifted = BenchmarkSpec { sizes: cfg.sizes, ..BenchmarkSpec::shifted() };
        let (b1, b2, b3) = make_benchmark_with(&shifted, 2).unwrap();
        let out = transfer_sweep(&cfg, &model, &b1, &[(LEVEL2, &b2), (LEVEL3, &b3)]).unwrap();
        assert_eq!(out.report.rows.len(), 10);
        assert_eq!(out.models.len(), 5);
        assert!(out.report.get("100%", LEVEL3).is_some());
        let checks = sweep_checks(&cfg, &out.report).unwrap();
        assert!(checks.last().unwrap().passed);
    }
}
