use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgnd_core::cae::CaeModel;
use ecgnd_core::config::KeyValues;
use ecgnd_core::detect::EnsembleDetector;
use ecgnd_core::pipeline::{
    self, detection_report, fit_stage, pca_export, repro_synthetic, score_dataset, scores_csv, split_level1, sweep_checks,
    transfer_sweep, Method, RunConfig, LEVEL2, LEVEL3,
};
use ecgnd_core::signal::{load_dataset, save_dataset, Dataset, Format, Label};
use ecgnd_core::synth::make_benchmark_with;
use ecgnd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ecgnd", version, about = "Label-free noisy ECG window detection")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each overrides the same key of `--config`.
#[derive(Args, Debug)]
struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated channel widths, starting at 1.
    #[arg(long, global = true)]
    channels: Option<String>,
    #[arg(long, global = true)]
    kernel: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    /// Train, validation and test fractions, e.g. 0.8,0.1,0.1.
    #[arg(long, global = true)]
    split: Option<String>,
    /// Cluster counts of the ensemble, e.g. 1,2,3.
    #[arg(long, global = true)]
    ks: Option<String>,
    #[arg(long, global = true)]
    reg_eps: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Cluster statistics: hard or gmm.
    #[arg(long, global = true)]
    stats: Option<String>,
    #[arg(long, global = true)]
    standardize: Option<bool>,
    /// Evaluation seeds, e.g. 1,2,3,4,5.
    #[arg(long, global = true)]
    seeds: Option<String>,
    /// Finetune fractions, e.g. 0.2,0.4,0.6,0.8,1.0.
    #[arg(long, global = true)]
    fractions: Option<String>,
    /// Window counts of the generated Level 1, 2 and 3 corpora.
    #[arg(long, global = true)]
    sizes: Option<String>,
    /// Sample rate assigned to CSV inputs.
    #[arg(long, global = true)]
    csv_sample_rate: Option<f32>,
}

impl Common {
    fn overrides(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        macro_rules! put {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    kv.set(stringify!($field), v);
                })*
            };
        }
        put!(seed, channels, kernel, stride, epochs, batch_size, lr, weight_decay, split, ks, reg_eps, max_iter, tol, stats, standardize, seeds, fractions, sizes, csv_sample_rate);
        kv
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::parse(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
            None => KeyValues::new(),
        };
        kv.merge(&self.overrides());
        RunConfig::from_key_values(&kv)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic level1/2/3.ecgw corpora.
    Gen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder on the Level 1 training split.
    Train {
        /// Level 1 dataset (.ecgw or .csv).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the detector ensemble on Level 1 training features.
    Fit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every window of a dataset.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Required for the mahalanobis method.
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// mahalanobis or recon.
        #[arg(long, default_value = "mahalanobis")]
        method: String,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate recon, each member and the ensemble on Level 2 and Level 3.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        detector: PathBuf,
        /// Level 1 corpus; its test split is the clean side.
        #[arg(long)]
        level1: PathBuf,
        #[arg(long)]
        level2: PathBuf,
        #[arg(long)]
        level3: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune on fractions of a new Level 1 corpus and evaluate each.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// New Level 1 corpus.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        level2: PathBuf,
        #[arg(long)]
        level3: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project latent features onto the top two Level 1 principal components.
    Pca {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Datasets to project; the first one is the Level 1 basis.
        #[arg(long = "data", required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train, fit, evaluate and check the synthetic thresholds.
    ReproSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::InvalidArgument(format!("input {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn load(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    load_dataset(path, Format::from_path(path, cfg.csv_sample_rate))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(dir)
}

fn load_detector(path: &Path, model: &CaeModel) -> Result<EnsembleDetector> {
    let det = EnsembleDetector::load(path)?;
    if det.dim() != model.latent_dim() {
        return Err(Error::Shape(format!("detector dimension {} but model latent dimension {}", det.dim(), model.latent_dim())));
    }
    Ok(det)
}

fn level_of(ds: &Dataset, path: &Path) -> String {
    match ds.windows()[0].label {
        Label::Unknown => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        l => l.to_string(),
    }
}

fn run(common: &Common, command: Command) -> Result<()> {
    let cfg = common.run_config()?;
    match command {
        Command::Gen { out } => {
            let dir = out_dir(&out)?;
            let (l1, l2, l3) = make_benchmark_with(&cfg.benchmark_spec(), cfg.seed)?;
            for (name, d) in [("level1.ecgw", l1), ("level2.ecgw", l2), ("level3.ecgw", l3)] {
                save_dataset(&d, dir.join(name), Format::Binary)?;
            }
        }
        Command::Train { data, out } => {
            require_inputs(&[&data])?;
            let split = split_level1(&load(&data, &cfg)?, &cfg)?;
            let dir = out_dir(&out)?;
            let (model, history) = pipeline::train_stage(&cfg, &split)?;
            model.save_checkpoint(dir.join("cae.ckpt"))?;
            write(&dir.join("history.csv"), history.to_csv())?;
        }
        Command::Fit { checkpoint, data, out } => {
            require_inputs(&[&checkpoint, &data])?;
            let model = CaeModel::load_checkpoint(&checkpoint)?;
            let split = split_level1(&load(&data, &cfg)?, &cfg)?;
            let det = fit_stage(&cfg, &model, &split.train)?;
            det.save(out_dir(&out)?.join("detector.det"))?;
        }
        Command::Score { checkpoint, detector, data, method, out } => {
            let method: Method = method.parse()?;
            let mut inputs = vec![checkpoint.as_path(), data.as_path()];
            inputs.extend(detector.as_deref());
            require_inputs(&inputs)?;
            let model = CaeModel::load_checkpoint(&checkpoint)?;
            let det = match (&detector, method) {
                (Some(p), Method::Mahalanobis) => Some(load_detector(p, &model)?),
                _ => None,
            };
            let ds = load(&data, &cfg)?.normalized();
            let csv = scores_csv(&ds, &score_dataset(&model, det.as_ref(), &ds, method)?);
            match out {
                Some(p) => write(&p, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Eval { checkpoint, detector, level1, level2, level3, out } => {
            require_inputs(&[&checkpoint, &detector, &level1, &level2, &level3])?;
            let model = CaeModel::load_checkpoint(&checkpoint)?;
            let det = load_detector(&detector, &model)?;
            let split = split_level1(&load(&level1, &cfg)?, &cfg)?;
            let (n2, n3) = (load(&level2, &cfg)?.normalized(), load(&level3, &cfg)?.normalized());
            let report = detection_report(&cfg, &model, &det, &split.test, &[(LEVEL2, &n2), (LEVEL3, &n3)])?;
            let dir = out_dir(&out)?;
            write(&dir.join("report.csv"), report.to_csv())?;
            write(&dir.join("report.txt"), report.to_table())?;
            print!("{}", report.to_table());
        }
        Command::Finetune { checkpoint, data, level2, level3, out } => {
            require_inputs(&[&checkpoint, &data, &level2, &level3])?;
            let model = CaeModel::load_checkpoint(&checkpoint)?;
            let (b1, b2, b3) = (load(&data, &cfg)?, load(&level2, &cfg)?, load(&level3, &cfg)?);
            let dir = out_dir(&out)?;
            let outcome = transfer_sweep(&cfg, &model, &b1, &[(LEVEL2, &b2), (LEVEL3, &b3)])?;
            for (f, m) in &outcome.models {
                m.save_checkpoint(dir.join(format!("finetuned_{}.ckpt", (f * 100.0).round())))?;
            }
            write(&dir.join("sweep.csv"), outcome.report.to_csv())?;
            write(&dir.join("sweep.txt"), outcome.report.to_table())?;
            print!("{}", outcome.report.to_table());
            if cfg.fractions.iter().any(|&f| (f - 0.2).abs() < 1e-12) {
                for c in sweep_checks(&cfg, &outcome.report)? {
                    println!("{}", c.line());
                }
            }
        }
        Command::Pca { checkpoint, data, out } => {
            let mut inputs = vec![checkpoint.as_path()];
            inputs.extend(data.iter().map(PathBuf::as_path));
            require_inputs(&inputs)?;
            let model = CaeModel::load_checkpoint(&checkpoint)?;
            let sets: Vec<(String, Dataset)> =
                data.iter().map(|p| Ok((String::new(), load(p, &cfg)?))).collect::<Result<_>>()?;
            let sets: Vec<(String, Dataset)> =
                sets.into_iter().zip(&data).map(|((_, d), p)| (level_of(&d, p), d.normalized())).collect();
            let refs: Vec<(&str, &Dataset)> = sets.iter().map(|(l, d)| (l.as_str(), d)).collect();
            let export = pca_export(&model, &refs)?;
            write(&out_dir(&out)?.join("pca.csv"), export.csv())?;
            for ((level, d), (_, c)) in export.mean_distance.iter().zip(&export.centroid_shift) {
                println!("{level}: mean distance from Level 1 centroid {d:.6}, centroid shift {c:.6}");
            }
        }
        Command::ReproSynthetic { out } => {
            let outcome = repro_synthetic(&cfg, &out)?;
            print!("{}", outcome.report.to_table());
            for c in outcome.checks.iter().chain([&outcome.pca_check]) {
                println!("{}", c.line());
            }
            if let Some(c) = outcome.checks.iter().find(|c| !c.passed) {
                return Err(Error::Acceptance(format!("{}: {}", c.name, c.detail)));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error kind={} message={msg:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}
