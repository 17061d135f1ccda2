use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dermaug::config::{parse_config, RunConfig};
use dermaug::ensemble::{
    load_ensemble, predict_dataset, predictions_csv, save_ensemble, stratified_kfold, train_ensemble,
    ensemble_balanced_accuracy,
};
use dermaug::imagedata::{
    load_image_dir, load_labeled_dir, load_labels_csv, make_synthetic_dataset, save_dataset, Dataset, SoftLabel,
};
use dermaug::meanteacher::history_csv;
use dermaug::metrics::{confusion_matrix, render_report, render_report_csv};
use dermaug::rng::RngStream;
use dermaug::Error;

mod preview;

const TAG_TEST_SET: u64 = 0x30;

#[derive(Parser)]
#[command(name = "dermaug", version, about = "Skin-lesion augmentation and mean-teacher ensemble pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic train, unlabelled and test sets to disk.
    SynthData {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Write one gallery per augmentation stage.
    AugmentPreview {
        #[arg(short, long)]
        config: PathBuf,
        /// Source images per gallery (rows).
        #[arg(short, long, default_value_t = 16)]
        n: usize,
    },
    /// Train one mean-teacher member per stratified fold.
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Predict with a trained ensemble.
    Predict {
        #[arg(short, long)]
        config: PathBuf,
        /// Ensemble manifest written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Directory of PNG/PPM images. Defaults to the synthetic test set.
        #[arg(long)]
        images: Option<PathBuf>,
        /// Defaults to `<output_dir>/predictions.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Directory for `metrics.txt` and `metrics.csv`. Defaults to the
        /// predictions file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => 1,
            Error::Invariant(_) => 3,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::SynthData { config } => synth_data(&load_config(&config)?),
        Command::AugmentPreview { config, n } => {
            if n == 0 {
                return Err(Failure::usage("-n must be at least 1"));
            }
            let cfg = load_config(&config)?;
            let (labeled, _) = training_data(&cfg)?;
            let written = preview::write_galleries(&labeled, &cfg, n, &cfg.output_dir.join("preview"))?;
            for p in written {
                info!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Train { config } => train(&load_config(&config)?),
        Command::Predict {
            config,
            model,
            images,
            out,
        } => predict(&load_config(&config)?, &model, images.as_deref(), out),
        Command::Evaluate { pred, gold, out } => evaluate(&pred, &gold, out),
    }
}

/// Reads, validates and echoes the config into its output directory.
fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("resolved_config.toml"), &cfg.to_toml())?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io { path: dir.into(), source: e }))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::from(Error::Io { path: path.into(), source: e }))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::from(Error::Io { path: path.into(), source: e }))
}

/// Labelled and unlabelled training data: files named in `data`, or the
/// synthetic generator when no labels CSV is configured.
fn training_data(cfg: &RunConfig) -> CliResult<(Dataset, Dataset)> {
    match (&cfg.data.labels_csv, &cfg.data.image_dir) {
        (Some(csv), Some(dir)) => {
            let labeled = load_labeled_dir(csv, dir)?;
            let unlabeled = match &cfg.data.unlabeled_dir {
                Some(u) => load_image_dir(u)?,
                None => Dataset::default(),
            };
            Ok((labeled, unlabeled))
        }
        _ => Ok(make_synthetic_dataset(&cfg.synth, cfg.seed)?.split_labeled()),
    }
}

/// A labelled synthetic test set drawn independently of the training data.
fn synthetic_test_set(cfg: &RunConfig) -> CliResult<Dataset> {
    let spec = dermaug::imagedata::SynthSpec {
        unlabeled_count: 0,
        ..cfg.synth.clone()
    };
    let seed = RngStream::derive(cfg.seed, &[TAG_TEST_SET]).next_u64();
    Ok(make_synthetic_dataset(&spec, seed)?)
}

fn synth_data(cfg: &RunConfig) -> CliResult {
    if !cfg.uses_synthetic_data() {
        return Err(Failure::usage("synth-data needs a config without data.labels_csv"));
    }
    let (labeled, unlabeled) = training_data(cfg)?;
    let test = synthetic_test_set(cfg)?;
    let root = cfg.output_dir.join("data");
    for (name, set) in [("train", &labeled), ("test", &test)] {
        let dir = root.join(name);
        create_dir(&dir)?;
        save_dataset(set, &dir.join("images"), Some(&dir.join("labels.csv")))?;
    }
    save_dataset(&unlabeled, &root.join("unlabeled"), None)?;
    info!(
        "wrote {} labelled, {} unlabelled and {} test images under {}",
        labeled.len(),
        unlabeled.len(),
        test.len(),
        root.display()
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> CliResult {
    let (labeled, unlabeled) = training_data(cfg)?;
    info!(
        "training {} members on {} labelled and {} unlabelled images",
        cfg.k,
        labeled.len(),
        unlabeled.len()
    );
    let plan = stratified_kfold(&labeled.labels(), cfg.k, cfg.seed)?;
    let out = train_ensemble(&labeled, &unlabeled, &plan, &cfg.model, &cfg.train, &cfg.aug, cfg.tta, cfg.seed)?;

    let ids: Vec<Vec<&str>> = plan
        .folds
        .iter()
        .map(|f| f.iter().map(|&i| labeled.entries()[i].id.as_str()).collect())
        .collect();
    let folds_json = serde_json::json!({ "k": plan.k, "folds": plan.folds, "ids": ids });
    write_file(
        &cfg.output_dir.join("folds.json"),
        &(serde_json::to_string_pretty(&folds_json).expect("fold plan serializes") + "\n"),
    )?;
    let hist_dir = cfg.output_dir.join("history");
    create_dir(&hist_dir)?;
    for r in &out.reports {
        write_file(&hist_dir.join(format!("fold_{}.csv", r.fold)), &history_csv(&r.history))?;
    }
    let val: Vec<f64> = out.reports.iter().map(|r| r.val_bacc).collect();
    let manifest = save_ensemble(&out.model, &val, &cfg.output_dir.join("model"))?;

    let mut report = String::from("fold,train_size,val_size,val_balanced_accuracy\n");
    for r in &out.reports {
        report.push_str(&format!("{},{},{},{}\n", r.fold, r.train_indices.len(), r.val_indices.len(), r.val_bacc));
    }
    let mean = val.iter().sum::<f64>() / val.len() as f64;
    report.push_str(&format!("mean,,,{mean}\n"));
    if cfg.uses_synthetic_data() {
        let test = synthetic_test_set(cfg)?;
        let bacc = ensemble_balanced_accuracy(&out.model, &test, cfg.tta)?;
        report.push_str(&format!("ensemble_synthetic_test,,{},{bacc}\n", test.len()));
        info!("ensemble balanced accuracy on the synthetic test set: {bacc:.4}");
    }
    write_file(&cfg.output_dir.join("train_report.csv"), &report)?;
    info!("mean held-out member balanced accuracy {mean:.4}; manifest {}", manifest.display());
    Ok(())
}

fn predict(cfg: &RunConfig, manifest: &Path, images: Option<&Path>, out: Option<PathBuf>) -> CliResult {
    let model = load_ensemble(manifest)?;
    let data = match images {
        Some(dir) => load_image_dir(dir)?,
        None if cfg.uses_synthetic_data() => synthetic_test_set(cfg)?,
        None => return Err(Failure::usage("--images is required when data.labels_csv is set")),
    };
    if data.is_empty() {
        return Err(Failure::from(Error::Data("no images to predict".into())));
    }
    let rows = predict_dataset(&model, &data, cfg.tta)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("predictions.csv"));
    write_file(&path, &predictions_csv(&rows))?;
    info!("wrote {} predictions to {}", rows.len(), path.display());
    Ok(())
}

fn read_labels(path: &Path) -> CliResult<Vec<(String, SoftLabel)>> {
    let text = read_file(path)?;
    load_labels_csv(&text).map_err(|e| Failure::from(Error::Data(format!("{}: {e}", path.display()))))
}

fn evaluate(pred: &Path, gold: &Path, out: Option<PathBuf>) -> CliResult {
    let preds = read_labels(pred)?;
    let golds = read_labels(gold)?;
    let by_id: std::collections::HashMap<&str, &SoftLabel> = preds.iter().map(|(id, p)| (id.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(Failure::from(Error::Data(format!("{}: duplicate image ids", pred.display()))));
    }
    let gold_ids: std::collections::HashSet<&str> = golds.iter().map(|(id, _)| id.as_str()).collect();
    if let Some((id, _)) = preds.iter().find(|(id, _)| !gold_ids.contains(id.as_str())) {
        return Err(Failure::from(Error::Data(format!("`{id}` has a prediction but no ground truth"))));
    }
    let mut p = Vec::with_capacity(golds.len());
    for (id, _) in &golds {
        match by_id.get(id.as_str()) {
            Some(&l) => p.push(*l),
            None => return Err(Failure::from(Error::Data(format!("no prediction for `{id}`")))),
        }
    }
    let g: Vec<SoftLabel> = golds.iter().map(|(_, l)| *l).collect();
    let m = confusion_matrix(&p, &g)?;
    let text = render_report(&m)?;
    let dir = out.unwrap_or_else(|| pred.parent().map(Path::to_path_buf).unwrap_or_default());
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    create_dir(&dir)?;
    write_file(&dir.join("metrics.txt"), &text)?;
    write_file(&dir.join("metrics.csv"), &render_report_csv(&m)?)?;
    print!("{text}");
    Ok(())
}
