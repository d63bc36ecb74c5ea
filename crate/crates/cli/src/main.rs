//! `emoser` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emoser_core::config::RunConfig;
use emoser_core::dsp::dump::{write_dump, DumpFormat};
use emoser_core::dsp::{FrontendConfig, MelSpectrogram};
use emoser_core::experiment::run::{history_csv, predictions_csv, write_file};
use emoser_core::experiment::{
    cross_validate, evaluate, extract_features, generate_synthetic_dataset, kfold_splits, load_manifest,
    loso_splits, pretrain_speaker, run_ablation, write_cv_artifacts, AblationReport, Dataset, EpochStats,
    ExperimentDef, Fold, Progress, Protocol, SegmentRecord, SyntheticSpec,
};
use emoser_core::metrics::{table_header, table_row, MetricsFile, MetricsReport};
use emoser_core::model::{load_checkpoint, save_checkpoint, EmotionClassifier, TrainingMeta};
use emoser_core::rng::stream;
use emoser_core::specaug::{apply_masks, AugmentationPolicy};
use emoser_core::{Error, Result};

const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Parser)]
#[command(name = "emoser", version, about = "Speech emotion recognition pipeline")]
struct Cli {
    /// Worker threads for feature extraction and evaluation (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (WAVs + manifest.csv).
    Synth {
        /// JSON synthetic-dataset spec; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one normalized log-mel dump per manifest row.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "binary")]
        dump_format: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mask a normalized dump; writes the masked dump and a JSON side-car.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<in>.<policy>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Speaker-classification pretraining.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated emotion training and evaluation.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Overrides the configured protocol.
        #[arg(long)]
        protocol: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on every row of a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Transfer learning x augmentation x pooling grid over k-fold CV.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Speaker checkpoint for the transfer-learning cells; pretrained on
        /// the manifest's speakers when omitted.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel_cells: usize,
    },
    /// Render the metrics of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // Only fails if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), &out, seed),
        Command::Extract {
            manifest,
            out,
            dump_format,
            config,
        } => cmd_extract(&manifest, &out, dump_format.parse()?, config.as_deref(), workers),
        Command::Augment {
            input,
            policy,
            seed,
            out,
        } => cmd_augment(&input, &policy, seed, out),
        Command::Pretrain { manifest, config, out } => cmd_pretrain(&manifest, config.as_deref(), &out, workers),
        Command::Train {
            manifest,
            config,
            pretrained,
            protocol,
            out,
        } => cmd_train(&manifest, config.as_deref(), pretrained.as_deref(), protocol, &out, workers),
        Command::Eval { ckpt, manifest, out } => cmd_eval(&ckpt, &manifest, &out, workers),
        Command::Ablate {
            manifest,
            config,
            pretrained,
            out,
            parallel_cells,
        } => cmd_ablate(&manifest, config.as_deref(), pretrained.as_deref(), &out, parallel_cells, workers),
        Command::Report { run } => cmd_report(&run),
    }
}

/// Loads the config (or defaults), applies `EMOSER_SEED` and writes the
/// resolved snapshot to `dir` before anything else happens.
fn resolve_config(path: Option<&Path>, manifest: &Path, dir: &Path, snapshot: &str) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    cfg.manifest = Some(manifest.to_path_buf());
    cfg.validate()?;
    write_file(&dir.join(snapshot), cfg.to_text())?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn print_epoch(prefix: &str, s: &EpochStats) {
    println!(
        "{prefix}epoch {:>3}  lr {:.5}  loss {:.4}  train WA {:.2}%",
        s.epoch,
        s.lr,
        s.loss,
        100.0 * s.train_wa
    );
}

fn cmd_synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec: SyntheticSpec = match spec {
        Some(p) => read_json(p)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("synth_spec.json"), to_json(&spec))?;
    let records = generate_synthetic_dataset(&spec, out)?;
    println!("wrote {} segments to {}", records.len(), out.display());
    Ok(())
}

fn cmd_extract(
    manifest: &Path,
    out: &Path,
    format: DumpFormat,
    config: Option<&Path>,
    workers: usize,
) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg = resolve_config(config, manifest, out, CONFIG_SNAPSHOT)?;
    let records = load_manifest(manifest)?;
    let specs = extract_features(&records, &cfg.frontend, workers)?;
    let ext = match format {
        DumpFormat::Text => "txt",
        DumpFormat::Binary => "bin",
    };
    for (r, s) in records.iter().zip(&specs) {
        write_dump(out.join(format!("{}.{ext}", r.id)), s, format)?;
    }
    println!("wrote {} dumps to {}", specs.len(), out.display());
    Ok(())
}

fn cmd_augment(input: &Path, policy: &str, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let policy: AugmentationPolicy = policy.parse()?;
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let format = if bytes.starts_with(b"EMSP") {
        DumpFormat::Binary
    } else {
        DumpFormat::Text
    };
    let spec = emoser_core::dsp::dump::decode(&bytes, true)?;
    let (masked, masks) = apply_masks(&spec, &policy, &mut stream(seed, "augment", &[]))?;
    let out = out.unwrap_or_else(|| {
        let mut name = input.as_os_str().to_owned();
        name.push(format!(".{}", policy.name));
        PathBuf::from(name)
    });
    write_dump(&out, &masked, format)?;
    let mut side = out.as_os_str().to_owned();
    side.push(".masks.json");
    let sidecar = serde_json::json!({
        "input": input.display().to_string(),
        "policy": policy,
        "seed": seed,
        "n_frames": spec.n_frames(),
        "n_mels": spec.n_mels(),
        "masks": masks,
    });
    write_file(Path::new(&side), to_json(&sidecar))?;
    println!("wrote {} ({} masks)", out.display(), masks.len());
    Ok(())
}

/// Records, normalized features and the frontend that produced them.
fn load_data(manifest: &Path, frontend: &FrontendConfig, workers: usize) -> Result<(Vec<SegmentRecord>, Vec<MelSpectrogram>)> {
    let records = load_manifest(manifest)?;
    let specs = extract_features(&records, frontend, workers)?;
    Ok((records, specs))
}

fn speaker_meta(cfg: &RunConfig, meta: TrainingMeta) -> TrainingMeta {
    TrainingMeta {
        frontend: Some(cfg.frontend.clone()),
        ..meta
    }
}

fn cmd_pretrain(manifest: &Path, config: Option<&Path>, out: &Path, workers: usize) -> Result<()> {
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("pretrain");
    let cfg = resolve_config(config, manifest, dir, &format!("{stem}.config.txt"))?;
    let (records, specs) = load_data(manifest, &cfg.frontend, workers)?;
    let (model, history, meta) = pretrain_speaker(&records, &specs, &cfg.train_config(), &mut |s| print_epoch("", s))?;
    save_checkpoint(out, &model, &speaker_meta(&cfg, meta))?;
    write_file(&dir.join(format!("{stem}.history.csv")), history_csv(&history))?;
    println!("wrote speaker checkpoint ({} speakers) to {}", model.n_classes(), out.display());
    Ok(())
}

fn make_folds(cfg: &RunConfig, protocol: Protocol, records: &[SegmentRecord], labels: &[usize]) -> Result<Vec<Fold>> {
    match protocol {
        Protocol::Loso => loso_splits(records, (cfg.sessions > 0).then_some(cfg.sessions)),
        Protocol::Kfold => kfold_splits(labels, cfg.folds, &mut stream(cfg.seed, "kfold", &[])),
    }
}

fn load_pretrained(path: Option<&Path>) -> Result<Option<EmotionClassifier>> {
    path.map(|p| load_checkpoint(p, None).map(|(m, _)| m)).transpose()
}

fn cmd_train(
    manifest: &Path,
    config: Option<&Path>,
    pretrained: Option<&Path>,
    protocol: Option<String>,
    out: &Path,
    workers: usize,
) -> Result<()> {
    let protocol: Option<Protocol> = protocol.map(|p| p.parse()).transpose()?;
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = protocol {
        cfg.protocol = p;
    }
    if pretrained.is_some() {
        cfg.checkpoint = pretrained.map(Path::to_path_buf);
    }
    cfg.apply_env()?;
    cfg.manifest = Some(manifest.to_path_buf());
    cfg.run_dir = Some(out.to_path_buf());
    cfg.validate()?;
    write_file(&out.join(CONFIG_SNAPSHOT), cfg.to_text())?;

    let pretrained = load_pretrained(cfg.checkpoint.as_deref())?;
    let (records, specs) = load_data(manifest, &cfg.frontend, workers)?;
    let def = ExperimentDef::by_name(cfg.experiment, &records);
    let labels = def.labels(&records)?;
    let folds = make_folds(&cfg, cfg.protocol, &records, &labels)?;
    let data = Dataset {
        specs: &specs,
        labels: &labels,
    };
    let train = cfg.train_config();
    let name = cfg.experiment.to_string();
    let outcome = cross_validate(&name, &records, data, &def.classes, &folds, &train, pretrained.as_ref(), &mut |p| {
        match p {
            Progress::Epoch { fold, stats } => print_epoch(&format!("{fold} "), stats),
            Progress::Fold { fold, report } => println!(
                "{fold}: WA {:.2}%  UA {:.2}%",
                100.0 * report.wa,
                100.0 * report.ua
            ),
        }
    })?;
    let meta = TrainingMeta {
        task: "emotion".into(),
        labels: def.classes.clone(),
        epochs: train.epochs,
        seed: train.seed,
        frontend: Some(cfg.frontend.clone()),
    };
    write_cv_artifacts(out, &outcome, &def.classes, &meta)?;
    println!("{}", table_header());
    let s = &outcome.metrics.summary;
    println!("{}", table_row(&name, s.ua_mean, s.wa_mean));
    Ok(())
}

fn cmd_eval(ckpt: &Path, manifest: &Path, out: &Path, workers: usize) -> Result<()> {
    let (model, meta) = load_checkpoint(ckpt, None)?;
    let frontend = meta.frontend.clone().unwrap_or_else(|| FrontendConfig {
        n_mels: model.config().n_mels,
        ..FrontendConfig::default()
    });
    if frontend.n_mels != model.config().n_mels {
        return Err(Error::CheckpointMismatch(format!(
            "front-end produces {} mel channels, the model expects {}",
            frontend.n_mels,
            model.config().n_mels
        )));
    }
    let (records, specs) = load_data(manifest, &frontend, workers)?;
    let def = if meta.labels.len() == model.n_classes() {
        ExperimentDef::custom(meta.labels.clone())
    } else {
        ExperimentDef::from_labels(&records)
    };
    let labels = def.labels(&records)?;
    let data = Dataset {
        specs: &specs,
        labels: &labels,
    };
    let all: Vec<usize> = (0..records.len()).collect();
    let eval = evaluate(&model, &records, data, &all, &def.classes)?;
    let mut report = MetricsReport::from_confusion(0, eval.confusion)?;
    report.padded_segments = eval.predictions.iter().filter(|p| p.padded).map(|p| p.id.clone()).collect();
    write_file(&out.join("predictions.csv"), predictions_csv(&eval.predictions, &def.classes))?;
    let metrics = MetricsFile::new(meta.task.clone(), vec![report])?;
    write_file(&out.join("metrics.json"), metrics.to_json())?;
    println!("{}", table_header());
    println!("{}", table_row("eval", metrics.summary.ua_mean, metrics.summary.wa_mean));
    Ok(())
}

fn cmd_ablate(
    manifest: &Path,
    config: Option<&Path>,
    pretrained: Option<&Path>,
    out: &Path,
    parallel_cells: usize,
    workers: usize,
) -> Result<()> {
    let cfg = resolve_config(config, manifest, out, CONFIG_SNAPSHOT)?;
    let (records, specs) = load_data(manifest, &cfg.frontend, workers)?;
    let train = cfg.train_config();
    let pretrained = match load_pretrained(pretrained)? {
        Some(m) => m,
        None => {
            println!("no --pretrained checkpoint; pretraining on the manifest speakers");
            let (m, history, meta) = pretrain_speaker(&records, &specs, &train, &mut |s| print_epoch("speaker ", s))?;
            save_checkpoint(&out.join("pretrain.ckpt"), &m, &speaker_meta(&cfg, meta))?;
            write_file(&out.join("pretrain.history.csv"), history_csv(&history))?;
            m
        }
    };
    let def = ExperimentDef::by_name(cfg.experiment, &records);
    let labels = def.labels(&records)?;
    let folds = make_folds(&cfg, Protocol::Kfold, &records, &labels)?;
    let data = Dataset {
        specs: &specs,
        labels: &labels,
    };
    let report = run_ablation(
        &records,
        data,
        &def.classes,
        &folds,
        &train,
        &pretrained,
        &cfg.ablation_no_sp,
        parallel_cells,
        &|line| println!("{line}"),
    )?;
    write_file(&out.join("ablation.json"), to_json(&report))?;
    let table = report.render();
    write_file(&out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_report(run: &Path) -> Result<()> {
    let mut found = false;
    let metrics_path = run.join("metrics.json");
    if metrics_path.exists() {
        found = true;
        let text = std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let m = MetricsFile::from_json(&text)?;
        println!("{}", table_header());
        for f in &m.folds {
            println!("{}", table_row(&format!("fold {}", f.fold + 1), f.ua, f.wa));
        }
        let s = &m.summary;
        println!("{}", table_row(&m.experiment, s.ua_mean, s.wa_mean));
        println!(
            "{:<24} {:>7.2} {:>7.2}",
            "std",
            100.0 * s.ua_std,
            100.0 * s.wa_std
        );
        println!("\npooled confusion matrix [% of true class]");
        print!("{}", s.pooled_confusion.render_percent());
    }
    let ablation_path = run.join("ablation.json");
    if ablation_path.exists() {
        found = true;
        let report: AblationReport = read_json(&ablation_path)?;
        print!("{}", report.render());
    }
    if !found {
        return Err(Error::io(
            &metrics_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no metrics.json or ablation.json in run directory"),
        ));
    }
    Ok(())
}
