//! Command-line front end: argument types and one function per subcommand.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{parse_arch_list, ExperimentConfig, KeyValues};
use crate::data::{
    generate_dataset_sized, image_from_png, load_dataset, read_manifest, stratified_split,
    write_dataset, write_manifest, write_mask, Dataset, Image, LabelMap, Sample, Split, ZoneCombo,
};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, read_records_csv, softmax, uncertainty_map, write_records_csv, write_summary_csv,
    Evaluation, GroundTruthEcho, Segmenter,
};
use crate::models::{argmax_labels, count_parameters, image_batch, Arch, Model};
use crate::report::{
    grid_examples, iou_boxplot, param_table, prediction_grid, write_rows, ModelPredictions,
    ModelRecords, ScoreRow,
};
use crate::train::{train, TrainOptions, BEST_CHECKPOINT};

pub const TABLE1_FILE: &str = "table1.csv";
pub const TABLE2_FILE: &str = "table2.csv";
pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BOXPLOT_FILE: &str = "iou_boxplot.png";
pub const GRID_FILE: &str = "predictions.png";
const GT_ECHO_DIR: &str = "gt_echo";

#[derive(Debug, Parser)]
#[command(
    name = "segzoo",
    version,
    about = "U-Net family segmentation zoo and phantom experiment harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated architectures, or `all`.
    #[arg(long, global = true)]
    pub arch: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom dataset into the data directory.
    Synth {
        #[arg(long)]
        total: Option<usize>,
        /// Canvas edge length in pixels.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Assign a stratified train/test split in the manifest.
    Split {
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Train each architecture and score its best checkpoint.
    Train {
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        base_channels: Option<usize>,
    },
    /// Score checkpoints on the test split and write the score table.
    Eval {
        /// Checkpoint directory; defaults to `<out-dir>/<arch>/checkpoint_best`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score a freshly initialized model instead of a checkpoint.
        #[arg(long, hide = true)]
        untrained: bool,
        /// Score a stub that echoes the ground truth.
        #[arg(long, hide = true)]
        gt_echo: bool,
    },
    /// Count trainable parameters against the reference counts.
    Params {
        #[arg(long)]
        base_channels: Option<usize>,
    },
    /// Predict label maps and uncertainty for PNG images.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input images; defaults to the test split of the data directory.
        #[arg(long, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Render the IoU boxplot and the prediction grid.
    Report,
}

/// Parses the command line and runs it; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Config file values with the command-line flags applied on top.
pub fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let kv = match &common.config {
        Some(path) => KeyValues::read(path)?,
        None => KeyValues::default(),
    };
    let mut c = ExperimentConfig::from_key_values(&kv)?;
    if let Some(seed) = common.seed {
        c.train.seed = seed;
    }
    if let Some(arch) = &common.arch {
        c.archs = parse_arch_list(arch)?;
    }
    if let Some(epochs) = common.epochs {
        c.train.epochs = epochs;
    }
    if let Some(d) = &common.data_dir {
        c.data_dir = d.clone();
    }
    if let Some(d) = &common.out_dir {
        c.out_dir = d.clone();
    }
    Ok(c)
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli.common)?;
    let verbose = !cli.common.quiet;
    match &cli.command {
        Command::Synth { total, size } => {
            cfg.total = total.unwrap_or(cfg.total);
            cfg.image_size = size.unwrap_or(cfg.image_size);
            cmd_synth(&cfg, verbose)
        }
        Command::Split { fraction } => {
            cfg.train_fraction = fraction.unwrap_or(cfg.train_fraction);
            cmd_split(&cfg, verbose)
        }
        Command::Train {
            batch_size,
            learning_rate,
            base_channels,
        } => {
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.learning_rate = learning_rate.unwrap_or(cfg.train.learning_rate);
            cfg.base_channels = base_channels.unwrap_or(cfg.base_channels);
            cfg.validate()?;
            cmd_train(&cfg, verbose)
        }
        Command::Eval {
            checkpoint,
            untrained,
            gt_echo,
        } => cmd_eval(&cfg, checkpoint.as_deref(), *untrained, *gt_echo, verbose),
        Command::Params { base_channels } => {
            cfg.base_channels = base_channels.unwrap_or(cfg.base_channels);
            cfg.validate()?;
            cmd_params(&cfg, verbose)
        }
        Command::Predict { checkpoint, input } => {
            cmd_predict(&cfg, checkpoint.as_deref(), input, verbose)
        }
        Command::Report => cmd_report(&cfg, verbose),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let data = generate_dataset_sized(cfg.train.seed, cfg.total, cfg.image_size)?;
    write_dataset(&cfg.data_dir, &data)?;
    if verbose {
        let counts = data.manifest.combo_counts();
        let parts: Vec<String> = ZoneCombo::ALL
            .iter()
            .zip(counts)
            .map(|(c, n)| format!("{c}={n}"))
            .collect();
        println!(
            "wrote {} phantoms to {} ({})",
            data.samples.len(),
            cfg.data_dir.display(),
            parts.join(", ")
        );
    }
    Ok(())
}

pub fn cmd_split(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let mut manifest = read_manifest(&cfg.data_dir)?;
    let split = stratified_split(&manifest, cfg.train_fraction, cfg.train.seed)?;
    manifest.apply_split(&split);
    write_manifest(&cfg.data_dir, &manifest)?;
    if verbose {
        println!(
            "split {}: {} train / {} test",
            cfg.data_dir.display(),
            split.count(Split::Train),
            split.count(Split::Test)
        );
    }
    Ok(())
}

fn load_split_dataset(dir: &Path) -> Result<Dataset> {
    let data = load_dataset(dir)?;
    if data.manifest.entries.iter().any(|e| e.split.is_none()) {
        return Err(Error::data(
            dir.join(crate::data::MANIFEST_FILE),
            "manifest has samples without a split; run `split` first",
        ));
    }
    Ok(data)
}

fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    create_dir(dir)?;
    write_records_csv(&dir.join(RECORDS_FILE), &eval.records)?;
    write_summary_csv(&dir.join(SUMMARY_FILE), eval)
}

fn score_row(name: &str, eval: &Evaluation) -> ScoreRow {
    ScoreRow {
        arch: name.to_owned(),
        iou: eval.mean_iou,
        dsc: eval.mean_dsc,
        loss: eval.mean_loss,
    }
}

fn check_finite(name: &str, eval: &Evaluation) -> Result<()> {
    if eval.mean_loss.is_finite() && eval.mean_iou.is_finite() && eval.mean_dsc.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{name}: non-finite evaluation scores"
        )))
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let data = load_split_dataset(&cfg.data_dir)?;
    let test = data.split(Split::Test);
    let mut rows = Vec::new();
    for &arch in &cfg.archs {
        let dir = cfg.out_dir.join(arch.name());
        let mut model = Model::<f32>::new(cfg.model_config(arch), cfg.train.seed)?;
        let options = TrainOptions {
            out_dir: Some(dir.clone()),
            verbose,
        };
        let outcome = train(&mut model, &data, &cfg.train, &options)?;
        if test.is_empty() {
            continue;
        }
        *model.params_mut() = outcome.best_params;
        let eval = evaluate(&model, &test, cfg.train.batch_size)?;
        check_finite(arch.name(), &eval)?;
        write_evaluation(&dir, &eval)?;
        if verbose {
            println!(
                "{arch}: best epoch {}, test IoU {:.4}, DSC {:.4}, loss {:.4}",
                outcome.best_epoch, eval.mean_iou, eval.mean_dsc, eval.mean_loss
            );
        }
        rows.push(score_row(arch.name(), &eval));
    }
    if !rows.is_empty() {
        write_rows(&cfg.out_dir.join(TABLE2_FILE), &rows)?;
    }
    Ok(())
}

fn checkpoint_dir(cfg: &ExperimentConfig, arch: Arch) -> PathBuf {
    cfg.out_dir.join(arch.name()).join(BEST_CHECKPOINT)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint_path: Option<&Path>,
    untrained: bool,
    gt_echo: bool,
    verbose: bool,
) -> Result<()> {
    let data = load_split_dataset(&cfg.data_dir)?;
    let test = data.split(Split::Test);
    let mut jobs: Vec<(String, Box<dyn Segmenter>)> = Vec::new();
    if gt_echo {
        jobs.push((GT_ECHO_DIR.to_owned(), Box::new(GroundTruthEcho)));
    } else if let Some(path) = checkpoint_path {
        let model: Model<f32> = checkpoint::load(path)?;
        jobs.push((model.arch().name().to_owned(), Box::new(model)));
    } else {
        for &arch in &cfg.archs {
            let model = if untrained {
                Model::<f32>::new(cfg.model_config(arch), cfg.train.seed)?
            } else {
                checkpoint::load(&checkpoint_dir(cfg, arch))?
            };
            jobs.push((arch.name().to_owned(), Box::new(model)));
        }
    }
    let mut rows = Vec::new();
    for (name, model) in &jobs {
        let eval = evaluate(model.as_ref(), &test, cfg.train.batch_size)?;
        check_finite(name, &eval)?;
        write_evaluation(&cfg.out_dir.join(name), &eval)?;
        if verbose {
            println!(
                "{name}: IoU {:.4}, DSC {:.4}, loss {:.4} over {} images",
                eval.mean_iou,
                eval.mean_dsc,
                eval.mean_loss,
                test.len()
            );
        }
        rows.push(score_row(name, &eval));
    }
    create_dir(&cfg.out_dir)?;
    write_rows(&cfg.out_dir.join(TABLE2_FILE), &rows)
}

pub fn cmd_params(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let reports = cfg
        .archs
        .iter()
        .map(|&a| {
            Ok(count_parameters(&Model::<f32>::new(
                cfg.model_config(a),
                0,
            )?))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = param_table(&reports);
    create_dir(&cfg.out_dir)?;
    write_rows(&cfg.out_dir.join(TABLE1_FILE), &rows)?;
    if verbose {
        println!(
            "{:<16} {:>10} {:>10} {:>8} {:>6}",
            "arch", "params", "reference", "delta%", "ok"
        );
        for r in &rows {
            println!(
                "{:<16} {:>10} {:>10} {:>8.3} {:>6}",
                r.arch, r.params, r.reference, r.delta_pct, r.within_tolerance
            );
        }
    }
    let bad: Vec<&str> = rows
        .iter()
        .filter(|r| !r.within_tolerance)
        .map(|r| r.arch.as_str())
        .collect();
    let misordered = rows.iter().any(|r| r.order != r.reference_order);
    if !bad.is_empty() {
        return Err(Error::Numeric(format!(
            "parameter counts outside tolerance: {}",
            bad.join(", ")
        )));
    }
    if misordered {
        return Err(Error::Numeric(
            "parameter-count ordering differs from the reference".into(),
        ));
    }
    Ok(())
}

fn entropy_png(map: &crate::tensor::Tensor<f64>, n: usize, w: usize, h: usize) -> Result<Image> {
    let max = (crate::data::NUM_CLASSES as f64).ln();
    Image::new(w, h, map.item(n).iter().map(|v| (v / max) as f32).collect())
}

pub fn cmd_predict(
    cfg: &ExperimentConfig,
    checkpoint_path: Option<&Path>,
    inputs: &[PathBuf],
    verbose: bool,
) -> Result<()> {
    let arch = cfg.archs[0];
    let ckpt = checkpoint_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint_dir(cfg, arch));
    let model: Model<f32> = checkpoint::load(&ckpt)?;
    let images: Vec<(String, Image)> = if inputs.is_empty() {
        let data = load_split_dataset(&cfg.data_dir)?;
        data.split(Split::Test)
            .into_iter()
            .map(|s| (s.id.clone(), s.image.clone()))
            .collect()
    } else {
        inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                let stem = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok((stem, image_from_png(&bytes, p)?))
            })
            .collect::<Result<_>>()?
    };
    let dir = cfg.out_dir.join(model.arch().name()).join("predictions");
    create_dir(&dir)?;
    for (id, image) in &images {
        let logits = model.logits(image_batch::<f32>(&[image])?)?;
        let labels: LabelMap = argmax_labels(&logits).remove(0);
        let entropy = uncertainty_map(&softmax(&logits))?;
        write_mask(&dir.join(format!("{id}_mask.png")), &labels)?;
        let ent = entropy_png(&entropy, 0, image.width(), image.height())?;
        let path = dir.join(format!("{id}_entropy.png"));
        std::fs::write(&path, crate::data::image_to_png(&ent)).map_err(|e| Error::io(&path, e))?;
    }
    if verbose {
        println!("wrote {} predictions to {}", images.len(), dir.display());
    }
    Ok(())
}

pub fn cmd_report(cfg: &ExperimentConfig, verbose: bool) -> Result<()> {
    let mut records = Vec::new();
    for &arch in &cfg.archs {
        let path = cfg.out_dir.join(arch.name()).join(RECORDS_FILE);
        if path.exists() {
            records.push((arch, read_records_csv(&path)?));
        }
    }
    if records.iter().all(|(_, r)| r.is_empty()) {
        return Err(Error::Dataset(format!(
            "no records found under {}; run `train` or `eval` first",
            cfg.out_dir.display()
        )));
    }
    if cfg.boxplot {
        let models: Vec<ModelRecords> = records
            .iter()
            .map(|(a, r)| ModelRecords {
                name: a.display_name().to_owned(),
                records: r.clone(),
            })
            .collect();
        let (canvas, layout) = iou_boxplot(&models)?;
        let path = cfg.out_dir.join(BOXPLOT_FILE);
        canvas.save(&path)?;
        if verbose {
            println!("wrote {} ({} groups)", path.display(), layout.groups);
        }
    }
    if cfg.prediction_grid {
        let data = load_split_dataset(&cfg.data_dir)?;
        let test = data.split(Split::Test);
        let examples: Vec<&Sample> = grid_examples(&test);
        let mut preds = Vec::new();
        for (arch, _) in &records {
            let ckpt = checkpoint_dir(cfg, *arch);
            if !ckpt.exists() {
                continue;
            }
            let model: Model<f32> = checkpoint::load(&ckpt)?;
            let logits = Segmenter::logits(&model, &examples)?;
            preds.push(ModelPredictions {
                name: arch.display_name().to_owned(),
                labels: argmax_labels(&logits),
            });
        }
        let (canvas, layout) = prediction_grid(&examples, &preds)?;
        let path = cfg.out_dir.join(GRID_FILE);
        canvas.save(&path)?;
        if verbose {
            println!("wrote {} ({} panels)", path.display(), layout.panels);
        }
    }
    Ok(())
}
