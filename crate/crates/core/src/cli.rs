//! Command-line front end: `gen-data`, `train`, `eval` and `score`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregate::{score_song_file, write_jsonl, SongScore};
use crate::error::{Error, Result};
use crate::featio::{corpus_dimensions, read_manifest, write_synthetic_corpus, SongRecord, SynthConfig};
use crate::higia::GranularitySpec;
use crate::model::{Model, Pooling};
use crate::trainer::{evaluate, load_checkpoint, load_songs, save_checkpoint, train, Split, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "stemscore", version, about = "Multi-stem song aesthetics scorer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic corpus (stem files plus manifest).
    GenData(GenDataArgs),
    /// Train a model and write checkpoint, log, split and test report.
    Train(TrainArgs),
    /// Evaluate a checkpoint against the labels in a manifest.
    Eval(EvalArgs),
    /// Score songs with a checkpoint.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory; receives manifest.jsonl and stems/.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of songs.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub songs: u64,
    /// Random seed for features and labels.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shortest song in frames.
    #[arg(long, default_value_t = 24)]
    pub frames_min: usize,
    /// Longest song in frames.
    #[arg(long, default_value_t = 56)]
    pub frames_max: usize,
    /// Feature dimension per frame.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Feature layers per stem.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Number of labelled aesthetic dimensions.
    #[arg(long, default_value_t = 5)]
    pub dims: usize,
    /// Top of the native label scale.
    #[arg(long, default_value_t = 5.0)]
    pub scale_max: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PoolingArg {
    Mean,
    MeanMax,
}

/// Training options; any flag given overrides the config file, which
/// overrides the built-in defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoint.bin, train_log.jsonl, config.toml,
    /// split.json and test_report.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file with a full or partial training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the split and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many epochs without a validation improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Segments per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Weight of the squared-error loss term.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Segment length in frames.
    #[arg(long)]
    pub window: Option<usize>,
    /// Segment hop in frames.
    #[arg(long)]
    pub hop: Option<usize>,
    /// Replace multi-stem attention fusion with a pass-through.
    #[arg(long)]
    pub no_msaf: bool,
    /// Replace interval aggregation with a direct regressor.
    #[arg(long)]
    pub no_higia: bool,
    /// Bin counts of the three granularities, e.g. 2,4,8.
    #[arg(long)]
    pub bins: Option<GranularitySpec>,
    /// Model width (feature dimension of the corpus).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Feature layers per stem.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Transformer blocks per stem encoder.
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Attention heads; must divide --dim.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Hidden width of the prediction heads.
    #[arg(long)]
    pub head_hidden: Option<usize>,
    /// Temporal pooling before the heads.
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Songs to evaluate, with labels.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Restrict to one part of a split.json written by `train`.
    #[arg(long, requires = "split")]
    pub split_file: Option<PathBuf>,
    /// Which part of the split file to evaluate.
    #[arg(long, value_enum, requires = "split_file")]
    pub split: Option<SplitPart>,
    /// Report path (tab-separated); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Songs to score.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Prediction file (JSON lines); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-segment interval traces to this JSON-lines file.
    #[arg(long)]
    pub debug_higia: Option<PathBuf>,
}

/// Parses `args` and runs the command; usage errors exit 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_score(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        n_songs: a.songs as usize,
        frames_min: a.frames_min,
        frames_max: a.frames_max,
        dim: a.dim,
        layers: a.layers,
        n_dims: a.dims,
        native_scale_max: a.scale_max,
    };
    let manifest = write_synthetic_corpus(&a.out, &cfg)?;
    println!(
        "wrote {} songs ({}..={} frames, d={}, {} layers, {} dimensions, scale 0..{}) to {}",
        cfg.n_songs,
        cfg.frames_min,
        cfg.frames_max,
        cfg.dim,
        cfg.layers,
        cfg.n_dims,
        cfg.native_scale_max,
        manifest.display()
    );
    Ok(())
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.seed, cfg.seed);
    set!(a.epochs, cfg.epochs);
    set!(a.patience, cfg.patience);
    set!(a.batch_size, cfg.batch_size);
    set!(a.lr, cfg.adam.learning_rate);
    set!(a.lambda, cfg.regression_weight);
    set!(a.window, cfg.window);
    set!(a.hop, cfg.hop);
    set!(a.bins, cfg.model.bins);
    set!(a.dim, cfg.model.encoder.dim);
    set!(a.layers, cfg.model.encoder.layers);
    set!(a.blocks, cfg.model.encoder.blocks);
    set!(a.heads, cfg.model.encoder.heads);
    set!(a.head_hidden, cfg.model.head_hidden);
    if let Some(p) = a.pooling {
        cfg.model.pooling = match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::MeanMax => Pooling::MeanMax,
        };
    }
    if a.no_msaf {
        cfg.model.msaf = false;
    }
    if a.no_higia {
        cfg.model.higia = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Dimension names shared by every record, in manifest order of the first.
fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_train_config(&a)?;
    let records = read_manifest(&a.manifest)?;
    cfg.model.dimensions = corpus_dimensions(&records)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;

    let log_path = a.out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train(&cfg, &records, Some(&mut log))?;

    let ckpt = a.out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt, &outcome.model, &cfg)?;
    let config_path = a.out_dir.join("config.toml");
    let toml_text = cfg.to_toml()?;
    write_text(&config_path, &toml_text)?;
    let split_path = a.out_dir.join("split.json");
    let split_text = serde_json::to_string_pretty(&outcome.split).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&split_path, &(split_text + "\n"))?;
    let report = outcome.test.report.to_tsv();
    write_text(&a.out_dir.join("test_report.tsv"), &report)?;

    println!(
        "parameters: {}  epochs run: {}  best epoch: {}",
        outcome.model.parameter_count(),
        outcome.history.len(),
        outcome.best_epoch
    );
    println!("checkpoint: {}", ckpt.display());
    println!("test songs: {}", outcome.split.test.len());
    print!("{report}");
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn select_split(records: Vec<SongRecord>, file: &Path, part: SplitPart) -> Result<Vec<SongRecord>> {
    let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let split: Split<String> = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: file.to_path_buf(),
        reason: e.to_string(),
    })?;
    let ids = match part {
        SplitPart::Train => split.train,
        SplitPart::Val => split.val,
        SplitPart::Test => split.test,
    };
    let chosen: Vec<SongRecord> = records.into_iter().filter(|r| ids.contains(&r.song_id)).collect();
    if chosen.len() != ids.len() {
        return Err(Error::InvalidInput(format!(
            "manifest lacks {} of the {} songs in the split",
            ids.len() - chosen.len(),
            ids.len()
        )));
    }
    Ok(chosen)
}

fn load_model(path: &Path) -> Result<(Model, TrainConfig)> {
    if !path.exists() {
        return Err(Error::InvalidInput(format!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.checkpoint)?;
    let mut records = read_manifest(&a.manifest)?;
    if let (Some(file), Some(part)) = (&a.split_file, a.split) {
        records = select_split(records, file, part)?;
    }
    let songs = load_songs(&records)?;
    let eval = evaluate(&model, &songs, cfg.window, cfg.hop, false)?;
    let report = eval.report.to_tsv();
    match &a.out {
        Some(path) => {
            write_text(path, &report)?;
            println!("evaluated {} songs; report written to {}", eval.report.n, path.display());
        }
        None => print!("{report}"),
    }
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let (model, cfg) = load_model(&a.checkpoint)?;
    let records = read_manifest(&a.manifest)?;
    let mut scores: Vec<SongScore> = Vec::new();
    let mut debug = Vec::new();
    for r in &records {
        let result = score_song_file(r, &model, cfg.window, cfg.hop, a.debug_higia.is_some())?;
        scores.extend(result.scores);
        debug.extend(result.debug);
    }
    match &a.out {
        Some(path) => write_jsonl(path, &scores)?,
        None => {
            for s in &scores {
                println!("{}", serde_json::to_string(s).map_err(|e| Error::Numeric(e.to_string()))?);
            }
        }
    }
    if let Some(path) = &a.debug_higia {
        write_jsonl(path, &debug)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn train_args(extra: &[&str]) -> TrainArgs {
        let mut argv = vec!["stemscore", "train", "--manifest", "m.jsonl", "--out-dir", "o"];
        argv.extend_from_slice(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_flag_has_help() {
        let cmd = Cli::command();
        for sub in cmd.get_subcommands() {
            for arg in sub.get_arguments() {
                assert!(arg.get_help().is_some(), "{} --{} lacks help", sub.get_name(), arg.get_id());
            }
        }
    }

    #[test]
    fn zero_songs_is_a_usage_error() {
        let err = Cli::try_parse_from(["stemscore", "gen-data", "--out", "x", "--songs", "0"]).unwrap_err();
        assert!(err.use_stderr());
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "epochs = 7\nbatch_size = 4\n[model]\nhead_hidden = 9\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve_train_config(&train_args(&["--config", p, "--epochs", "3", "--bins", "3,5,9"])).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.model.head_hidden, 9);
        assert_eq!(cfg.model.bins, GranularitySpec::HUNDRED_POINT);
        assert_eq!(cfg.hop, TrainConfig::default().hop);
    }

    #[test]
    fn ablation_flags() {
        let cfg = resolve_train_config(&train_args(&["--no-msaf", "--no-higia"])).unwrap();
        assert!(!cfg.model.msaf && !cfg.model.higia);
    }

    #[test]
    fn written_config_reads_back() {
        let cfg = resolve_train_config(&train_args(&["--pooling", "mean-max", "--lr", "0.001"])).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_bins_rejected_at_parse_time() {
        let argv = ["stemscore", "train", "--manifest", "m", "--out-dir", "o", "--bins", "4,2,8"];
        assert!(Cli::try_parse_from(argv).is_err());
    }
}
