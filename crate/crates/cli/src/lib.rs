//! The `protoshot` command line: featurize, augment-preview, train, infer, eval, synth.
//!
//! Every command is also a plain function so tests and other tools can drive the
//! pipeline without spawning processes.

pub mod error;
pub mod eval;
pub mod features;
pub mod infer;
pub mod manifest;
pub mod preview;
pub mod synth;
pub mod train;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use protoshot_core::PipelineConfig;

pub use error::{CliError, CliResult, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "protoshot", version, about = "Few-shot bioacoustic event detection with prototypical networks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration JSON; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (training, augmentation, inference, synthesis).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-file work; defaults to the available cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Positive-frame probability threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute (or reuse) feature caches for every file in a manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write log-mel, PCEN, stretched and masked images of one recording.
    AugmentPreview {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the encoder; writes model.ckpt and metrics.csv to --out.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Detect events of the class given by five shots.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Annotation CSV holding exactly five POS rows for the file.
        #[arg(long)]
        shots: PathBuf,
        /// Events CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Run even if the checkpoint was trained under a different configuration.
        #[arg(long)]
        force: bool,
        /// Use the first five POS rows when the CSV holds more.
        #[arg(long)]
        first_five: bool,
    },
    /// Score predicted events against reference annotations.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Reference annotation CSVs; each parent directory names a subset.
        #[arg(long = "ref", required = true, num_args = 1..)]
        refs: Vec<PathBuf>,
        /// JSON report path (default: next to --pred).
        #[arg(long)]
        json: Option<PathBuf>,
        /// Also score the five exemplar events of each file.
        #[arg(long)]
        keep_shots: bool,
        #[arg(long)]
        min_iou: Option<f64>,
    },
    /// Generate synthetic recordings with exact annotations and a manifest.
    Synth {
        /// Synthesis spec JSON.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Built-in spec; `benchmark` is five training classes and one novel class.
        #[arg(long)]
        preset: Option<String>,
        /// Signal-to-noise ratio for the preset, in dB.
        #[arg(long, default_value_t = 10.0)]
        snr_db: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Loads the configuration and applies flag overrides.
pub fn resolve_config(g: &GlobalArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.augment.rng_seed = seed;
    }
    if let Some(t) = g.threshold {
        cfg.threshold = t;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn default_report_path(pred: &Path) -> PathBuf {
    pred.with_extension("report.json")
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = resolve_config(&cli.global)?;
    let workers = cli.global.workers.unwrap_or_else(features::default_workers).max(1);
    match cli.command {
        Command::Featurize { manifest } => {
            let m = manifest::Manifest::load(&manifest)?;
            let files: Vec<_> = m.all_files().cloned().collect();
            let results = features::par_map(&files, workers, |f| {
                features::load_or_compute(&f.wav, &m.cache_path(&f.wav), &cfg)
            });
            let mut failed = Vec::new();
            let mut recomputed = 0;
            for (f, r) in files.iter().zip(results) {
                match r {
                    Ok((matrix, fresh)) => {
                        recomputed += usize::from(fresh);
                        println!("{}\t{} frames\t{}", f.wav.display(), matrix.cols, if fresh { "computed" } else { "cached" });
                    }
                    Err(e) => failed.push(format!("{}: {e}", f.wav.display())),
                }
            }
            println!("{recomputed} of {} files recomputed", files.len());
            if !failed.is_empty() {
                return Err(CliError::Data(format!("{} file(s) failed:\n  {}", failed.len(), failed.join("\n  "))));
            }
        }
        Command::AugmentPreview { input, out } => {
            for p in preview::cmd_augment_preview(&input, &out, &cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train { manifest, out, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let s = train::cmd_train(&manifest, &cfg, &out, workers)?;
            println!(
                "best epoch {} (val loss {:.4}); wrote {} and {}",
                s.best_epoch,
                s.best_val_loss,
                s.checkpoint.display(),
                s.metrics.display()
            );
        }
        Command::Infer { checkpoint, wav, shots, out, force, first_five } => {
            let events = infer::cmd_infer(&checkpoint, &wav, &shots, &cfg, force, first_five)?;
            infer::write_events(&out, std::slice::from_ref(&events))?;
            println!("{} events written to {}", events.len(), out.display());
        }
        Command::Eval { pred, refs, json, keep_shots, min_iou } => {
            let opts = eval::EvalOptions { min_iou: min_iou.unwrap_or(cfg.min_iou), keep_shots };
            let report = eval::cmd_eval(&pred, &refs, &opts)?;
            print!("{}", eval::format_table(&report));
            let json = json.unwrap_or_else(|| default_report_path(&pred));
            let text = serde_json::to_string_pretty(&report).expect("report serialises");
            std::fs::write(&json, text + "\n").map_err(CliError::io(&json))?;
        }
        Command::Synth { spec, preset, snr_db, out } => {
            let seed = cli.global.seed.unwrap_or(0);
            let spec = match (spec, preset.as_deref()) {
                (Some(p), _) => {
                    let mut s = synth::SynthSpec::load(&p)?;
                    if let Some(seed) = cli.global.seed {
                        s.seed = seed;
                    }
                    s
                }
                (None, Some("benchmark")) => synth::SynthSpec::benchmark(seed, snr_db),
                (None, Some(other)) => return Err(CliError::Usage(format!("unknown preset {other:?}"))),
                (None, None) => return Err(CliError::Usage("synth needs --spec or --preset".into())),
            };
            for o in synth::cmd_synth(&spec, &out)? {
                println!("{}", o.wav.display());
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
