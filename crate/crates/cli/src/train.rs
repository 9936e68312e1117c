//! `protoshot train`: segment pools from cached features, episodic training, checkpoint.

use std::io::Write;
use std::path::{Path, PathBuf};

use protoshot_core::augment::augment_chunked;
use protoshot_core::dataset::{oversample, parse_annotations, segment_events, Annotation, Pool};
use protoshot_core::protonet::{train, write_metrics_row, EpochRecord, METRICS_HEADER};
use protoshot_core::tensornet::{save_checkpoint, Checkpoint, CheckpointMeta};
use protoshot_core::{EncoderModel, FeatureMatrix, PipelineConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};
use crate::features::{load_fresh, par_map};
use crate::manifest::{FileEntry, Manifest};

/// Class name under which background windows are pooled.
pub const NEGATIVE_CLASS: &str = "negative";
/// Without a `val` subset, segments starting in the last fifth of each file validate.
pub const HOLDOUT_FRACTION: f64 = 0.2;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

/// One annotated feature matrix ready for segmentation.
struct Labelled {
    tag: String,
    matrix: FeatureMatrix,
    annotations: Vec<Annotation>,
}

fn class_names(anns: &[Annotation]) -> Vec<String> {
    let mut names: Vec<String> = anns.iter().flat_map(|a| a.labels.keys().cloned()).collect();
    names.sort();
    names.dedup();
    names
}

fn label_file(entry: &FileEntry, manifest: &Manifest, cfg: &PipelineConfig) -> CliResult<Labelled> {
    let csv = entry
        .csv
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("{} has no annotation CSV", entry.wav.display())))?;
    let matrix = load_fresh(&entry.wav, &manifest.cache_path(&entry.wav), cfg)?;
    Ok(Labelled {
        tag: entry.wav.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        matrix,
        annotations: parse_annotations(csv)?,
    })
}

/// The original matrix followed by its augmented copies (when enabled), with
/// annotations rescaled for stretched variants.
fn variants(l: Labelled, cfg: &PipelineConfig) -> Vec<Labelled> {
    if !cfg.use_augmentation {
        return vec![l];
    }
    let mut aug = cfg.augment.clone();
    aug.rng_seed = cfg.augment.rng_seed ^ fnv1a(l.tag.as_bytes());
    let copies = augment_chunked(&l.matrix, &aug);
    let mut out = Vec::with_capacity(1 + copies.len());
    let names = ["tmask", "fmask"];
    for (i, m) in copies.into_iter().enumerate() {
        let (tag, scale) = match names.get(i) {
            Some(n) => (format!("{}#{n}", l.tag), 1.0),
            None => {
                let f = cfg.augment.stretch_factors[i - names.len()];
                (format!("{}#stretch{f}", l.tag), 1.0 / f)
            }
        };
        let annotations = l.annotations.iter().map(|a| a.scaled(scale)).collect();
        out.push(Labelled { tag, matrix: m, annotations });
    }
    out.insert(0, l);
    out
}

/// Stable per-file salt for augmentation seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Adds every class's positives and the background negatives of `l` to the pools.
/// `holdout` routes segments starting at or after that frame to `val` (or drops them
/// when `val` is `None`).
fn add_segments(l: &Labelled, width: usize, train: &mut Pool, mut val: Option<&mut Pool>, holdout: usize) {
    let classes = class_names(&l.annotations);
    let mut negatives_done = false;
    for class in &classes {
        let seg = segment_events(&l.matrix, &l.annotations, width, class, &l.tag);
        let mut route = |name: &str, segs: Vec<protoshot_core::Segment>| {
            let (keep, held): (Vec<_>, Vec<_>) = segs.into_iter().partition(|s| s.source.start_frame < holdout);
            train.extend(name, keep);
            if let Some(v) = val.as_deref_mut() {
                v.extend(name, held);
            }
        };
        route(class, seg.positive);
        if !negatives_done {
            route(NEGATIVE_CLASS, seg.negative);
            negatives_done = true;
        }
    }
}

/// Training and validation pools for a manifest.
pub fn build_pools(manifest: &Manifest, cfg: &PipelineConfig, workers: usize) -> CliResult<(Pool, Pool)> {
    let train_set =
        manifest.subset("train").ok_or_else(|| CliError::Data("manifest has no \"train\" subset".into()))?;
    let load = |files: &[FileEntry]| -> CliResult<Vec<Labelled>> {
        par_map(files, workers, |e| label_file(e, manifest, cfg)).into_iter().collect()
    };
    let width = cfg.segment_width;
    let mut train_pool = Pool::new();
    let mut val_pool = Pool::new();
    let explicit_val = manifest.subset("val");
    for l in load(&train_set.files)? {
        for (i, v) in variants(l, cfg).into_iter().enumerate() {
            match explicit_val {
                Some(_) => add_segments(&v, width, &mut train_pool, None, usize::MAX),
                None => {
                    let cut = ((1.0 - HOLDOUT_FRACTION) * v.matrix.cols as f64) as usize;
                    let val = (i == 0).then_some(&mut val_pool);
                    add_segments(&v, width, &mut train_pool, val, cut);
                }
            }
        }
    }
    if let Some(val) = explicit_val {
        for l in load(&val.files)? {
            add_segments(&l, width, &mut val_pool, None, usize::MAX);
        }
    }
    Ok((train_pool, val_pool))
}

fn describe(pool: &Pool) -> String {
    pool.counts().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains an encoder on the manifest's `train` subset and writes `model.ckpt` and
/// `metrics.csv` to `out`.
pub fn cmd_train(manifest_path: &Path, cfg: &PipelineConfig, out: &Path, workers: usize) -> CliResult<TrainSummary> {
    let manifest = Manifest::load(manifest_path)?;
    let (train_pool, val_pool) = build_pools(&manifest, cfg, workers)?;
    eprintln!("train segments: {}", describe(&train_pool));
    eprintln!("val segments: {}", describe(&val_pool));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let oversampled = oversample(&train_pool, &mut rng).map_err(|e| with_counts(e, &train_pool, &val_pool))?;

    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let metrics = out.join(METRICS_FILE);
    let mut csv = std::fs::File::create(&metrics).map_err(CliError::io(&metrics))?;
    writeln!(csv, "{METRICS_HEADER}").map_err(CliError::io(&metrics))?;

    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    let model = EncoderModel::<f32>::new(cfg.seed);
    let outcome = train(model, &oversampled, &val_pool, &tc, |r| {
        eprintln!("epoch {:>3}  train {:.4}  val {:.4}  lr {}", r.epoch, r.train_loss, r.val_loss, r.lr);
        write_metrics_row(&mut csv, r)?;
        Ok(())
    })
    .map_err(|e| with_counts(e, &train_pool, &val_pool))?;

    let checkpoint = out.join(CHECKPOINT_FILE);
    let ckpt = Checkpoint {
        model: outcome.best,
        meta: CheckpointMeta {
            epoch: outcome.best_epoch,
            rng_seed: cfg.seed,
            learning_rate: outcome.final_lr,
            momentum: tc.momentum,
            scheduler: outcome.scheduler,
            val_loss: outcome.best_val_loss.is_finite().then_some(outcome.best_val_loss),
            config_hash: cfg.model_hash(),
        },
    };
    save_checkpoint(&checkpoint, &ckpt)?;
    Ok(TrainSummary {
        checkpoint,
        metrics,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
    })
}

/// Adds both pools' class counts to data-shortage errors.
fn with_counts(e: protoshot_core::Error, train: &Pool, val: &Pool) -> protoshot_core::Error {
    match e {
        protoshot_core::Error::InsufficientData(msg) => protoshot_core::Error::InsufficientData(format!(
            "{msg}; train segments per class: {}; val segments per class: {}",
            describe(train),
            describe(val)
        )),
        other => other,
    }
}
