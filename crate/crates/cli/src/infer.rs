//! `protoshot infer`: five-shot detection on one recording.

use std::path::Path;

use protoshot_core::dataset::{parse_annotations, Annotation};
use protoshot_core::events::{postprocess, write_events_csv};
use protoshot_core::protonet::{detect, InferenceTask, SHOTS};
use protoshot_core::tensornet::load_checkpoint;
use protoshot_core::{Error, EventList, PipelineConfig};

use crate::error::{CliError, CliResult};
use crate::features::compute;

/// The POS rows of `shots_csv` that belong to `file` (all rows when none name it).
/// With `first_five`, later rows are ignored; otherwise exactly five are required.
pub fn select_shots(anns: Vec<Annotation>, file: &str, first_five: bool) -> CliResult<Vec<Annotation>> {
    let named = anns.iter().any(|a| a.audio_file == file);
    let mut pos: Vec<Annotation> = anns.into_iter().filter(|a| a.is_pos() && (!named || a.audio_file == file)).collect();
    pos.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
    if first_five {
        pos.truncate(SHOTS);
    }
    if pos.len() != SHOTS {
        return Err(Error::WrongShotCount { expected: SHOTS, found: pos.len() }.into());
    }
    Ok(pos)
}

/// Detects events of the shots' class in `wav`.
pub fn cmd_infer(
    checkpoint: &Path,
    wav: &Path,
    shots_csv: &Path,
    cfg: &PipelineConfig,
    force: bool,
    first_five: bool,
) -> CliResult<EventList> {
    let ckpt = load_checkpoint(checkpoint)?;
    let expected = cfg.model_hash();
    if ckpt.meta.config_hash != expected && !force {
        return Err(CliError::Data(format!(
            "checkpoint {} was trained with config hash {} but the current config hashes to {expected}; \
             pass --force to run anyway",
            checkpoint.display(),
            ckpt.meta.config_hash
        )));
    }
    let file = wav.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let shots = select_shots(parse_annotations(shots_csv)?, &file, first_five)?;
    let m = compute(wav, cfg)?;

    let mut task = InferenceTask::from_shots(&m, &shots, &file, cfg.seed)?;
    task.iterations = cfg.inference_iterations;
    task.threshold = cfg.threshold;
    let probs = detect(&ckpt.model, &task)?;
    Ok(postprocess(
        &file,
        &probs,
        cfg.threshold,
        cfg.median_window,
        m.frame_hop_s(),
        task.origin_frame,
        &InferenceTask::shot_durations(&shots),
    )?)
}

pub fn write_events(path: &Path, lists: &[EventList]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(CliError::io(path))?;
    write_events_csv(std::io::BufWriter::new(file), lists).map_err(CliError::io(path))
}
