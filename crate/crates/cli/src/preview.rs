//! `protoshot augment-preview`: grayscale images of the representations and augmentations.

use std::path::{Path, PathBuf};

use protoshot_core::audio_io::{ingest, load_wav};
use protoshot_core::augment::{chunk_rng, freq_mask, time_mask, time_stretch, CHUNK_FRAMES};
use protoshot_core::frontend::{apply_scaling, log_scale, mel_spectrogram, pcen};
use protoshot_core::{FeatureMatrix, MelFilterbank, PipelineConfig};

use crate::error::{CliError, CliResult};

/// Renders `m` with low frequencies at the bottom, min-max scaled to 8 bits.
pub fn to_gray(m: &FeatureMatrix) -> Vec<u8> {
    let (lo, hi) = m
        .values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut px = Vec::with_capacity(m.rows * m.cols);
    for r in (0..m.rows).rev() {
        px.extend(m.row(r).iter().map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    px
}

pub fn write_png(path: &Path, m: &FeatureMatrix) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(CliError::io(path))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), m.cols as u32, m.rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| CliError::Data(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&to_gray(m)).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Both masks applied per 10 s chunk, for display only.
fn masked(m: &FeatureMatrix, cfg: &PipelineConfig) -> FeatureMatrix {
    let chunks: Vec<FeatureMatrix> = (0..m.cols)
        .step_by(CHUNK_FRAMES)
        .enumerate()
        .map(|(i, start)| {
            let mut rng = chunk_rng(cfg.augment.rng_seed, 2, i as u64);
            let chunk = m.columns(start, (start + CHUNK_FRAMES).min(m.cols));
            let (t, _) = time_mask(&chunk, cfg.augment.max_time_mask, &mut rng);
            freq_mask(&t, cfg.augment.max_freq_mask, &mut rng).0
        })
        .collect();
    FeatureMatrix::hconcat(&chunks)
}

/// Writes `logmel.png`, `pcen.png`, `stretched.png` and `masked.png` into `out`. The
/// last two use the configured representation and the first stretch factor.
pub fn cmd_augment_preview(wav: &Path, out: &Path, cfg: &PipelineConfig) -> CliResult<Vec<PathBuf>> {
    let w = ingest(&load_wav(wav)?)?;
    let mel = mel_spectrogram(&w, &MelFilterbank::default())?;
    let scaled = apply_scaling(&mel, cfg.scaling, &cfg.pcen)?;
    let factor = cfg.augment.stretch_factors.first().copied().unwrap_or(1.0);
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let panels = [
        ("logmel.png", log_scale(&mel)),
        ("pcen.png", pcen(&mel, &cfg.pcen)?),
        ("stretched.png", time_stretch(&scaled, factor)),
        ("masked.png", masked(&scaled, cfg)),
    ];
    let mut written = Vec::new();
    for (name, m) in &panels {
        let path = out.join(name);
        write_png(&path, m)?;
        written.push(path);
    }
    Ok(written)
}
