//! Spectrogram augmentation: time stretching and chunked time/frequency masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;

/// Frames in a 10 s chunk of audio, `floor(10 * 22050 / 256) + 1`.
pub const CHUNK_FRAMES: usize = 862;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub stretch_factors: Vec<f64>,
    /// Widest time mask, in frames.
    pub max_time_mask: usize,
    /// Widest frequency mask, in mel bins.
    pub max_freq_mask: usize,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            stretch_factors: vec![0.95, 1.05],
            max_time_mask: 20,
            max_freq_mask: 16,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.stretch_factors.iter().find(|f| !(**f > 0.5 && **f < 2.0)) {
            return Err(Error::Config(format!("stretch factor {f} outside (0.5, 2.0)")));
        }
        if self.max_freq_mask >= crate::N_MELS {
            return Err(Error::Config("frequency mask must be narrower than the mel axis".into()));
        }
        Ok(())
    }
}

/// Resamples the time axis by linear interpolation; frequency rows are untouched.
///
/// A factor above 1 shortens the matrix (faster playback).
pub fn time_stretch(m: &FeatureMatrix, factor: f64) -> FeatureMatrix {
    assert!(factor > 0.0, "stretch factor must be positive");
    if factor == 1.0 || m.cols < 2 {
        return m.clone();
    }
    let out_cols = ((m.cols as f64 / factor).round() as usize).max(1);
    let last = (m.cols - 1) as f64;
    let taps: Vec<(usize, f64)> = (0..out_cols)
        .map(|j| {
            let pos = (j as f64 * factor).min(last);
            let lo = (pos.floor() as usize).min(m.cols - 2);
            (lo, pos - lo as f64)
        })
        .collect();
    let mut values = Vec::with_capacity(m.rows * out_cols);
    for r in 0..m.rows {
        let row = m.row(r);
        values.extend(taps.iter().map(|&(lo, frac)| {
            if frac == 0.0 {
                row[lo]
            } else {
                row[lo] + frac * (row[lo + 1] - row[lo])
            }
        }));
    }
    FeatureMatrix::new(m.rows, out_cols, values, m.scaling)
}

/// A masked band: `width` consecutive indices from `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub start: usize,
    pub width: usize,
}

fn draw_band<R: Rng>(extent: usize, max_width: usize, rng: &mut R) -> Band {
    let max_width = max_width.min(extent.saturating_sub(1));
    let width = rng.gen_range(0..=max_width);
    let start = rng.gen_range(0..=extent - width);
    Band { start, width }
}

pub fn apply_time_mask(m: &mut FeatureMatrix, band: Band) {
    let fill = m.scaling.silence_value();
    for r in 0..m.rows {
        for c in band.start..band.start + band.width {
            m.set(r, c, fill);
        }
    }
}

pub fn apply_freq_mask(m: &mut FeatureMatrix, band: Band) {
    let fill = m.scaling.silence_value();
    let cols = m.cols;
    m.values[band.start * cols..(band.start + band.width) * cols].fill(fill);
}

/// Silences a random run of frames, width uniform in `0..=max_width`.
pub fn time_mask<R: Rng>(m: &FeatureMatrix, max_width: usize, rng: &mut R) -> (FeatureMatrix, Band) {
    let band = draw_band(m.cols, max_width, rng);
    let mut out = m.clone();
    apply_time_mask(&mut out, band);
    (out, band)
}

/// Silences a random run of mel bins, width uniform in `0..=max_width`.
pub fn freq_mask<R: Rng>(m: &FeatureMatrix, max_width: usize, rng: &mut R) -> (FeatureMatrix, Band) {
    let band = draw_band(m.rows, max_width, rng);
    let mut out = m.clone();
    apply_freq_mask(&mut out, band);
    (out, band)
}

/// Generator for one (variant, chunk) pair, independent of processing order.
pub fn chunk_rng(seed: u64, variant: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((variant << 32) | chunk);
    rng
}

/// Applies one mask per 10 s chunk and stitches the chunks back together.
fn masked_variant(
    m: &FeatureMatrix,
    seed: u64,
    variant: u64,
    mask: impl Fn(&FeatureMatrix, &mut ChaCha8Rng) -> FeatureMatrix,
) -> FeatureMatrix {
    let chunks: Vec<FeatureMatrix> = (0..m.cols)
        .step_by(CHUNK_FRAMES)
        .enumerate()
        .map(|(i, start)| {
            let chunk = m.columns(start, (start + CHUNK_FRAMES).min(m.cols));
            mask(&chunk, &mut chunk_rng(seed, variant, i as u64))
        })
        .collect();
    if chunks.is_empty() {
        return m.clone();
    }
    FeatureMatrix::hconcat(&chunks)
}

/// Materialises the augmented copies of one feature matrix:
/// `[time-masked, frequency-masked, stretched per factor...]`.
pub fn augment_chunked(m: &FeatureMatrix, cfg: &AugmentConfig) -> Vec<FeatureMatrix> {
    let mut out = Vec::with_capacity(2 + cfg.stretch_factors.len());
    out.push(masked_variant(m, cfg.rng_seed, 0, |c, rng| time_mask(c, cfg.max_time_mask, rng).0));
    out.push(masked_variant(m, cfg.rng_seed, 1, |c, rng| freq_mask(c, cfg.max_freq_mask, rng).0));
    for &f in &cfg.stretch_factors {
        out.push(time_stretch(m, f));
    }
    out
}
