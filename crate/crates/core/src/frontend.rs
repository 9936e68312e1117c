//! Mel spectrogram front-end with log or PCEN scaling, and the binary feature cache.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};
use crate::{HOP, N_FFT, N_MELS, SAMPLE_RATE};

/// Floor added before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-10;
const N_BINS: usize = N_FFT / 2 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    LinearPower,
    Log,
    Pcen,
}

impl Scaling {
    /// The value a bin takes when it holds no energy.
    pub fn silence_value(self) -> f64 {
        match self {
            Scaling::LinearPower | Scaling::Pcen => 0.0,
            Scaling::Log => LOG_FLOOR.ln(),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Scaling::LinearPower => 0,
            Scaling::Log => 1,
            Scaling::Pcen => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Scaling::LinearPower),
            1 => Some(Scaling::Log),
            2 => Some(Scaling::Pcen),
            _ => None,
        }
    }
}

/// A spectrogram-like matrix: `rows` frequency bins by `cols` frames, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub scaling: Scaling,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, scaling: Scaling) -> Self {
        assert_eq!(values.len(), rows * cols, "feature matrix size");
        FeatureMatrix { rows, cols, values, scaling }
    }

    pub fn filled(rows: usize, cols: usize, value: f64, scaling: Scaling) -> Self {
        FeatureMatrix { rows, cols, values: vec![value; rows * cols], scaling }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Seconds per column.
    pub fn frame_hop_s(&self) -> f64 {
        crate::hop_seconds()
    }

    /// Columns `[start, end)`.
    pub fn columns(&self, start: usize, end: usize) -> FeatureMatrix {
        assert!(start <= end && end <= self.cols);
        let width = end - start;
        let mut values = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            values.extend_from_slice(&self.values[r * self.cols + start..r * self.cols + end]);
        }
        FeatureMatrix::new(self.rows, width, values, self.scaling)
    }

    /// Joins matrices with equal row counts side by side.
    pub fn hconcat(parts: &[FeatureMatrix]) -> FeatureMatrix {
        let rows = parts.first().map_or(0, |p| p.rows);
        let scaling = parts.first().map_or(Scaling::LinearPower, |p| p.scaling);
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                assert_eq!(p.rows, rows);
                values.extend_from_slice(p.row(r));
            }
        }
        FeatureMatrix::new(rows, cols, values, scaling)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a reflect-padded signal (edge sample not repeated).
fn reflect(i: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as i64 {
        j = period - j;
    }
    j as usize
}

/// Power spectrogram `|STFT|^2`, 513 rows by `floor(len / 256) + 1` frames.
///
/// Hann window of 1024 samples, hop 256, reflect-padded so frame `t` is centred on
/// sample `t * 256`.
pub fn stft_power(w: &Waveform) -> Result<FeatureMatrix> {
    if w.samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let len = w.samples.len();
    let frames = len / HOP + 1;
    let window = hann(N_FFT);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut out = vec![0.0; N_BINS * frames];
    let pad = (N_FFT / 2) as i64;

    for t in 0..frames {
        let start = (t * HOP) as i64 - pad;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = w.samples[reflect(start + i as i64, len)];
            *slot = Complex::new(x * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(N_BINS).enumerate() {
            out[k * frames + t] = c.norm_sqr();
        }
    }
    Ok(FeatureMatrix::new(N_BINS, frames, out, Scaling::LinearPower))
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-scale filters, area-normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// `n_mels x n_bins`, row-major.
    pub weights: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
    /// Nonzero column range of each row.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, rate: u32) -> Self {
        build_mel_filterbank(n_mels, n_fft, rate)
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Centre frequency of each filter in Hz.
    pub fn centers(&self) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.f_min), hz_to_mel(self.f_max));
        (1..=self.n_mels)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64))
            .collect()
    }
}

impl Default for MelFilterbank {
    fn default() -> Self {
        build_mel_filterbank(N_MELS, N_FFT, SAMPLE_RATE)
    }
}

pub fn build_mel_filterbank(n_mels: usize, n_fft: usize, rate: u32) -> MelFilterbank {
    let n_bins = n_fft / 2 + 1;
    let f_min = 0.0;
    let f_max = rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins).map(|k| k as f64 * rate as f64 / n_fft as f64).collect();

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut spans = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let half_bandwidth = (right - left) / 2.0;
        let mut first = n_bins;
        let mut last = 0;
        for (k, &f) in bin_hz.iter().enumerate() {
            let rising = (f - left) / (centre - left);
            let falling = (right - f) / (right - centre);
            let w = rising.min(falling).max(0.0);
            if w > 0.0 {
                weights[m * n_bins + k] = w / half_bandwidth;
                first = first.min(k);
                last = k + 1;
            }
        }
        spans.push(if first < last { (first, last) } else { (0, 0) });
    }
    MelFilterbank { n_mels, n_bins, weights, f_min, f_max, spans }
}

/// Projects a power spectrogram onto the mel filters.
pub fn mel_from_power(power: &FeatureMatrix, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    if power.rows != fb.n_bins {
        return Err(Error::ShapeMismatch(format!(
            "power has {} bins, filterbank expects {}",
            power.rows, fb.n_bins
        )));
    }
    let frames = power.cols;
    let mut out = vec![0.0; fb.n_mels * frames];
    for m in 0..fb.n_mels {
        let (a, b) = fb.spans[m];
        let dst = &mut out[m * frames..(m + 1) * frames];
        for k in a..b {
            let w = fb.weights[m * fb.n_bins + k];
            for (o, p) in dst.iter_mut().zip(power.row(k)) {
                *o += w * p;
            }
        }
    }
    Ok(FeatureMatrix::new(fb.n_mels, frames, out, Scaling::LinearPower))
}

pub fn mel_spectrogram(w: &Waveform, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    mel_from_power(&stft_power(w)?, fb)
}

/// Elementwise `ln(v + 1e-10)`.
pub fn log_scale(m: &FeatureMatrix) -> FeatureMatrix {
    debug_assert_eq!(m.scaling, Scaling::LinearPower);
    FeatureMatrix {
        rows: m.rows,
        cols: m.cols,
        values: m.values.iter().map(|v| (v + LOG_FLOOR).ln()).collect(),
        scaling: Scaling::Log,
    }
}

/// Constants of the per-channel energy normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcenParams {
    /// Smoother coefficient `s`.
    pub smoothing: f64,
    /// Gain exponent `alpha`.
    pub gain: f64,
    /// Bias `delta`.
    pub bias: f64,
    /// Root `r`.
    pub power: f64,
    /// Floor `eps`.
    pub eps: f64,
}

impl Default for PcenParams {
    fn default() -> Self {
        PcenParams { smoothing: 0.025, gain: 0.98, bias: 2.0, power: 0.5, eps: 1e-6 }
    }
}

impl PcenParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.smoothing > 0.0
            && self.smoothing <= 1.0
            && (0.0..=1.0).contains(&self.gain)
            && self.bias > 0.0
            && self.power > 0.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("PCEN constants out of range: {self:?}")))
        }
    }

    /// Output for a single energy value given its smoothed energy.
    #[inline]
    pub fn map(&self, energy: f64, smoothed: f64) -> f64 {
        (energy / (self.eps + smoothed).powf(self.gain) + self.bias).powf(self.power)
            - self.bias.powf(self.power)
    }
}

/// PCEN over one channel's energies in time order.
pub fn pcen_channel(energy: &[f64], p: &PcenParams) -> Vec<f64> {
    let mut smoothed = match energy.first() {
        Some(&e) => e,
        None => return Vec::new(),
    };
    energy
        .iter()
        .enumerate()
        .map(|(t, &e)| {
            if t > 0 {
                smoothed = (1.0 - p.smoothing) * smoothed + p.smoothing * e;
            }
            p.map(e, smoothed)
        })
        .collect()
}

/// Per-channel energy normalisation of a linear-power mel matrix.
pub fn pcen(m: &FeatureMatrix, p: &PcenParams) -> Result<FeatureMatrix> {
    p.validate()?;
    debug_assert_eq!(m.scaling, Scaling::LinearPower);
    let mut values = Vec::with_capacity(m.values.len());
    for r in 0..m.rows {
        values.extend(pcen_channel(m.row(r), p));
    }
    Ok(FeatureMatrix::new(m.rows, m.cols, values, Scaling::Pcen))
}

/// Scales a linear-power mel matrix with the chosen front-end.
pub fn apply_scaling(m: &FeatureMatrix, scaling: Scaling, p: &PcenParams) -> Result<FeatureMatrix> {
    match scaling {
        Scaling::LinearPower => Ok(m.clone()),
        Scaling::Log => Ok(log_scale(m)),
        Scaling::Pcen => pcen(m, p),
    }
}

/// The whole front-end: resample, normalise, mel, scale.
pub fn extract(
    w: &Waveform,
    fb: &MelFilterbank,
    scaling: Scaling,
    p: &PcenParams,
) -> Result<FeatureMatrix> {
    let w = crate::audio_io::ingest(w)?;
    let mel = mel_spectrogram(&w, fb)?;
    let out = apply_scaling(&mel, scaling, p)?;
    if !out.is_finite() {
        return Err(Error::NumericFailure(format!("features of {}", w.source_path)));
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 4] = b"PSFC";
const CACHE_VERSION: u16 = 1;

pub fn write_cache<W: Write>(mut out: W, m: &FeatureMatrix) -> Result<()> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&(m.rows as u32).to_le_bytes())?;
    out.write_all(&(m.cols as u32).to_le_bytes())?;
    out.write_all(&[m.scaling.tag()])?;
    let mut bytes = Vec::with_capacity(m.values.len() * 4);
    for v in &m.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_cache<R: Read>(mut input: R) -> Result<FeatureMatrix> {
    let mut header = [0u8; 15];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::BadCache("truncated header".into()))?;
    if &header[..4] != CACHE_MAGIC {
        return Err(Error::BadCache("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != CACHE_VERSION {
        return Err(Error::BadCache(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
    let scaling = Scaling::from_tag(header[14])
        .ok_or_else(|| Error::BadCache(format!("unknown scaling tag {}", header[14])))?;
    let mut bytes = vec![0u8; rows * cols * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| Error::BadCache("truncated payload".into()))?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::BadCache("trailing bytes".into()));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureMatrix::new(rows, cols, values, scaling))
}

pub fn save_cache(path: impl AsRef<Path>, m: &FeatureMatrix) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_cache(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let file = std::fs::File::open(path)?;
    read_cache(std::io::BufReader::new(file))
}
