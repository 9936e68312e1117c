//! WAV ingestion, band-limited resampling and peak normalisation.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Mono audio at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_path: String,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate, source_path: String::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }
}

/// Sample encodings accepted by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Reads a PCM16 or float32 WAV file, averaging all channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav { path: path.into(), reason: "zero channels".into() });
    }
    if spec.sample_rate == 0 {
        return Err(Error::MalformedWav { path: path.into(), reason: "zero sample rate".into() });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding {
                path: path.into(),
                reason: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };

    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect::<Vec<_>>();
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::MalformedWav { path: path.into(), reason: "non-finite sample".into() });
    }

    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
        source_path: path.display().to_string(),
    })
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    let path: PathBuf = path.into();
    match err {
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding { path, reason: "not PCM or IEEE float".into() }
        }
        other => Error::MalformedWav { path, reason: other.to_string() },
    }
}

/// Writes a mono waveform. Samples are clipped to [-1, 1] for PCM16.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let path = path.as_ref();
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::MalformedWav { path: path.into(), reason: other.to_string() },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &w.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(to_io)?;
            }
            WavEncoding::Float32 => writer.write_sample(s as f32).map_err(to_io)?,
        }
    }
    writer.finalize().map_err(to_io)?;
    Ok(())
}

/// Scales so that the largest absolute sample is exactly 1. Silence is returned unchanged.
pub fn peak_normalise(w: &Waveform) -> Waveform {
    let peak = w.peak();
    if peak == 0.0 {
        return w.clone();
    }
    Waveform {
        samples: w.samples.iter().map(|s| s / peak).collect(),
        sample_rate: w.sample_rate,
        source_path: w.source_path.clone(),
    }
}

const TAPS: usize = 64;
const KAISER_BETA: f64 = 8.0;
const CUTOFF: f64 = 0.95;
/// Above this many phases the kernel is evaluated per output sample instead of tabulated.
const MAX_TABLE_PHASES: u64 = 4096;

/// Band-limited resampling with a Kaiser-windowed sinc kernel of 64 taps.
///
/// The cutoff sits at 0.95 of the lower Nyquist frequency. Every kernel phase is
/// normalised to unit sum and samples beyond the ends are held at the edge value, so
/// constant signals pass through exactly.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if w.sample_rate == target_rate || w.samples.is_empty() {
        let mut out = w.clone();
        out.sample_rate = target_rate;
        if w.sample_rate != target_rate {
            out.samples.clear();
        }
        return Ok(out);
    }

    let src = w.sample_rate as u64;
    let dst = target_rate as u64;
    let g = gcd(src, dst);
    let up = dst / g;
    let down = src / g;
    let out_len = ((w.samples.len() as f64) * dst as f64 / src as f64).round() as usize;
    // Cycles per input sample.
    let fc = 0.5 * CUTOFF * (dst as f64 / src as f64).min(1.0);

    let table = (up <= MAX_TABLE_PHASES).then(|| {
        (0..up)
            .map(|phase| kernel(phase as f64 / up as f64, fc))
            .collect::<Vec<_>>()
    });

    let x = &w.samples;
    let last = x.len() as i64 - 1;
    let half = (TAPS / 2) as i64;
    let mut samples = Vec::with_capacity(out_len);
    let mut scratch;
    for j in 0..out_len as u64 {
        let pos = j * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let taps: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                scratch = kernel(phase as f64 / up as f64, fc);
                &scratch
            }
        };
        let mut acc = 0.0;
        for (i, h) in taps.iter().enumerate() {
            let k = (base - (half - 1) + i as i64).clamp(0, last);
            acc += h * x[k as usize];
        }
        samples.push(acc);
    }

    Ok(Waveform { samples, sample_rate: target_rate, source_path: w.source_path.clone() })
}

/// Kernel taps for an output lying `frac` samples past input index `base`;
/// tap `i` multiplies input `base - 31 + i`.
fn kernel(frac: f64, fc: f64) -> Vec<f64> {
    let half = (TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let mut taps: Vec<f64> = (0..TAPS)
        .map(|i| {
            let dist = frac + (half - 1.0) - i as f64;
            let r = dist / half;
            let window = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
            };
            2.0 * fc * sinc(2.0 * fc * dist) * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Resample to the pipeline rate, then peak-normalise.
pub fn ingest(w: &Waveform) -> Result<Waveform> {
    Ok(peak_normalise(&resample(w, crate::SAMPLE_RATE)?))
}
