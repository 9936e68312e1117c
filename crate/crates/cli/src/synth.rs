//! Synthetic recordings: tone and chirp events over pink noise, with exact annotations.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use protoshot_core::audio_io::{write_wav, WavEncoding};
use protoshot_core::dataset::{write_annotations, Annotation, Label};
use protoshot_core::{Waveform, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{FileEntry, Manifest, Subset};

/// Number of leading events copied to a file's shots CSV.
pub const SHOTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Sound {
    Tone { freq_hz: f64 },
    /// Linear frequency sweep.
    Chirp { start_hz: f64, end_hz: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFile {
    pub name: String,
    pub subset: String,
    pub class: String,
    pub duration_s: f64,
    pub sound: Sound,
    pub events: usize,
    pub min_event_s: f64,
    pub max_event_s: f64,
    /// Overrides the spec-wide SNR.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    /// Event RMS over background RMS, in dB.
    pub snr_db: f64,
    pub files: Vec<SynthFile>,
}

/// RMS of the pink background before mixing.
const NOISE_RMS: f64 = 0.05;
/// Raised-cosine attack and release of every event.
const RAMP_S: f64 = 0.01;
/// Silence kept at both ends of a file and between neighbouring events.
const MARGIN_S: f64 = 0.3;

impl SynthSpec {
    /// The acceptance benchmark: five 60 s training files of distinct tone/chirp
    /// classes and one held-out file with 20 events of a sixth class.
    pub fn benchmark(seed: u64, snr_db: f64) -> SynthSpec {
        let train = |class: &str, sound: Sound| SynthFile {
            name: format!("train/{}.wav", class.to_lowercase()),
            subset: "train".into(),
            class: class.into(),
            duration_s: 60.0,
            sound,
            events: 40,
            min_event_s: 0.2,
            max_event_s: 0.5,
            snr_db: None,
        };
        SynthSpec {
            seed,
            snr_db,
            files: vec![
                train("TONE_LOW", Sound::Tone { freq_hz: 600.0 }),
                train("TONE_MID", Sound::Tone { freq_hz: 1500.0 }),
                train("CHIRP_UP", Sound::Chirp { start_hz: 900.0, end_hz: 2400.0 }),
                train("CHIRP_DOWN", Sound::Chirp { start_hz: 3800.0, end_hz: 2000.0 }),
                train("TONE_HIGH", Sound::Tone { freq_hz: 5000.0 }),
                SynthFile {
                    name: "eval/novel.wav".into(),
                    subset: "eval".into(),
                    class: "NOVEL".into(),
                    duration_s: 60.0,
                    sound: Sound::Chirp { start_hz: 3000.0, end_hz: 4200.0 },
                    events: 20,
                    min_event_s: 0.25,
                    max_event_s: 0.5,
                    snr_db: None,
                },
            ],
        }
    }

    pub fn load(path: &Path) -> CliResult<SynthSpec> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let spec: SynthSpec =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        let nyquist = SAMPLE_RATE as f64 / 2.0;
        for f in &self.files {
            let bad = |why: &str| CliError::Data(format!("synth file {}: {why}", f.name));
            if !(f.min_event_s > 0.0 && f.min_event_s <= f.max_event_s) {
                return Err(bad("need 0 < min_event_s <= max_event_s"));
            }
            let needed = 2.0 * MARGIN_S + f.events as f64 * (f.max_event_s + MARGIN_S);
            if f.duration_s < needed {
                return Err(bad(&format!("{} events need at least {needed:.1} s", f.events)));
            }
            let freqs = match f.sound {
                Sound::Tone { freq_hz } => vec![freq_hz],
                Sound::Chirp { start_hz, end_hz } => vec![start_hz, end_hz],
            };
            if freqs.iter().any(|&hz| !(hz > 0.0 && hz < nyquist)) {
                return Err(bad("frequencies must lie in (0, 11025) Hz"));
            }
        }
        Ok(())
    }
}

/// Pink noise by Paul Kellet's economy filter over uniform white noise, scaled to `rms`.
pub fn pink_noise(n: usize, rms: f64, rng: &mut impl Rng) -> Vec<f64> {
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let white: f64 = rng.gen_range(-1.0..1.0);
            b0 = 0.99765 * b0 + white * 0.0990460;
            b1 = 0.96300 * b1 + white * 0.2965164;
            b2 = 0.57000 * b2 + white * 1.0526913;
            b0 + b1 + b2 + white * 0.1848
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n.max(1) as f64;
    let actual = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
    let scale = if actual > 0.0 { rms / actual } else { 0.0 };
    out.iter_mut().for_each(|v| *v = (*v - mean) * scale);
    out
}

fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

/// One event of `len` samples at peak amplitude `amp`.
pub fn render_event(sound: Sound, len: usize, amp: f64) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let ramp = ((RAMP_S * sr) as usize).clamp(1, len / 2);
    let dur = len as f64 / sr;
    (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let phase = match sound {
                Sound::Tone { freq_hz } => 2.0 * PI * freq_hz * t,
                Sound::Chirp { start_hz, end_hz } => {
                    2.0 * PI * (start_hz * t + 0.5 * (end_hz - start_hz) / dur * t * t)
                }
            };
            amp * envelope(i, len, ramp) * phase.sin()
        })
        .collect()
}

fn quantise(t: f64) -> f64 {
    (t * 1e4).round() / 1e4
}

/// Event times: one event per equal slot, placed at random inside it.
pub fn event_times(f: &SynthFile, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let usable = f.duration_s - 2.0 * MARGIN_S;
    let slot = usable / f.events.max(1) as f64;
    (0..f.events)
        .map(|k| {
            let dur = rng.gen_range(f.min_event_s..=f.max_event_s);
            let slack = (slot - dur - MARGIN_S).max(0.0);
            let onset = quantise(MARGIN_S + k as f64 * slot + rng.gen_range(0.0..=slack));
            (onset, quantise(onset + dur))
        })
        .collect()
}

/// A rendered file: samples (22.05 kHz) and annotations.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub wave: Waveform,
    pub events: Vec<(f64, f64)>,
}

/// Renders one file. Each file draws from its own generator stream, so files do not
/// depend on each other's order or content.
pub fn render(spec: &SynthSpec, index: usize) -> Rendered {
    let f = &spec.files[index];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let sr = SAMPLE_RATE as f64;
    let n = (f.duration_s * sr).round() as usize;
    let mut samples = pink_noise(n, NOISE_RMS, &mut rng);
    let snr = f.snr_db.unwrap_or(spec.snr_db);
    // A steady sinusoid of peak `amp` has RMS amp / sqrt(2).
    let amp = NOISE_RMS * 10f64.powf(snr / 20.0) * std::f64::consts::SQRT_2;
    let events = event_times(f, &mut rng);
    for &(on, off) in &events {
        let start = (on * sr).round() as usize;
        let end = ((off * sr).round() as usize).min(n);
        for (s, v) in samples[start..end].iter_mut().zip(render_event(f.sound, end - start, amp)) {
            *s += v;
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    Rendered { wave: Waveform::new(samples, SAMPLE_RATE), events }
}

fn annotations(file_name: &str, class: &str, events: &[(f64, f64)]) -> Vec<Annotation> {
    events
        .iter()
        .map(|&(on, off)| Annotation {
            audio_file: file_name.to_owned(),
            onset_s: on,
            offset_s: off,
            labels: [(class.to_owned(), Label::Pos)].into_iter().collect(),
        })
        .collect()
}

fn write_csv(path: &Path, class: &str, rows: &[Annotation]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(CliError::io(path))?;
    write_annotations(std::io::BufWriter::new(file), &[class.to_owned()], rows)?;
    Ok(())
}

/// Paths written for one synthetic file.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub wav: PathBuf,
    pub csv: PathBuf,
    pub shots: PathBuf,
}

/// Writes every file of `spec` under `out`: the wav, its annotation CSV, a CSV of its
/// first five events, and a `manifest.json` grouping files by subset.
pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> CliResult<Vec<SynthOutput>> {
    spec.validate()?;
    let mut outputs = Vec::new();
    let mut subsets: Vec<Subset> = Vec::new();
    for (i, f) in spec.files.iter().enumerate() {
        let rendered = render(spec, i);
        let wav = out.join(&f.name);
        if let Some(dir) = wav.parent() {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        write_wav(&wav, &rendered.wave, WavEncoding::Pcm16)?;
        let base = wav.file_name().unwrap().to_string_lossy().into_owned();
        let rows = annotations(&base, &f.class, &rendered.events);
        let csv = wav.with_extension("csv");
        write_csv(&csv, &f.class, &rows)?;
        let shots = wav.with_file_name(format!("{}_shots.csv", wav.file_stem().unwrap().to_string_lossy()));
        write_csv(&shots, &f.class, &rows[..SHOTS.min(rows.len())])?;

        let entry = FileEntry {
            wav: PathBuf::from(&f.name),
            csv: Some(PathBuf::from(&f.name).with_extension("csv")),
        };
        match subsets.iter_mut().find(|s| s.name == f.subset) {
            Some(s) => s.files.push(entry),
            None => subsets.push(Subset { name: f.subset.clone(), files: vec![entry] }),
        }
        outputs.push(SynthOutput { wav, csv, shots });
    }
    Manifest { subsets, root: out.to_owned() }.save(&out.join("manifest.json"))?;
    Ok(outputs)
}
