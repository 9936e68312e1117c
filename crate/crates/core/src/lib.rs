//! Few-shot bioacoustic sound event detection.
//!
//! The pipeline runs from raw WAV files to scored event lists:
//!
//! * [`audio_io`]: WAV ingestion, resampling to 22.05 kHz, peak normalisation.
//! * [`frontend`]: STFT, 128-bin mel filterbank, log or PCEN scaling, feature caches.
//! * [`augment`]: time stretching and chunked time/frequency masking.
//! * [`dataset`]: annotation parsing, segmentation, oversampling, episode sampling.
//! * [`tensornet`]: the three-block convolutional encoder with hand-written gradients,
//!   SGD with momentum and a reduce-on-plateau scheduler.
//! * [`protonet`]: prototypes, the episodic loss, training and few-shot inference.
//! * [`events`]: thresholding, median filtering, edge detection and duration pruning.
//! * [`evalmetrics`]: IoU event matching and precision/recall/F-measure.
//! * [`config`]: the pipeline configuration and the hash tying checkpoints and caches to it.

pub mod audio_io;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalmetrics;
pub mod events;
pub mod frontend;
pub mod protonet;
pub mod tensornet;

pub use audio_io::Waveform;
pub use config::PipelineConfig;
pub use dataset::{Annotation, Episode, Label, Segment};
pub use error::{Error, Result};
pub use events::EventList;
pub use evalmetrics::ScoreReport;
pub use frontend::{FeatureMatrix, MelFilterbank, Scaling};
pub use tensornet::{EncoderModel, Tensor4};

/// Sample rate every waveform is resampled to before feature extraction.
pub const SAMPLE_RATE: u32 = 22050;
/// FFT size of the short-time Fourier transform.
pub const N_FFT: usize = 1024;
/// Hop between STFT frames, in samples.
pub const HOP: usize = 256;
/// Number of mel bins.
pub const N_MELS: usize = 128;

/// Duration of one feature frame in seconds.
pub fn hop_seconds() -> f64 {
    HOP as f64 / SAMPLE_RATE as f64
}
