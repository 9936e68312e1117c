//! Deterministic inputs shared by the benchmarks.

use protoshot_core::{Tensor4, Waveform, SAMPLE_RATE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `seconds` of uniform noise at the working sample rate.
pub fn noise(seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    Waveform::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(), SAMPLE_RATE)
}

/// A uniform random tensor in `[-1, 1)`.
pub fn tensor(dims: [usize; 4], seed: u64) -> Tensor4<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4 { dims, data: (0..dims.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect() }
}
