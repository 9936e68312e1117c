//! Feature extraction with on-disk caching, and the worker pool that runs it per file.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use protoshot_core::audio_io::load_wav;
use protoshot_core::frontend::{extract, load_cache, save_cache};
use protoshot_core::{FeatureMatrix, MelFilterbank, PipelineConfig};

use crate::error::{CliError, CliResult};

/// Runs the front end on one WAV file.
pub fn compute(wav: &Path, cfg: &PipelineConfig) -> CliResult<FeatureMatrix> {
    let w = load_wav(wav)?;
    Ok(extract(&w, &MelFilterbank::default(), cfg.scaling, &cfg.pcen)?)
}

/// The sidecar holding the configuration hash a cache was built with.
pub fn hash_path(cache: &Path) -> PathBuf {
    let mut s = cache.as_os_str().to_owned();
    s.push(".hash");
    PathBuf::from(s)
}

/// Whether `cache` exists and was built with the current front-end settings.
pub fn cache_is_fresh(cache: &Path, cfg: &PipelineConfig) -> bool {
    cache.exists()
        && std::fs::read_to_string(hash_path(cache)).is_ok_and(|h| h.trim() == cfg.feature_hash())
}

/// Loads `cache` when fresh, otherwise computes and stores it. Returns the matrix and
/// whether it was recomputed.
pub fn load_or_compute(wav: &Path, cache: &Path, cfg: &PipelineConfig) -> CliResult<(FeatureMatrix, bool)> {
    if cache_is_fresh(cache, cfg) {
        return Ok((load_cache(cache)?, false));
    }
    let m = compute(wav, cfg)?;
    if let Some(dir) = cache.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    save_cache(cache, &m)?;
    let sidecar = hash_path(cache);
    std::fs::write(&sidecar, cfg.feature_hash() + "\n").map_err(CliError::io(&sidecar))?;
    Ok((m, true))
}

/// Loads a cache that must already exist and match the configuration.
pub fn load_fresh(wav: &Path, cache: &Path, cfg: &PipelineConfig) -> CliResult<FeatureMatrix> {
    if !cache.exists() {
        return Err(CliError::Data(format!(
            "no feature cache for {} (expected {}); run `protoshot featurize` first",
            wav.display(),
            cache.display()
        )));
    }
    if !cache_is_fresh(cache, cfg) {
        return Err(CliError::Data(format!(
            "feature cache {} was built with different front-end settings; rerun `protoshot featurize`",
            cache.display()
        )));
    }
    Ok(load_cache(cache)?)
}

/// Default worker count: the available parallelism.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Maps `f` over `items` on up to `workers` threads; results keep the input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every item mapped")).collect()
}
