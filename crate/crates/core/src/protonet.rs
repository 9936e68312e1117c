//! Prototypical-network loss, episodic training and few-shot inference.

use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_episode, tile_starts, Annotation, Episode, Pool, Segment};
use crate::error::{Error, Result};
use crate::frontend::FeatureMatrix;
use crate::tensornet::{
    sgd_step, EncoderModel, Matrix, Mode, OptimizerState, Real, SchedulerState, Tensor4,
};

/// Squared Euclidean distance.
pub fn euclid_sq<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.to_f64().unwrap() - y.to_f64().unwrap();
            d * d
        })
        .sum())
}

/// A class prototype: the mean embedding of its support set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub vector: Vec<f64>,
    pub class_id: usize,
}

/// Per-class mean of the given embeddings.
pub fn prototypes<T: Real>(support: &[(usize, Vec<&[T]>)]) -> Result<Vec<Prototype>> {
    support
        .iter()
        .map(|(class_id, rows)| {
            let first = rows.first().ok_or_else(|| Error::EmptyClass(class_id.to_string()))?;
            let mut mean = vec![0.0; first.len()];
            for r in rows {
                if r.len() != mean.len() {
                    return Err(Error::DimensionMismatch(r.len(), mean.len()));
                }
                for (m, v) in mean.iter_mut().zip(r.iter()) {
                    *m += v.to_f64().unwrap();
                }
            }
            let n = rows.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            Ok(Prototype { vector: mean, class_id: *class_id })
        })
        .collect()
}

/// Row order of an episode batch: every class's support rows (class-major), then
/// every class's query rows (class-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeLayout {
    pub n_way: usize,
    pub n_shot: usize,
    pub n_query: usize,
}

impl EpisodeLayout {
    pub fn of(ep: &Episode) -> EpisodeLayout {
        EpisodeLayout {
            n_way: ep.n_way(),
            n_shot: ep.support.first().map_or(0, Vec::len),
            n_query: ep.query.first().map_or(0, Vec::len),
        }
    }

    pub fn rows(&self) -> usize {
        self.n_way * (self.n_shot + self.n_query)
    }

    pub fn support_row(&self, class: usize, shot: usize) -> usize {
        class * self.n_shot + shot
    }

    pub fn query_row(&self, class: usize, q: usize) -> usize {
        self.n_way * self.n_shot + class * self.n_query + q
    }
}

/// Loss-gradient entries below this magnitude are set to zero.
pub const GRAD_FLUSH: f64 = 1e-20;

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean over all queries of `d(q, c_true) + log sum_k exp(-d(q, c_k))`, and its
/// gradient with respect to every embedding row (support rows via the prototypes).
pub fn prototypical_loss<T: Real>(emb: &Matrix<T>, layout: EpisodeLayout) -> Result<(f64, Matrix<T>)> {
    let EpisodeLayout { n_way, n_shot, n_query } = layout;
    if emb.rows != layout.rows() {
        return Err(Error::ShapeMismatch(format!("{} embeddings for {} episode rows", emb.rows, layout.rows())));
    }
    if n_way == 0 || n_shot == 0 || n_query == 0 {
        return Err(Error::InsufficientData("empty episode".into()));
    }
    let dim = emb.cols;
    let support: Vec<(usize, Vec<&[T]>)> = (0..n_way)
        .map(|k| (k, (0..n_shot).map(|s| emb.row(layout.support_row(k, s))).collect()))
        .collect();
    let protos = prototypes(&support)?;

    let scale = 1.0 / (n_way * n_query) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; emb.rows * dim];
    let mut proto_grad = vec![vec![0.0f64; dim]; n_way];
    let mut dists = vec![0.0; n_way];
    let mut neg = vec![0.0; n_way];
    for y in 0..n_way {
        for q in 0..n_query {
            let row = layout.query_row(y, q);
            let e = emb.row(row);
            for (k, p) in protos.iter().enumerate() {
                dists[k] = e.iter().zip(&p.vector).map(|(a, c)| (a.to_f64().unwrap() - c).powi(2)).sum();
                neg[k] = -dists[k];
            }
            let lse = log_sum_exp(&neg);
            loss += scale * (dists[y] + lse);
            for k in 0..n_way {
                let prob = (neg[k] - lse).exp();
                let coeff = scale * (if k == y { 1.0 } else { 0.0 } - prob);
                if coeff == 0.0 {
                    continue;
                }
                let g = &mut grad[row * dim..(row + 1) * dim];
                for ((gi, a), (c, pg)) in g.iter_mut().zip(e).zip(protos[k].vector.iter().zip(proto_grad[k].iter_mut())) {
                    let diff = 2.0 * coeff * (a.to_f64().unwrap() - c);
                    *gi += diff;
                    *pg -= diff;
                }
            }
        }
    }
    for (k, pg) in proto_grad.iter().enumerate() {
        for s in 0..n_shot {
            let row = layout.support_row(k, s);
            for (gi, v) in grad[row * dim..(row + 1) * dim].iter_mut().zip(pg) {
                *gi += v / n_shot as f64;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NumericFailure("episode loss".into()));
    }
    // Once the softmax saturates, gradients underflow towards f32 subnormals, which
    // make every later GEMM many times slower. Anything this small is below the
    // rounding of an SGD step anyway.
    let flush = |g: f64| if g.abs() < GRAD_FLUSH { 0.0 } else { g };
    Ok((loss, Matrix { rows: emb.rows, cols: dim, data: grad.into_iter().map(|g| T::lit(flush(g))).collect() }))
}

/// Stacks segments into an `N x 1 x rows x width` batch.
pub fn batch<'a, T: Real>(segments: impl IntoIterator<Item = &'a Segment>) -> Result<Tensor4<T>> {
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut n = 0;
    for s in segments {
        match dims {
            None => dims = Some((s.rows, s.width)),
            Some(d) if d != (s.rows, s.width) => {
                return Err(Error::ShapeMismatch(format!("segment {}x{} in a {}x{} batch", s.rows, s.width, d.0, d.1)))
            }
            _ => {}
        }
        data.extend(s.features.iter().map(|&v| T::lit(v as f64)));
        n += 1;
    }
    let (h, w) = dims.ok_or_else(|| Error::InsufficientData("empty batch".into()))?;
    Tensor4::from_vec([n, 1, h, w], data)
}

fn episode_batch<T: Real>(ep: &Episode) -> Result<Tensor4<T>> {
    batch(ep.support.iter().flatten().chain(ep.query.iter().flatten()))
}

/// Loss and parameter gradients for one episode, batch norm in training mode.
pub fn episode_loss<T: Real>(model: &mut EncoderModel<T>, ep: &Episode) -> Result<(f64, crate::tensornet::EncoderGrads<T>)> {
    let x = episode_batch(ep)?;
    let (emb, tape) = model.forward_train(&x)?;
    let (loss, grad) = prototypical_loss(&emb, EpisodeLayout::of(ep))?;
    Ok((loss, model.backward(tape, grad)?))
}

/// Episode loss with running batch-norm statistics and no gradients.
pub fn episode_loss_eval<T: Real>(model: &EncoderModel<T>, ep: &Episode) -> Result<f64> {
    let emb = model.forward_eval(&episode_batch(ep)?)?;
    Ok(prototypical_loss(&emb, EpisodeLayout::of(ep))?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub val_episodes: usize,
    pub n_way: usize,
    pub n_shot: usize,
    pub n_query: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub patience: usize,
    pub threshold: f64,
    pub lr_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            episodes_per_epoch: 100,
            val_episodes: 20,
            n_way: 5,
            n_shot: 5,
            n_query: 5,
            learning_rate: 0.01,
            momentum: 0.85,
            patience: 5,
            threshold: 0.01,
            lr_factor: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: EncoderModel<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub final_lr: f64,
    pub scheduler: SchedulerState,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,lr";

pub fn write_metrics_row<W: Write>(out: &mut W, r: &EpochRecord) -> std::io::Result<()> {
    writeln!(out, "{},{:.6},{:.6},{}", r.epoch, r.train_loss, r.val_loss, r.lr)
}

/// Episodic training with SGD, plateau scheduling on validation loss, and keep-best.
///
/// `on_epoch` sees every epoch record as it is produced (for metrics logging).
pub fn train<T: Real>(
    model: EncoderModel<T>,
    train_pool: &Pool,
    val_pool: &Pool,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    val_rng.set_stream(1);
    let val_set: Vec<Episode> = (0..cfg.val_episodes)
        .map(|_| sample_episode(val_pool, cfg.n_way, cfg.n_shot, cfg.n_query, &mut val_rng))
        .collect::<Result<_>>()?;
    // Fail before the first epoch rather than midway.
    sample_episode(train_pool, cfg.n_way, cfg.n_shot, cfg.n_query, &mut rng.clone())?;

    let mut opt = OptimizerState::<T>::new(cfg.learning_rate, cfg.momentum);
    let mut sched = SchedulerState {
        patience: cfg.patience,
        threshold: cfg.threshold,
        factor: cfg.lr_factor,
        ..SchedulerState::default()
    };
    let mut best: Option<(EncoderModel<T>, usize, f64)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        model.set_mode(Mode::Train);
        let mut train_loss = 0.0;
        for _ in 0..cfg.episodes_per_epoch {
            let ep = sample_episode(train_pool, cfg.n_way, cfg.n_shot, cfg.n_query, &mut rng)?;
            let (loss, grads) = episode_loss(&mut model, &ep)?;
            train_loss += loss;
            sgd_step(&mut model.params_mut(), &grads.slices(), &mut opt)?;
        }
        train_loss /= cfg.episodes_per_epoch.max(1) as f64;

        model.set_mode(Mode::Eval);
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            val_set.iter().map(|ep| episode_loss_eval(&model, ep)).sum::<Result<f64>>()? / val_set.len() as f64
        };
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::NumericFailure(format!("loss at epoch {epoch}")));
        }

        let record = EpochRecord { epoch, train_loss, val_loss, lr: opt.learning_rate };
        on_epoch(&record)?;
        history.push(record);

        if best.as_ref().is_none_or(|(_, _, b)| val_loss < *b) {
            best = Some((model.clone(), epoch, val_loss));
        }
        opt.learning_rate = sched.plateau_step(val_loss, opt.learning_rate);
    }

    let (mut best, best_epoch, best_val_loss) = best.unwrap_or((model, 0, f64::NAN));
    best.set_mode(Mode::Eval);
    Ok(TrainOutcome { best, best_epoch, best_val_loss, history, final_lr: opt.learning_rate, scheduler: sched })
}

/// Softmax probability of the positive class over two prototype distances.
pub fn probability_from_distances(d_pos: f64, d_neg: f64) -> f64 {
    let (a, b) = (-d_pos, -d_neg);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    ea / (ea + eb)
}

pub fn query_probability<T: Real>(pos: &[f64], neg: &[f64], query: &[T]) -> Result<f64> {
    let q: Vec<f64> = query.iter().map(|v| v.to_f64().unwrap()).collect();
    Ok(probability_from_distances(euclid_sq(&q, pos)?, euclid_sq(&q, neg)?))
}

/// Everything needed to score one recording given its five shots.
#[derive(Debug, Clone)]
pub struct InferenceTask {
    /// Tiles of each exemplar event.
    pub shots: Vec<Vec<Segment>>,
    pub negative_pool: Vec<Segment>,
    /// Windows over the scored region, in time order.
    pub query_stream: Vec<Segment>,
    /// Window starts relative to `origin_frame`.
    pub query_starts: Vec<usize>,
    /// First frame of the scored region in the file.
    pub origin_frame: usize,
    /// Frames in the scored region.
    pub query_frames: usize,
    pub width: usize,
    pub iterations: usize,
    pub threshold: f64,
    pub seed: u64,
}

pub const SHOTS: usize = 5;

/// Window width for a novel class: the median shot length, clamped to `[8, 128]`.
pub fn shot_width(shot_frames: &[usize]) -> usize {
    let mut v = shot_frames.to_vec();
    v.sort_unstable();
    v.get(v.len() / 2).copied().unwrap_or(8).clamp(8, 128)
}

impl InferenceTask {
    /// Builds the task for a file: shot tiles, negatives from before the fifth shot's
    /// end that avoid every shot, and query windows from the fifth shot's end onward.
    pub fn from_shots(m: &FeatureMatrix, shots: &[Annotation], file: &str, seed: u64) -> Result<InferenceTask> {
        let mut shots: Vec<&Annotation> = shots.iter().filter(|a| a.is_pos()).collect();
        if shots.len() != SHOTS {
            return Err(Error::WrongShotCount { expected: SHOTS, found: shots.len() });
        }
        shots.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));
        let hop_s = m.frame_hop_s();
        let ranges: Vec<(usize, usize)> = shots
            .iter()
            .map(|a| {
                let (s, e) = a.frame_range(hop_s);
                (s.min(m.cols.saturating_sub(1)), e.min(m.cols).max(s.min(m.cols.saturating_sub(1)) + 1))
            })
            .collect();
        let width = shot_width(&ranges.iter().map(|(s, e)| e - s).collect::<Vec<_>>());
        let hop = (width / 2).max(1);

        let shot_segments: Vec<Vec<Segment>> = ranges
            .iter()
            .map(|&(s, e)| tile_starts(s, e, width).into_iter().map(|st| Segment::cut_padded(m, st, e, width, file)).collect())
            .collect();

        let origin = ranges.iter().map(|r| r.1).max().unwrap();
        let mut negative_pool = Vec::new();
        if origin >= width {
            for start in (0..=origin - width).step_by(hop) {
                let end = start + width;
                if !ranges.iter().any(|&(s, e)| start < e && s < end) {
                    negative_pool.push(Segment::cut(m, start, width, file));
                }
            }
        }
        if negative_pool.is_empty() {
            return Err(Error::EmptyNegativePool);
        }

        let query_frames = m.cols.saturating_sub(origin);
        let query_starts: Vec<usize> =
            if query_frames == 0 { Vec::new() } else { tile_starts(0, query_frames, width) };
        let query_stream = query_starts.iter().map(|&s| Segment::cut(m, origin + s, width, file)).collect();

        Ok(InferenceTask {
            shots: shot_segments,
            negative_pool,
            query_stream,
            query_starts,
            origin_frame: origin,
            query_frames,
            width,
            iterations: 5,
            threshold: 0.5,
            seed,
        })
    }

    pub fn shot_durations(shots: &[Annotation]) -> Vec<f64> {
        shots.iter().filter(|a| a.is_pos()).map(Annotation::duration_s).collect()
    }
}

const EMBED_CHUNK: usize = 32;

/// Embeds segments in eval mode, a chunk at a time.
pub fn embed_all<T: Real>(model: &EncoderModel<T>, segments: &[Segment]) -> Result<Matrix<T>> {
    let mut out: Option<Matrix<T>> = None;
    for chunk in segments.chunks(EMBED_CHUNK) {
        let e = model.forward_eval(&batch(chunk)?)?;
        match &mut out {
            None => out = Some(e),
            Some(m) => {
                m.rows += e.rows;
                m.data.extend(e.data);
            }
        }
    }
    out.ok_or_else(|| Error::InsufficientData("nothing to embed".into()))
}

fn mean_rows<T: Real>(m: &Matrix<T>, rows: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut acc = vec![0.0; m.cols];
    let mut n = 0;
    for r in rows {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v.to_f64().unwrap();
        }
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n.max(1) as f64);
    acc
}

/// Window probabilities averaged over iterations, one per query window.
pub fn window_probabilities<T: Real>(model: &EncoderModel<T>, task: &InferenceTask) -> Result<Vec<f64>> {
    if task.negative_pool.is_empty() {
        return Err(Error::EmptyNegativePool);
    }
    if task.query_stream.is_empty() {
        return Ok(Vec::new());
    }
    let shot_emb: Vec<Vec<f64>> = task
        .shots
        .iter()
        .map(|tiles| embed_all(model, tiles).map(|e| mean_rows(&e, 0..e.rows)))
        .collect::<Result<_>>()?;
    let dim = shot_emb[0].len();
    let pos: Vec<f64> =
        (0..dim).map(|i| shot_emb.iter().map(|s| s[i]).sum::<f64>() / shot_emb.len() as f64).collect();

    let neg_emb = embed_all(model, &task.negative_pool)?;
    let query_emb = embed_all(model, &task.query_stream)?;

    let sample = task.negative_pool.len().min(SHOTS * task.width);
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut sums = vec![0.0; query_emb.rows];
    let iterations = task.iterations.max(1);
    for _ in 0..iterations {
        let picks = index::sample(&mut rng, neg_emb.rows, sample);
        let neg = mean_rows(&neg_emb, picks.into_iter());
        for (j, s) in sums.iter_mut().enumerate() {
            *s += query_probability(&pos, &neg, query_emb.row(j))?;
        }
    }
    Ok(sums.into_iter().map(|s| s / iterations as f64).collect())
}

/// Spreads window probabilities onto frames: each frame takes the mean of the windows
/// covering it.
pub fn frame_probabilities(window_probs: &[f64], starts: &[usize], width: usize, frames: usize) -> Vec<f64> {
    let mut sum = vec![0.0; frames];
    let mut count = vec![0usize; frames];
    for (&p, &s) in window_probs.iter().zip(starts) {
        for f in s..(s + width).min(frames) {
            sum[f] += p;
            count[f] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
}

/// Per-frame positive-class probability over the task's query region.
pub fn detect<T: Real>(model: &EncoderModel<T>, task: &InferenceTask) -> Result<Vec<f64>> {
    let windows = window_probabilities(model, task)?;
    Ok(frame_probabilities(&windows, &task.query_starts, task.width, task.query_frames))
}
