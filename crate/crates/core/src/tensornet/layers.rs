//! Batch normalisation, ReLU and 2x2 max pooling.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Learned scale/shift plus running statistics for one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Values saved by the training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor4<T>,
    pub inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub x: Tensor4<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batch norm over {} channels given {}",
                self.channels(),
                x.c()
            )));
        }
        Ok(())
    }

    /// Normalises by batch statistics and folds them into the running averages.
    #[allow(clippy::needless_range_loop)] // `ch` indexes six per-channel arrays
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>)> {
        self.check(x)?;
        let [n, c, h, w] = x.dims;
        let hw = h * w;
        let count = n * hw;
        if count < 2 {
            return Err(Error::DegenerateBatch(count));
        }
        let eps = T::lit(BN_EPS);
        let momentum = T::lit(BN_MOMENTUM);
        let inv_count = T::one() / T::from_usize(count).unwrap();
        let mut x_hat = Tensor4::zeros(x.dims);
        let mut y = Tensor4::zeros(x.dims);
        let mut inv_std = vec![T::zero(); c];

        for ch in 0..c {
            let planes = (0..n).map(|i| (i * c + ch) * hw);
            let mut sum = T::zero();
            for off in planes.clone() {
                sum += x.data[off..off + hw].iter().copied().sum::<T>();
            }
            let mean = sum * inv_count;
            let mut sq = T::zero();
            for off in planes.clone() {
                sq += x.data[off..off + hw].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq * inv_count;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            for off in planes {
                for k in off..off + hw {
                    let xh = (x.data[k] - mean) * istd;
                    x_hat.data[k] = xh;
                    y.data[k] = g * xh + b;
                }
            }
            let unbiased = sq / T::from_usize(count - 1).unwrap();
            self.running_mean[ch] = (T::one() - momentum) * self.running_mean[ch] + momentum * mean;
            self.running_var[ch] = (T::one() - momentum) * self.running_var[ch] + momentum * unbiased;
        }
        Ok((y, BnCache { x_hat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.dims;
        let hw = h * w;
        let eps = T::lit(BN_EPS);
        let mut y = Tensor4::zeros(x.dims);
        for ch in 0..c {
            let scale = self.gamma[ch] / (self.running_var[ch] + eps).sqrt();
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    y.data[k] = x.data[k] * scale + shift;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor4<T>) -> Result<BnGrads<T>> {
        if grad_out.dims != cache.x_hat.dims {
            return Err(Error::ShapeMismatch("batch norm gradient shape".into()));
        }
        let [n, c, h, w] = grad_out.dims;
        let hw = h * w;
        let count = T::from_usize(n * hw).unwrap();
        let mut gx = Tensor4::zeros(grad_out.dims);
        let mut gg = vec![T::zero(); c];
        let mut gb = vec![T::zero(); c];
        for ch in 0..c {
            let planes = (0..n).map(|i| (i * c + ch) * hw);
            let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
            for off in planes.clone() {
                for k in off..off + hw {
                    sum_dy += grad_out.data[k];
                    sum_dy_xh += grad_out.data[k] * cache.x_hat.data[k];
                }
            }
            gg[ch] = sum_dy_xh;
            gb[ch] = sum_dy;
            let scale = self.gamma[ch] * cache.inv_std[ch] / count;
            for off in planes {
                for k in off..off + hw {
                    gx.data[k] = scale * (count * grad_out.data[k] - sum_dy - cache.x_hat.data[k] * sum_dy_xh);
                }
            }
        }
        Ok(BnGrads { x: gx, gamma: gg, beta: gb })
    }
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    Tensor4 { dims: x.dims, data: x.data.iter().map(|&v| v.max(T::zero())).collect() }
}

/// Gradient of ReLU given its output.
pub fn relu_backward<T: Real>(y: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    Tensor4 {
        dims: y.dims,
        data: y
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

/// 2x2 stride-2 max pooling. Odd trailing rows/columns are dropped.
/// Returns the pooled tensor and the flat input index of each maximum.
pub fn maxpool2<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<u32>)> {
    let [n, c, h, w] = x.dims;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch(format!("max pool needs at least 2x2, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                y.data[o] = x.data[best];
                arg.push(best as u32);
                o += 1;
            }
        }
    }
    Ok((y, arg))
}

pub fn maxpool2_backward<T: Real>(in_dims: [usize; 4], arg: &[u32], grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut gx = Tensor4::zeros(in_dims);
    for (&idx, &g) in arg.iter().zip(&grad_out.data) {
        gx.data[idx as usize] += g;
    }
    gx
}
