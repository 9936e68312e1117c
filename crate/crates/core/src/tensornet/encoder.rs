//! The three-block convolutional embedding network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{conv2d_backward, conv2d_forward};
use super::layers::{maxpool2, maxpool2_backward, relu, relu_backward, BatchNorm, BnCache, Mode};
use super::tensor::{flatten, unflatten, Matrix, Real, Tensor4};
use crate::error::{Error, Result};

pub const CHANNELS: usize = 128;
pub const BLOCKS: usize = 3;

/// Conv2D -> BatchNorm -> ReLU -> MaxPool2D((2, 2)).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    /// `C_out x C_in x 3 x 3`.
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
    pub bn: BatchNorm<T>,
}

impl<T: Real> ConvBlock<T> {
    fn init(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (c_in * 9) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let data = (0..c_out * c_in * 9).map(|_| T::lit(rng.gen_range(-bound..bound))).collect();
        ConvBlock {
            kernel: Tensor4 { dims: [c_out, c_in, 3, 3], data },
            bias: vec![T::zero(); c_out],
            bn: BatchNorm::new(c_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<T> {
    pub blocks: Vec<ConvBlock<T>>,
    pub mode: Mode,
}

/// Activations kept by a training forward pass for the backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    blocks: Vec<BlockTape<T>>,
    out_dims: [usize; 4],
}

#[derive(Debug)]
struct BlockTape<T> {
    input: Tensor4<T>,
    bn: BnCache<T>,
    activated: Tensor4<T>,
    argmax: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub blocks: Vec<BlockGrads<T>>,
    pub input: Tensor4<T>,
}

impl<T: Real> EncoderGrads<T> {
    /// Parameter gradients in [`EncoderModel::params_mut`] order.
    pub fn slices(&self) -> Vec<&[T]> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.kernel[..], &b.bias[..], &b.gamma[..], &b.beta[..]])
            .collect()
    }
}

/// Spatial extent after three floor-halvings.
pub fn pooled(extent: usize) -> usize {
    (0..BLOCKS).fold(extent, |e, _| e / 2)
}

/// Embedding dimension for inputs of `height x width`.
pub fn embedding_dim(channels: usize, height: usize, width: usize) -> usize {
    channels * pooled(height) * pooled(width)
}

impl<T: Real> EncoderModel<T> {
    /// Three 128-channel blocks, uniform `+-sqrt(6 / fan_in)` kernels from `seed`.
    pub fn new(seed: u64) -> Self {
        Self::with_channels(CHANNELS, seed)
    }

    /// Same topology with a different width; used for small gradient checks.
    pub fn with_channels(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..BLOCKS)
            .map(|b| ConvBlock::init(if b == 0 { 1 } else { channels }, channels, &mut rng))
            .collect();
        EncoderModel { blocks, mode: Mode::Train }
    }

    pub fn channels(&self) -> usize {
        self.blocks[0].kernel.dims[0]
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != 1 {
            return Err(Error::ShapeMismatch(format!("encoder expects 1 input channel, got {}", x.c())));
        }
        if x.h() < 8 || x.w() < 8 {
            return Err(Error::ShapeMismatch(format!("encoder input {}x{} is below 8x8", x.h(), x.w())));
        }
        Ok(())
    }

    /// Embeds a batch with running batch-norm statistics.
    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (b, block) in self.blocks.iter().enumerate() {
            let z = conv2d_forward(&h, &block.kernel, &block.bias)?;
            let a = relu(&block.bn.forward_eval(&z)?);
            h = maxpool2(&a)?.0;
            finite(&h, b)?;
        }
        Ok(flatten(h))
    }

    /// Embeds a batch with batch statistics, updating the running averages, and
    /// records what [`EncoderModel::backward`] needs.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<(Matrix<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut tapes = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for (b, block) in self.blocks.iter_mut().enumerate() {
            let z = conv2d_forward(&h, &block.kernel, &block.bias)?;
            let (normed, bn) = block.bn.forward_train(&z)?;
            drop(z);
            let activated = relu(&normed);
            drop(normed);
            let (pooled, argmax) = maxpool2(&activated)?;
            finite(&pooled, b)?;
            tapes.push(BlockTape { input: std::mem::replace(&mut h, pooled), bn, activated, argmax });
        }
        let out_dims = h.dims;
        Ok((flatten(h), Tape { blocks: tapes, out_dims }))
    }

    /// Embeds in whichever mode the model is in.
    pub fn encode(&mut self, x: &Tensor4<T>) -> Result<Matrix<T>> {
        match self.mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => Ok(self.forward_train(x)?.0),
        }
    }

    /// Back-propagates `grad` (same shape as the embeddings) through a recorded pass.
    pub fn backward(&self, tape: Tape<T>, grad: Matrix<T>) -> Result<EncoderGrads<T>> {
        let mut g = unflatten(grad, tape.out_dims)?;
        let mut grads = Vec::with_capacity(self.blocks.len());
        for (block, t) in self.blocks.iter().zip(tape.blocks).rev() {
            let g_act = maxpool2_backward(t.activated.dims, &t.argmax, &g);
            let g_norm = relu_backward(&t.activated, &g_act);
            drop(g_act);
            let bn = block.bn.backward(&t.bn, &g_norm)?;
            drop(g_norm);
            let conv = conv2d_backward(&t.input, &block.kernel, &bn.x)?;
            grads.push(BlockGrads {
                kernel: conv.kernel.data,
                bias: conv.bias,
                gamma: bn.gamma,
                beta: bn.beta,
            });
            g = conv.x;
        }
        grads.reverse();
        Ok(EncoderGrads { blocks: grads, input: g })
    }

    /// Trainable parameters: per block kernel, bias, gamma, beta.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [&mut b.kernel.data[..], &mut b.bias[..], &mut b.bn.gamma[..], &mut b.bn.beta[..]]
            })
            .collect()
    }
}

fn finite<T: Real>(t: &Tensor4<T>, block: usize) -> Result<()> {
    if cfg!(debug_assertions) && !t.all_finite() {
        return Err(Error::NumericFailure(format!("encoder block {}", block + 1)));
    }
    Ok(())
}
