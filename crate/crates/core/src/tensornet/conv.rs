//! 3x3 same-padded convolution via im2col and GEMM.

use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Gradients of [`conv2d_forward`].
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub x: Tensor4<T>,
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
}

fn check(x: &Tensor4<impl Real>, kernel: &Tensor4<impl Real>, bias_len: usize) -> Result<()> {
    let [c_out, c_in, kh, kw] = kernel.dims;
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::ShapeMismatch(format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if x.c() != c_in {
        return Err(Error::ShapeMismatch(format!("input has {} channels, kernel expects {c_in}", x.c())));
    }
    if bias_len != c_out {
        return Err(Error::ShapeMismatch(format!("bias has {bias_len} entries for {c_out} outputs")));
    }
    Ok(())
}

/// Unfolds one `C x H x W` item into a `(C * 9) x (H * W)` patch matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for u in 0..KERNEL {
            for v in 0..KERNEL {
                let row = &mut cols[(ch * TAPS + u * KERNEL + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - 1;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    match v {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the image.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for u in 0..KERNEL {
            for v in 0..KERNEL {
                let row = &cols[(ch * TAPS + u * KERNEL + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &row[i * w..(i + 1) * w];
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    match v {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s),
                    }
                }
            }
        }
    }
}

/// `out[n,o,i,j] = bias[o] + sum_{c,u,v} x[n,c,i+u-1,j+v-1] * k[o,c,u,v]`, zero padding.
pub fn conv2d_forward<T: Real>(x: &Tensor4<T>, kernel: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    check(x, kernel, bias.len())?;
    let [n, c_in, h, w] = x.dims;
    let c_out = kernel.dims[0];
    let hw = h * w;
    let mut out = Tensor4::zeros([n, c_out, h, w]);
    let mut cols = vec![T::zero(); c_in * TAPS * hw];
    for item in 0..n {
        im2col(x.item(item), c_in, h, w, &mut cols);
        let dst = out.item_mut(item);
        for (o, b) in bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].fill(*b);
        }
        T::gemm(c_out, c_in * TAPS, hw, &kernel.data, false, &cols, false, T::one(), dst);
    }
    Ok(out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<ConvGrads<T>> {
    let [n, c_in, h, w] = x.dims;
    let c_out = kernel.dims[0];
    check(x, kernel, c_out)?;
    if grad_out.dims != [n, c_out, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "grad_out dims {:?}, expected {:?}",
            grad_out.dims,
            [n, c_out, h, w]
        )));
    }
    let hw = h * w;
    let k = c_in * TAPS;
    let mut gx = Tensor4::zeros(x.dims);
    let mut gk = Tensor4::zeros(kernel.dims);
    let mut gb = vec![T::zero(); c_out];
    let mut cols = vec![T::zero(); k * hw];
    let mut gcols = vec![T::zero(); k * hw];
    for item in 0..n {
        let go = grad_out.item(item);
        for (o, b) in gb.iter_mut().enumerate() {
            *b += go[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
        im2col(x.item(item), c_in, h, w, &mut cols);
        // dK += dOut * cols^T
        T::gemm(c_out, hw, k, go, false, &cols, true, T::one(), &mut gk.data);
        // dCols = K^T * dOut
        T::gemm(k, c_out, hw, &kernel.data, true, go, false, T::zero(), &mut gcols);
        col2im(&gcols, c_in, h, w, gx.item_mut(item));
    }
    Ok(ConvGrads { x: gx, kernel: gk, bias: gb })
}
