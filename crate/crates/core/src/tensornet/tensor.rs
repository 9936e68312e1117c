use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar types the encoder runs on: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + AddAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major storage, where
    /// `op(a)` is `m x k` and `op(b)` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Stored as `rows x cols` when not transposed, `cols x rows` otherwise.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand sizes");
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                        c.as_mut_ptr(), n as isize, 1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense NCHW array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub dims: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?}",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cc, hh, ww] = self.dims;
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-major `rows x cols` matrix, used for flattened embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Row-major flatten: `N x C x H x W` to `N x (C * H * W)`.
pub fn flatten<T: Real>(x: Tensor4<T>) -> Matrix<T> {
    let cols = x.item_len();
    Matrix { rows: x.n(), cols, data: x.data }
}

/// Inverse of [`flatten`] for gradients flowing back into the conv stack.
pub fn unflatten<T: Real>(m: Matrix<T>, dims: [usize; 4]) -> Result<Tensor4<T>> {
    Tensor4::from_vec(dims, m.data)
}
