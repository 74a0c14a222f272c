//! Dense row-major tensors and the numeric kernels the autodiff tape is built on.

use std::fmt::Debug;

/// Floating point element type usable by the engine.
///
/// Implemented for `f32` (training) and `f64` (gradient verification).
pub trait Float:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_float {
    ($t:ty, $gemm:path) => {
        impl Float for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_float!(f32, matrixmultiply::sgemm);
impl_float!(f64, matrixmultiply::dgemm);

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Self {
        Self::new(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "bad reshape to {shape:?}");
        self.shape = shape;
        self
    }

    /// Leading dimension (batch size for batched tensors).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Product of all but the leading dimension.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "shape mismatch in accumulation");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects rows along the leading dimension.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Self { shape, data }
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// Geometry of a strided 2-D sliding window over a `channels x height x width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Unfolds `image` (`C*H*W`) into `cols` (`C*k*k` rows by `Ho*Wo` columns).
    pub fn im2col<T: Float>(&self, image: &[T], cols: &mut [T]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        debug_assert_eq!(cols.len(), self.col_rows() * oh * ow);
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let iy = (y * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[y * ow..(y + 1) * ow];
                        if iy < 0 || iy >= self.height as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.width..(iy as usize + 1) * self.width];
                        for (x, out) in line.iter_mut().enumerate() {
                            let ix = (x * self.stride + kj) as isize - self.pad as isize;
                            *out = if ix < 0 || ix >= self.width as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Window::im2col`]: scatters-and-adds `cols` back into `image`.
    pub fn col2im<T: Float>(&self, cols: &[T], image: &mut [T]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for y in 0..oh {
                        let iy = (y * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let dst = &mut plane
                            [iy as usize * self.width..(iy as usize + 1) * self.width];
                        for x in 0..ow {
                            let ix = (x * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.width as isize {
                                dst[ix as usize] = dst[ix as usize] + src[y * ow + x];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Window {
    /// Valid `(out_start, out_end, in_start)` along one axis for kernel tap `kk` at stride 1.
    fn tap_range(&self, kk: usize, in_len: usize, out_len: usize) -> Option<(usize, usize, usize)> {
        let lo = self.pad.saturating_sub(kk);
        let hi = (in_len + self.pad).saturating_sub(kk).min(out_len);
        (lo < hi).then(|| (lo, hi, lo + kk - self.pad))
    }

    /// Stride-1 convolution of one image without unfolding; `out` is accumulated into.
    ///
    /// Cheaper than unfolding when only a handful of output channels are produced.
    pub fn direct_forward<T: Float>(&self, image: &[T], weights: &[T], cout: usize, out: &mut [T]) {
        self.direct_taps(cout, |o, c, tap, wy, wx| {
            let (oh, ow) = (self.out_height(), self.out_width());
            let wv = weights[tap];
            let (oy0, oy1, iy0) = wy;
            let (ox0, ox1, ix0) = wx;
            let plane = &image[c * self.height * self.width..];
            let dst = &mut out[o * oh * ow..];
            for (r, oy) in (oy0..oy1).enumerate() {
                let src = &plane[(iy0 + r) * self.width + ix0..][..ox1 - ox0];
                let d = &mut dst[oy * ow + ox0..oy * ow + ox1];
                for (a, &b) in d.iter_mut().zip(src) {
                    *a = *a + wv * b;
                }
            }
        });
    }

    /// Gradients of [`Window::direct_forward`]; both outputs are accumulated into.
    pub fn direct_backward<T: Float>(
        &self,
        image: &[T],
        weights: &[T],
        cout: usize,
        dy: &[T],
        mut dimage: Option<&mut [T]>,
        mut dweights: Option<&mut [T]>,
    ) {
        let (oh, ow) = (self.out_height(), self.out_width());
        self.direct_taps(cout, |o, c, tap, wy, wx| {
            let (oy0, oy1, iy0) = wy;
            let (ox0, ox1, ix0) = wx;
            let base = c * self.height * self.width;
            let g = &dy[o * oh * ow..];
            let mut acc = T::zero();
            for (r, oy) in (oy0..oy1).enumerate() {
                let grow = &g[oy * ow + ox0..oy * ow + ox1];
                let at = base + (iy0 + r) * self.width + ix0;
                if let Some(di) = dimage.as_deref_mut() {
                    let wv = weights[tap];
                    for (a, &b) in di[at..at + grow.len()].iter_mut().zip(grow) {
                        *a = *a + wv * b;
                    }
                }
                if dweights.is_some() {
                    acc = image[at..at + grow.len()].iter().zip(grow).fold(acc, |s, (&a, &b)| s + a * b);
                }
            }
            if let Some(dw) = dweights.as_deref_mut() {
                dw[tap] = dw[tap] + acc;
            }
        });
    }

    fn direct_taps(
        &self,
        cout: usize,
        mut f: impl FnMut(usize, usize, usize, (usize, usize, usize), (usize, usize, usize)),
    ) {
        debug_assert_eq!(self.stride, 1);
        let (oh, ow, k) = (self.out_height(), self.out_width(), self.kernel);
        for o in 0..cout {
            for c in 0..self.channels {
                for ki in 0..k {
                    let Some(wy) = self.tap_range(ki, self.height, oh) else { continue };
                    for kj in 0..k {
                        let Some(wx) = self.tap_range(kj, self.width, ow) else { continue };
                        f(o, c, ((o * self.channels + c) * k + ki) * k + kj, wy, wx);
                    }
                }
            }
        }
    }
}

/// Flushes subnormal floats to zero on the calling thread (x86-64 only).
///
/// Saturated sigmoids push gradients into the subnormal range, where
/// arithmetic is many times slower; training loops call this once per step.
#[allow(deprecated)]
pub fn flush_subnormals() {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: only sets the flush-to-zero and denormals-are-zero control bits.
    unsafe {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        _mm_setcsr(_mm_getcsr() | 0x8040);
    }
}

/// Row-wise numerically stable softmax of `logits / temperature`.
pub fn softmax_rows(logits: &[f64], width: usize, temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&l| ((l - max) / temperature).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let w = Window { channels: 2, height: 5, width: 4, kernel: 3, stride: 2, pad: 1 };
        let image: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_probe: Vec<f64> =
            (0..w.col_rows() * w.col_cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; cols_probe.len()];
        w.im2col(&image, &mut cols);
        let mut back = vec![0.0; image.len()];
        w.col2im(&cols_probe, &mut back);
        let lhs: f64 = cols.iter().zip(&cols_probe).map(|(a, b)| a * b).sum();
        let rhs: f64 = image.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn direct_conv_matches_unfolded() {
        let w = Window { channels: 3, height: 6, width: 5, kernel: 3, stride: 1, pad: 1 };
        let cout = 2;
        let image: Vec<f64> = (0..90).map(|i| (i as f64 * 0.37).sin()).collect();
        let weights: Vec<f64> = (0..cout * 27).map(|i| (i as f64 * 0.21).cos()).collect();
        let mut cols = vec![0.0; w.col_rows() * w.col_cols()];
        w.im2col(&image, &mut cols);
        let mut want = vec![0.0; cout * w.col_cols()];
        f64::gemm(cout, 27, w.col_cols(), 1.0, &weights, 27, 1, &cols, w.col_cols() as isize, 1, 0.0, &mut want, w.col_cols() as isize, 1);
        let mut got = vec![0.0; want.len()];
        w.direct_forward(&image, &weights, cout, &mut got);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_respects_transposed_strides() {
        // a is 2x3, b^T stored as 2x3 so b is 3x2
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0f32, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &a, 3, 1, &bt, 1, 3, 0.0, &mut c, 2, 1);
        assert_eq!(c, [-2.0, 4.0, -2.0, 13.0]);
    }

    #[test]
    fn softmax_rows_sums_to_one() {
        let p = softmax_rows(&[1000.0, 0.0, -3.0, 2.0, 2.0, 2.0], 3, 1.0);
        assert!((p[0..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[3] - 1.0 / 3.0).abs() < 1e-12);
    }
}
