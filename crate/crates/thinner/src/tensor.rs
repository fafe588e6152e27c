//! Dense row-major `f64` tensors and the handful of numeric kernels the rest
//! of the crate is built on.
//!
//! Shapes are explicit `Vec<usize>` with every dimension >= 1; there is no
//! broadcasting. Convolution is expressed as `im2col` + matmul so that the
//! same two kernels serve both the forward and the backward pass (`col2im` is
//! the exact adjoint of `im2col`).

use crate::error::{Error, Result};

/// A dense tensor of `f64` values in row-major (C) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and a flat row-major buffer.
    ///
    /// Fails if any dimension is zero or the buffer length does not match
    /// the product of the dimensions.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!(
                "tensor dimensions must be >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// All-zeros tensor. Panics on a zero dimension (caller bug, not input).
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "tensor dimensions must be >= 1, got {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Tensor with every element set to `value`.
    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat offset of a multi-index. Debug-checked against the shape.
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &d) in idx.iter().enumerate() {
            debug_assert!(d < self.shape[i], "index {idx:?} out of {:?}", self.shape);
            off = off * self.shape[i] + d;
        }
        off
    }

    /// Element at a multi-index (convenience; hot loops index `data` directly).
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    /// True iff every element is finite (no NaN / inf).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape; element count must be preserved.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        Tensor::new(new_shape, self.data.clone())
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    /// Elementwise (Hadamard) product; shapes must match exactly.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, "mul", |a, b| a * b)
    }

    fn zip_with(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Multiplies every element by `s`.
    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    /// 2-D matrix product `self @ rhs`. Inner dimensions must agree.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::RankMismatch {
                op: "matmul",
                expected: 2,
                got: self.shape.clone(),
            });
        }
        if rhs.rank() != 2 {
            return Err(Error::RankMismatch {
                op: "matmul",
                expected: 2,
                got: rhs.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        // i-k-j order: the inner loop walks both `rhs` and `out` contiguously.
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::RankMismatch {
                op: "transpose",
                expected: 2,
                got: self.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Per-channel spatial mean of a rank-3 `(c, h, w)` map; returns rank-1
    /// length `c`. The mean of a constant map is that constant.
    pub fn reduce_mean_spatial(&self) -> Result<Tensor> {
        if self.rank() != 3 {
            return Err(Error::RankMismatch {
                op: "reduce_mean_spatial",
                expected: 3,
                got: self.shape.clone(),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let area = (h * w) as f64;
        let data = (0..c)
            .map(|ch| self.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / area)
            .collect();
        Ok(Tensor {
            shape: vec![c],
            data,
        })
    }

    /// Mean along `axis`; the axis is removed from the shape (a rank-1 input
    /// collapses to shape `[1]`).
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, |slice_mean, _| slice_mean)
    }

    /// Population standard deviation along `axis` (divides by `n`, not
    /// `n - 1`); the axis is removed from the shape.
    pub fn std_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, |_, var| var.sqrt())
    }

    /// Shared mean/std reduction: `finish(mean, variance)` picks the output.
    fn reduce_axis(&self, axis: usize, finish: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let alen = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * alen * inner + i;
                let mut sum = 0.0;
                for a in 0..alen {
                    sum += self.data[base + a * inner];
                }
                let mean = sum / alen as f64;
                let mut sq = 0.0;
                for a in 0..alen {
                    let d = self.data[base + a * inner] - mean;
                    sq += d * d;
                }
                out.push(finish(mean, sq / alen as f64));
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Tensor { shape, data: out })
    }

    /// Keeps the listed indices (in the given order) along `axis`.
    pub fn take(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let alen = self.shape[axis];
        if indices.is_empty() {
            return Err(Error::Config(format!(
                "take along axis {axis} needs at least one index"
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= alen) {
            return Err(Error::Config(format!(
                "take index {bad} out of range for axis {axis} of length {alen}"
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &a in indices {
                let base = (o * alen + a) * inner;
                out.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Ok(Tensor { shape, data: out })
    }

    /// Overwrites the full slice at `index` along `axis` with `value`.
    pub fn fill_axis(&mut self, axis: usize, index: usize, value: f64) {
        assert!(axis < self.rank(), "axis {axis} out of range");
        let alen = self.shape[axis];
        assert!(index < alen, "index {index} out of range for axis {axis}");
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        for o in 0..outer {
            let base = (o * alen + index) * inner;
            self.data[base..base + inner].fill(value);
        }
    }
}

/// Indices that sort `values` ascending. Stable: equal values keep their
/// original relative order, so ties always resolve the same way.
pub fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

// --- convolution plumbing ---------------------------------------------------

/// Output height/width of a convolution. Errors if the kernel does not fit
/// the padded input. `stride` must be >= 1 (checked by layer validation).
pub fn conv_output_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    assert!(stride >= 1, "stride must be >= 1");
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if kh > ph || kw > pw || kh == 0 || kw == 0 {
        return Err(Error::KernelTooLarge {
            kernel: (kh, kw),
            padded: (ph, pw),
        });
    }
    Ok(((ph - kh) / stride + 1, (pw - kw) / stride + 1))
}

/// Unfolds a `(b, c, h, w)` batch into a `(b*oh*ow, c*kh*kw)` patch matrix.
///
/// Row order is `(b, oy, ox)`, column order `(c, ky, kx)`; out-of-bounds
/// positions (zero padding) contribute 0. Convolution is then a single
/// matmul against the reshaped filter bank.
pub fn im2col(
    input: &Tensor,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "im2col",
            expected: 4,
            got: input.shape().to_vec(),
        });
    }
    let (b, c, h, w) = (
        input.shape[0],
        input.shape[1],
        input.shape[2],
        input.shape[3],
    );
    let (oh, ow) = conv_output_dims(h, w, kh, kw, stride, padding)?;
    let cols = c * kh * kw;
    let mut out = vec![0.0; b * oh * ow * cols];
    let mut row = 0;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut out[row * cols..(row + 1) * cols];
                let mut col = 0;
                for ci in 0..c {
                    let plane = &input.data[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                dst[col] = plane[iy as usize * w + ix as usize];
                            }
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Tensor::new(&[b * oh * ow, cols], out)
}

/// Folds a patch matrix back onto a `(b, c, h, w)` image, accumulating where
/// patches overlap. Exact adjoint of [`im2col`], which is all the backward
/// pass needs: `<im2col(x), y> == <x, col2im(y)>`.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &Tensor,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (oh, ow) = conv_output_dims(h, w, kh, kw, stride, padding)?;
    let expected = [b * oh * ow, c * kh * kw];
    if cols.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "col2im",
            left: cols.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let ncols = c * kh * kw;
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let mut row = 0;
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &cols.data[row * ncols..(row + 1) * ncols];
                let mut col = 0;
                for ci in 0..c {
                    let base = (bi * c + ci) * h * w;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                out.data[base + iy as usize * w + ix as usize] += src[col];
                            }
                            col += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(out)
}

/// Convolves a single `(c_in, h, w)` sample with a `(c_out, c_in, kh, kw)`
/// filter bank (no bias). Returns `(c_out, oh, ow)`.
pub fn conv2d_forward(
    input: &Tensor,
    filters: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::RankMismatch {
            op: "conv2d_forward",
            expected: 3,
            got: input.shape().to_vec(),
        });
    }
    if filters.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "conv2d_forward",
            expected: 4,
            got: filters.shape().to_vec(),
        });
    }
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (co, ci, kh, kw) = (
        filters.shape[0],
        filters.shape[1],
        filters.shape[2],
        filters.shape[3],
    );
    if ci != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d_forward",
            left: input.shape().to_vec(),
            right: filters.shape().to_vec(),
        });
    }
    let (oh, ow) = conv_output_dims(h, w, kh, kw, stride, padding)?;
    let batch = input.reshape(&[1, c, h, w])?;
    let patches = im2col(&batch, kh, kw, stride, padding)?; // (oh*ow, c*kh*kw)
    let bank = filters.reshape(&[co, ci * kh * kw])?;
    let out = patches.matmul(&bank.transpose()?)?; // (oh*ow, co)
    out.transpose()?.reshape(&[co, oh, ow])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha20Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn new_rejects_zero_dims_and_bad_lengths() {
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        match Tensor::new(&[2, 3], vec![1.0; 5]) {
            Err(Error::LengthMismatch { expected: 6, got: 5 }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn zeros_and_filled() {
        let z = Tensor::zeros(&[2, 3]);
        assert_eq!(z.len(), 6);
        assert!(z.data().iter().all(|&v| v == 0.0));
        let f = Tensor::filled(&[4], 2.5);
        assert_eq!(f.data(), &[2.5; 4]);
    }

    #[test]
    fn offset_is_row_major() {
        let t = Tensor::zeros(&[2, 3, 4]);
        assert_eq!(t.offset(&[0, 0, 0]), 0);
        assert_eq!(t.offset(&[0, 0, 3]), 3);
        assert_eq!(t.offset(&[0, 1, 0]), 4);
        assert_eq!(t.offset(&[1, 2, 3]), 23);
    }

    // --- matmul / transpose --------------------------------------------

    #[test]
    fn matmul_identity_is_a_noop() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = random_tensor(&[4, 4], &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        assert_eq!(eye.matmul(&a).unwrap(), a);
        assert_eq!(a.matmul(&eye).unwrap(), a);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let a = random_tensor(&[7, 5], &mut rng);
        let b = random_tensor(&[5, 3], &mut rng);
        let fast = a.matmul(&b).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..5 {
                    acc += a.data()[i * 5 + p] * b.data()[p * 3 + j];
                }
                assert!((fast.data()[i * 3 + j] - acc).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matmul_inner_dim_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b) {
            Err(Error::ShapeMismatch { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![4, 2]);
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn transpose_hand_and_involution() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = a.transpose().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(t.transpose().unwrap(), a);
    }

    // --- elementwise / reshape -----------------------------------------

    #[test]
    fn add_and_mul_elementwise() {
        let a = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[10.0, 40.0, 90.0]);
        assert!(a.add(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn scale_multiplies_every_element() {
        let a = Tensor::new(&[2], vec![1.5, -2.0]).unwrap();
        assert_eq!(a.scale(2.0).data(), &[3.0, -4.0]);
    }

    #[test]
    fn reshape_checks_element_count() {
        let a = Tensor::new(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let r = a.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), a.data());
        assert!(a.reshape(&[4, 2]).is_err());
    }

    // --- reductions ----------------------------------------------------

    #[test]
    fn reduce_mean_spatial_constant_map() {
        let t = Tensor::filled(&[3, 4, 4], 5.0);
        let m = t.reduce_mean_spatial().unwrap();
        assert_eq!(m.shape(), &[3]);
        assert_eq!(m.data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn reduce_mean_spatial_hand_case() {
        let t = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(t.reduce_mean_spatial().unwrap().data(), &[3.0]);
    }

    #[test]
    fn reduce_mean_spatial_matches_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let t = random_tensor(&[4, 5, 5], &mut rng);
        let m = t.reduce_mean_spatial().unwrap();
        for c in 0..4 {
            let mut sum = 0.0;
            for y in 0..5 {
                for x in 0..5 {
                    sum += t.at(&[c, y, x]);
                }
            }
            assert!((m.data()[c] - sum / 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_and_std_axis_hand_cases() {
        // Columns of a 2x2: mean over axis 0.
        let t = Tensor::new(&[2, 2], vec![1.0, 10.0, 3.0, 30.0]).unwrap();
        let m = t.mean_axis(0).unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.data(), &[2.0, 20.0]);
        // Population std of [1, 3] is 1 (divides by n).
        let s = t.std_axis(0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!((s.data()[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn std_axis_of_constant_is_exactly_zero() {
        let t = Tensor::filled(&[5, 3], 2.75);
        let s = t.std_axis(0).unwrap();
        assert_eq!(s.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn reductions_match_loops_on_random_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let t = random_tensor(&[6, 4, 3], &mut rng);
        let m = t.mean_axis(1).unwrap();
        let s = t.std_axis(1).unwrap();
        assert_eq!(m.shape(), &[6, 3]);
        for o in 0..6 {
            for i in 0..3 {
                let vals: Vec<f64> = (0..4).map(|a| t.at(&[o, a, i])).collect();
                let mean = vals.iter().sum::<f64>() / 4.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
                assert!((m.data()[o * 3 + i] - mean).abs() < 1e-10);
                assert!((s.data()[o * 3 + i] - var.sqrt()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn reduce_axis_out_of_range() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(matches!(t.mean_axis(2), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn rank_one_reduction_collapses_to_scalar_shape() {
        let t = Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.mean_axis(0).unwrap();
        assert_eq!(m.shape(), &[1]);
        assert_eq!(m.data(), &[2.5]);
    }

    // --- take / fill_axis ----------------------------------------------

    #[test]
    fn take_rows_and_columns() {
        let t = Tensor::new(&[3, 2], vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]).unwrap();
        let rows = t.take(0, &[2, 0]).unwrap();
        assert_eq!(rows.shape(), &[2, 2]);
        assert_eq!(rows.data(), &[20.0, 21.0, 0.0, 1.0]);
        let cols = t.take(1, &[1]).unwrap();
        assert_eq!(cols.shape(), &[3, 1]);
        assert_eq!(cols.data(), &[1.0, 11.0, 21.0]);
    }

    #[test]
    fn take_validates_indices() {
        let t = Tensor::zeros(&[2, 2]);
        assert!(t.take(0, &[2]).is_err());
        assert!(t.take(0, &[]).is_err());
        assert!(t.take(3, &[0]).is_err());
    }

    #[test]
    fn fill_axis_zeroes_one_slice() {
        let mut t = Tensor::filled(&[2, 3], 1.0);
        t.fill_axis(1, 1, 0.0);
        assert_eq!(t.data(), &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
    }

    // --- argsort -------------------------------------------------------

    #[test]
    fn argsort_hand_case() {
        assert_eq!(argsort(&[3.0, 1.0, 2.0]), vec![1, 2, 0]);
    }

    #[test]
    fn argsort_is_stable_on_ties() {
        assert_eq!(argsort(&[1.0, 0.5, 0.5, 0.5]), vec![1, 2, 3, 0]);
    }

    proptest! {
        #[test]
        fn argsort_returns_a_sorting_permutation(values in proptest::collection::vec(-1e6f64..1e6, 0..60)) {
            let order = argsort(&values);
            let mut seen = vec![false; values.len()];
            for &i in &order {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
            for pair in order.windows(2) {
                prop_assert!(values[pair[0]] <= values[pair[1]]);
            }
        }

        #[test]
        fn reshape_preserves_data(values in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let t = Tensor::new(&[3, 4], values.clone()).unwrap();
            let r = t.reshape(&[2, 2, 3]).unwrap();
            prop_assert_eq!(r.data(), &values[..]);
        }
    }

    // --- convolution ---------------------------------------------------

    #[test]
    fn conv_output_dims_basic_and_too_large() {
        assert_eq!(conv_output_dims(8, 8, 3, 3, 1, 0).unwrap(), (6, 6));
        assert_eq!(conv_output_dims(8, 8, 3, 3, 1, 1).unwrap(), (8, 8));
        assert_eq!(conv_output_dims(7, 7, 3, 3, 2, 0).unwrap(), (3, 3));
        assert!(matches!(
            conv_output_dims(2, 2, 5, 5, 1, 0),
            Err(Error::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn conv2d_unit_filter_scales_input() {
        let input = Tensor::filled(&[1, 3, 3], 1.0);
        let filters = Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let out = conv2d_forward(&input, &filters, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_zero_filters_give_zero_output() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let input = random_tensor(&[2, 6, 6], &mut rng);
        let filters = Tensor::zeros(&[3, 2, 3, 3]);
        let out = conv2d_forward(&input, &filters, 1, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    /// Direct six-nested-loop convolution used as the oracle.
    fn conv_naive(input: &Tensor, filters: &Tensor, stride: usize, padding: usize) -> Tensor {
        let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (co, _, kh, kw) = (
            filters.shape()[0],
            filters.shape()[1],
            filters.shape()[2],
            filters.shape()[3],
        );
        let (oh, ow) = conv_output_dims(h, w, kh, kw, stride, padding).unwrap();
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for oc in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    acc += input.at(&[ic, iy as usize, ix as usize])
                                        * filters.at(&[oc, ic, ky, kx]);
                                }
                            }
                        }
                    }
                    let off = out.offset(&[oc, oy, ox]);
                    out.data_mut()[off] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        for &(stride, padding) in &[(1usize, 0usize), (1, 1), (2, 0), (2, 1)] {
            let input = random_tensor(&[2, 8, 8], &mut rng);
            let filters = random_tensor(&[3, 2, 3, 3], &mut rng);
            let fast = conv2d_forward(&input, &filters, stride, padding).unwrap();
            let slow = conv_naive(&input, &filters, stride, padding);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-10, "stride {stride} pad {padding}");
            }
        }
    }

    #[test]
    fn conv2d_channel_mismatch_is_an_error() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let filters = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d_forward(&input, &filters, 1, 0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y — the defining
        // property the backward pass relies on.
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for &(stride, padding) in &[(1usize, 0usize), (1, 1), (2, 1)] {
            let x = random_tensor(&[2, 2, 5, 5], &mut rng);
            let unfolded = im2col(&x, 3, 3, stride, padding).unwrap();
            let y = random_tensor(unfolded.shape(), &mut rng);
            let folded = col2im(&y, 2, 2, 5, 5, 3, 3, stride, padding).unwrap();
            let lhs: f64 = unfolded.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(folded.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9, "stride {stride} pad {padding}");
        }
    }

    #[test]
    fn im2col_shape_and_padding_zeroes() {
        let x = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let cols = im2col(&x, 3, 3, 1, 1).unwrap();
        // 2x2 input, 3x3 kernel, pad 1 -> 2x2 output positions.
        assert_eq!(cols.shape(), &[4, 9]);
        // First patch is centred at (0, 0): top row and left column padded.
        let first = &cols.data()[..9];
        assert_eq!(first, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
