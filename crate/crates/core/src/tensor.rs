//! Dense row-major tensors over `f64` and the handful of array operations the
//! rest of the crate is built on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape-tagged dense array of 64-bit floats, row-major.
///
/// The shape is fixed at construction; `product(shape) == data.len()` always
/// holds. Values are freely shareable for concurrent reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::domain(format!("zero extent in shape {shape:?}")));
        }
        if expected != data.len() {
            return Err(Error::domain(format!(
                "shape {shape:?} wants {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Identity matrix of extent `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

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

    /// Value at a multi-index; panics on rank mismatch, for test ergonomics.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of bounds at axis {i}");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim("elementwise op", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::dim("matmul (rank-2 required)", &self.shape, &other.shape));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Matrix-vector product (rank-2 times rank-1).
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || v.rank() != 1 || self.shape[1] != v.shape[0] {
            return Err(Error::dim("matvec", &self.shape, &v.shape));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            out[i] = row.iter().zip(v.data()).map(|(&a, &b)| a * b).sum();
        }
        Ok(Tensor::from_vec(out))
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| x.max(0.0))
    }

    /// Softmax over the last axis (rank 1: the whole vector; rank 2: per row).
    pub fn softmax(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::domain("softmax over empty tensor"));
        }
        let cols = *self.shape.last().unwrap();
        let mut out = self.data.clone();
        for row in out.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Index of the maximum value; first index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `input` is `C x H x W`, `kernels` is `F x C x kh x kw`, `bias` has length
/// `F`. Output is `F x H' x W'` with `H' = (H + 2 pad - kh) / stride + 1`.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (c, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::dim("conv2d input (CxHxW required)", s, &[])),
    };
    let (f, kc, kh, kw) = match kernels.shape() {
        [f, kc, kh, kw] => (*f, *kc, *kh, *kw),
        s => return Err(Error::dim("conv2d kernels (FxCxKHxKW required)", s, &[])),
    };
    if kc != c {
        return Err(Error::dim("conv2d channels", input.shape(), kernels.shape()));
    }
    if bias.shape() != [f] {
        return Err(Error::dim("conv2d bias", bias.shape(), &[f]));
    }
    if stride == 0 {
        return Err(Error::domain("conv2d stride must be positive"));
    }
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(Error::dim("conv2d kernel exceeds padded input", &[h + 2 * pad, w + 2 * pad], &[kh, kw]));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; f * oh * ow];
    for fi in 0..f {
        let b = bias.data()[fi];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += x[(ci * h + iy as usize) * w + ix as usize]
                                * k[((fi * c + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(fi * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![f, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        let b = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(i2.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_small_case() {
        // Frozen from the triple-loop oracle below.
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::zeros(&[2, 2]);
        let b = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        assert_eq!(z.matmul(&b).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    /// Triple-loop reference used as an independent oracle.
    fn matmul_naive(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out.data_mut()[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = SeededRng::new(11);
        for _ in 0..10 {
            let a = random_tensor(&mut rng, &[4, 3]);
            let b = random_tensor(&mut rng, &[3, 5]);
            let got = a.matmul(&b).unwrap();
            let want = matmul_naive(&a, &b);
            for (x, y) in got.data().iter().zip(want.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_associative_within_tolerance() {
        let mut rng = SeededRng::new(12);
        for _ in 0..5 {
            let a = random_tensor(&mut rng, &[3, 4]);
            let b = random_tensor(&mut rng, &[4, 2]);
            let c = random_tensor(&mut rng, &[2, 5]);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let denom = left.max_abs().max(1e-12);
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() / denom < 1e-9);
            }
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = SeededRng::new(13);
        let x = random_tensor(&mut rng, &[1, 4, 4]);
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &k, &b, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv2d_zero_kernel() {
        let mut rng = SeededRng::new(14);
        let x = random_tensor(&mut rng, &[2, 5, 5]);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &k, &b, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    /// Naive 4-loop oracle for a single-channel single-filter convolution.
    fn conv_naive_1x1ch(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (kh, kw) = (k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[1, oh, ow]);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            acc += x.at(&[0, iy as usize, ix as usize]) * k.at(&[0, 0, ky as usize, kx as usize]);
                        }
                    }
                }
                out.data_mut()[oy * ow + ox] = acc;
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_oracle() {
        let mut rng = SeededRng::new(15);
        let x = random_tensor(&mut rng, &[1, 4, 4]);
        let k = random_tensor(&mut rng, &[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        for &(stride, pad) in &[(1usize, 0usize), (1, 1), (2, 1)] {
            let got = conv2d(&x, &k, &b, stride, pad).unwrap();
            let want = conv_naive_1x1ch(&x, &k, stride, pad);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_kernel_too_large() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d(&x, &k, &b, 1, 0).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry_and_probability() {
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        let p = x.softmax().unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let mut rng = SeededRng::new(16);
        for _ in 0..20 {
            let x = random_tensor(&mut rng, &[7]);
            let p = x.softmax().unwrap();
            assert!(p.data().iter().all(|&v| v >= 0.0));
            assert!((p.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn norms_hand_arithmetic() {
        let x = Tensor::from_vec(vec![3.0, -4.0]);
        assert_eq!(x.l1_norm(), 7.0);
        assert_eq!(x.l2_norm(), 5.0);
    }
}
