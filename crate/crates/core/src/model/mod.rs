//! Layered network definition: forward evaluation with activation capture,
//! reverse-mode gradients, Adam training and a bit-exact binary container.

mod backprop;
mod io;
mod train;

pub use backprop::{GradTarget, Gradients, ParamGrad};
pub use io::{load, save};
pub use train::{TrainConfig, TrainLog};

use crate::error::{Error, Result};
use crate::refine::PcaBasis;
use crate::tensor::{conv2d, Tensor};

/// One layer of a sequential network.
#[derive(Debug, Clone)]
pub enum LayerSpec {
    /// Fully connected: `y = W a + b`, weight is `out x in`.
    Dense { weight: Tensor, bias: Tensor },
    /// 2-D cross-correlation with zero padding.
    Conv2D {
        kernels: Tensor,
        bias: Tensor,
        stride: usize,
        pad: usize,
    },
    ReLU,
    /// Channel-wise max pooling, ties broken by first index in row-major order.
    MaxPool { k: usize, stride: usize },
    Flatten,
    /// Soft-pruning multipliers in [0,1]: per unit on vectors, per channel on
    /// feature maps.
    Scale { coeff: Tensor },
    /// Soft-pruning in a rotated basis: `a <- U diag(c) U^T (a - mean) + mean`,
    /// applied per spatial position on feature maps.
    PcaScale { basis: PcaBasis, coeff: Tensor },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2D { .. } => "conv2d",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Scale { .. } => "scale",
            LayerSpec::PcaScale { .. } => "pca-scale",
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::Dense { weight, bias } => {
                let z = weight.matvec(x)?;
                z.add(bias)
            }
            LayerSpec::Conv2D {
                kernels,
                bias,
                stride,
                pad,
            } => conv2d(x, kernels, bias, *stride, *pad),
            LayerSpec::ReLU => Ok(x.relu()),
            LayerSpec::MaxPool { k, stride } => max_pool(x, *k, *stride),
            LayerSpec::Flatten => x.reshape(&[x.len()]),
            LayerSpec::Scale { coeff } => scale_forward(x, coeff),
            LayerSpec::PcaScale { basis, coeff } => pca_scale_forward(x, basis, coeff),
        }
    }

    /// Output shape for a given input shape, without touching data.
    pub fn infer_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { weight, .. } => {
                if input != [weight.shape()[1]] {
                    return Err(Error::dim("dense input", input, &[weight.shape()[1]]));
                }
                Ok(vec![weight.shape()[0]])
            }
            LayerSpec::Conv2D {
                kernels,
                stride,
                pad,
                ..
            } => {
                let (f, c, kh, kw) = (
                    kernels.shape()[0],
                    kernels.shape()[1],
                    kernels.shape()[2],
                    kernels.shape()[3],
                );
                match input {
                    [ci, h, w] if *ci == c && kh <= h + 2 * pad && kw <= w + 2 * pad => Ok(vec![
                        f,
                        (h + 2 * pad - kh) / stride + 1,
                        (w + 2 * pad - kw) / stride + 1,
                    ]),
                    _ => Err(Error::dim("conv2d input", input, kernels.shape())),
                }
            }
            LayerSpec::ReLU => Ok(input.to_vec()),
            LayerSpec::MaxPool { k, stride } => match input {
                [c, h, w] if k <= h && k <= w => {
                    Ok(vec![*c, (h - k) / stride + 1, (w - k) / stride + 1])
                }
                _ => Err(Error::dim("maxpool input", input, &[*k, *k])),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Scale { coeff } => {
                let n = coeff.len();
                match input {
                    [u] if *u == n => Ok(input.to_vec()),
                    [c, _, _] if *c == n => Ok(input.to_vec()),
                    _ => Err(Error::dim("scale input", input, coeff.shape())),
                }
            }
            LayerSpec::PcaScale { basis, .. } => {
                let n = basis.dim();
                match input {
                    [u] if *u == n => Ok(input.to_vec()),
                    [c, _, _] if *c == n => Ok(input.to_vec()),
                    _ => Err(Error::dim("pca-scale input", input, &[n])),
                }
            }
        }
    }
}

fn max_pool(x: &Tensor, k: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::dim("maxpool input (CxHxW required)", s, &[])),
    };
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(Error::domain(format!("maxpool k={k} stride={stride} on {h}x{w}")));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![0.0; c * oh * ow];
    let data = x.data();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        let v = data[(ci * h + oy * stride + ky) * w + ox * stride + kx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out[(ci * oh + oy) * ow + ox] = best;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

fn scale_forward(x: &Tensor, coeff: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [n] if *n == coeff.len() => x.zip_map(coeff, |a, c| a * c),
        [c, h, w] if *c == coeff.len() => {
            let mut out = x.clone();
            let plane = h * w;
            for (ci, &s) in coeff.data().iter().enumerate() {
                for v in &mut out.data_mut()[ci * plane..(ci + 1) * plane] {
                    *v *= s;
                }
            }
            Ok(out)
        }
        s => Err(Error::dim("scale input", s, coeff.shape())),
    }
}

/// `out = U diag(c) U^T v` (the symmetric projection part, no centering).
pub(crate) fn pca_symmetric_apply(basis: &PcaBasis, coeff: &Tensor, v: &[f64], out: &mut [f64]) {
    let n = basis.dim();
    let k = basis.components();
    let u = basis.basis().data();
    let c = coeff.data();
    let mut h = vec![0.0; k];
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for (kk, hk) in h.iter_mut().enumerate() {
            *hk += u[r * k + kk] * vr;
        }
    }
    for (hk, &ck) in h.iter_mut().zip(c) {
        *hk *= ck;
    }
    for (r, o) in out.iter_mut().enumerate().take(n) {
        let mut acc = 0.0;
        for (kk, &hk) in h.iter().enumerate() {
            acc += u[r * k + kk] * hk;
        }
        *o = acc;
    }
}

/// `v <- U diag(c) U^T (v - mean) + mean` on one channel/unit vector.
fn pca_scale_vector(v: &[f64], basis: &PcaBasis, coeff: &Tensor, out: &mut [f64]) {
    let mean = basis.mean().data();
    let centered: Vec<f64> = v.iter().zip(mean).map(|(&a, &m)| a - m).collect();
    pca_symmetric_apply(basis, coeff, &centered, out);
    for (o, &m) in out.iter_mut().zip(mean) {
        *o += m;
    }
}

fn pca_scale_forward(x: &Tensor, basis: &PcaBasis, coeff: &Tensor) -> Result<Tensor> {
    let n = basis.dim();
    if coeff.len() != basis.components() {
        return Err(Error::dim("pca-scale coeff", coeff.shape(), &[basis.components()]));
    }
    match x.shape() {
        [u] if *u == n => {
            let mut out = vec![0.0; n];
            pca_scale_vector(x.data(), basis, coeff, &mut out);
            Tensor::new(vec![n], out)
        }
        [c, h, w] if *c == n => {
            let mut out = vec![0.0; c * h * w];
            let plane = h * w;
            let mut chan = vec![0.0; n];
            let mut res = vec![0.0; n];
            for p in 0..plane {
                for ci in 0..n {
                    chan[ci] = x.data()[ci * plane + p];
                }
                pca_scale_vector(&chan, basis, coeff, &mut res);
                for ci in 0..n {
                    out[ci * plane + p] = res[ci];
                }
            }
            Tensor::new(vec![*c, *h, *w], out)
        }
        s => Err(Error::dim("pca-scale input", s, &[n])),
    }
}

/// Per-layer post-activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Tensor,
    /// One entry per layer, matching the layer's output shape.
    pub entries: Vec<Tensor>,
}

impl ActivationTrace {
    /// Activation at a site: the model input or a layer output.
    pub fn at(&self, site: Site) -> &Tensor {
        match site {
            Site::Input => &self.input,
            Site::Layer(l) => &self.entries[l],
        }
    }
}

/// A position in the activation stream where attributions or refinements
/// attach.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Input,
    /// Output of `layers[l]`.
    Layer(usize),
}

/// Ordered layer stack with the bookkeeping the refinement rules need.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
    /// Layer indices whose outputs are eligible for refinement (ReLU outputs
    /// by default).
    pub refinable_sites: Vec<usize>,
}

impl Model {
    /// Builds a model; refinable sites default to the output of every ReLU.
    pub fn new(layers: Vec<LayerSpec>, class_count: usize) -> Self {
        let refinable_sites = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::ReLU))
            .map(|(i, _)| i)
            .collect();
        Model {
            layers,
            class_count,
            refinable_sites,
        }
    }

    pub fn with_refinable_sites(mut self, sites: Vec<usize>) -> Self {
        self.refinable_sites = sites;
        self
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a).map_err(|e| Error::Layer {
                layer: l,
                message: e.to_string(),
            })?;
        }
        Ok(a)
    }

    /// Forward pass recording every layer output.
    pub fn forward_with_trace(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a).map_err(|e| Error::Layer {
                layer: l,
                message: e.to_string(),
            })?;
            entries.push(a.clone());
        }
        Ok((
            a,
            ActivationTrace {
                input: x.clone(),
                entries,
            },
        ))
    }

    /// Runs the sub-network downstream of `site` on activation `a`.
    pub fn forward_from(&self, site: Site, a: &Tensor) -> Result<Tensor> {
        let start = match site {
            Site::Input => 0,
            Site::Layer(l) => l + 1,
        };
        let mut v = a.clone();
        for (l, layer) in self.layers.iter().enumerate().skip(start) {
            v = layer.forward(&v).map_err(|e| Error::Layer {
                layer: l,
                message: e.to_string(),
            })?;
        }
        Ok(v)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    /// Output shape of every layer for the given input shape.
    pub fn output_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut s = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            s = layer.infer_shape(&s).map_err(|e| Error::Layer {
                layer: l,
                message: e.to_string(),
            })?;
            shapes.push(s.clone());
        }
        Ok(shapes)
    }

    /// Inserts a layer directly after `site`, remapping refinable sites.
    pub fn insert_after(&mut self, site: usize, layer: LayerSpec) {
        self.layers.insert(site + 1, layer);
        for s in &mut self.refinable_sites {
            if *s > site {
                *s += 1;
            }
        }
    }

    /// Index of the final dense layer, which must also be the last layer.
    pub fn last_dense_index(&self) -> Result<usize> {
        match self.layers.last() {
            Some(LayerSpec::Dense { .. }) => Ok(self.layers.len() - 1),
            _ => Err(Error::domain("model does not end with a dense layer")),
        }
    }

    /// Input features of the final dense layer for one sample.
    pub fn last_layer_features(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.last_dense_index()?;
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate().take(last) {
            a = layer.forward(&a).map_err(|e| Error::Layer {
                layer: l,
                message: e.to_string(),
            })?;
        }
        Ok(a)
    }

    /// Total number of trainable scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Dense { weight, bias } => weight.len() + bias.len(),
                LayerSpec::Conv2D { kernels, bias, .. } => kernels.len() + bias.len(),
                _ => 0,
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_layer_trace() {
        let m = Model::new(vec![LayerSpec::ReLU], 2);
        let (y, trace) = m.forward_with_trace(&Tensor::from_vec(vec![-1.0, -2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        assert_eq!(trace.entries.len(), 1);
        assert_eq!(trace.entries[0].data(), &[0.0, 0.0]);
    }

    #[test]
    fn dense_hand_case() {
        let m = Model::new(
            vec![LayerSpec::Dense {
                weight: Tensor::eye(2),
                bias: Tensor::from_vec(vec![1.0, 1.0]),
            }],
            2,
        );
        let y = m.forward(&Tensor::from_vec(vec![2.0, 3.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn identity_scale_is_noop() {
        let dense = LayerSpec::Dense {
            weight: Tensor::new(vec![2, 3], vec![0.2, -0.5, 1.0, 0.7, 0.1, -0.3]).unwrap(),
            bias: Tensor::from_vec(vec![0.1, -0.2]),
        };
        let base = Model::new(vec![dense.clone(), LayerSpec::ReLU], 2);
        let mut scaled = base.clone();
        scaled.insert_after(1, LayerSpec::Scale {
            coeff: Tensor::from_vec(vec![1.0, 1.0]),
        });
        let x = Tensor::from_vec(vec![0.3, -0.6, 0.9]);
        let a = base.forward(&x).unwrap();
        let b = scaled.forward(&x).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn forward_shape_error_names_layer() {
        let m = Model::new(
            vec![
                LayerSpec::ReLU,
                LayerSpec::Dense {
                    weight: Tensor::eye(3),
                    bias: Tensor::zeros(&[3]),
                },
            ],
            3,
        );
        let err = m.forward(&Tensor::from_vec(vec![1.0, 2.0])).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn maxpool_tie_first_index_wins() {
        // Gradient routing depends on the same argmax; forward just takes max.
        let x = Tensor::new(vec![1, 2, 2], vec![3.0, 3.0, 1.0, 0.0]).unwrap();
        let y = max_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn insert_after_remaps_sites() {
        let mut m = Model::new(
            vec![LayerSpec::ReLU, LayerSpec::Flatten, LayerSpec::ReLU],
            2,
        );
        assert_eq!(m.refinable_sites, vec![0, 2]);
        m.insert_after(0, LayerSpec::Scale {
            coeff: Tensor::from_vec(vec![1.0]),
        });
        assert_eq!(m.refinable_sites, vec![0, 3]);
    }
}
