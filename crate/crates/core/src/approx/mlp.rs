// SPDX-License-Identifier: Apache-2.0

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MLP_DOC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    /// `d_in x d_out`, so a batch forward is `x . w + b`.
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Fully connected network: tanh on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Layer>,
}

/// Activations cached by [`Mlp::forward_batch`] for the backward pass.
pub struct Tape {
    /// `acts[k]` is the input to layer `k`.
    acts: Vec<Array2<f64>>,
}

/// Parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) w: Vec<Array2<f64>>,
    pub(crate) b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|a| a.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }

    /// Flattened view in the same order as [`Mlp::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.w[layer]
    }

    pub fn bias(&self, layer: usize) -> &Array1<f64> {
        &self.b[layer]
    }
}

impl Mlp {
    /// Seeded uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        assert!(dims.iter().all(|&d| d > 0), "layer widths must be positive");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let bound = 1.0 / (d_in as f64).sqrt();
                Layer {
                    w: Array2::from_shape_simple_fn((d_in, d_out), || rng.random_range(-bound..bound)),
                    b: Array1::from_shape_simple_fn(d_out, || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Mlp {
            dims: dims.to_vec(),
            layers,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[0], w[1])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Mlp {
            dims: dims.to_vec(),
            layers,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.layers[layer].w
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        &mut self.layers[layer].b
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), x.len()));
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        Ok(self.infer(view).into_raw_vec_and_offset().0)
    }

    /// Batch forward without keeping a tape.
    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.ncols(), self.input_dim(), "network input width");
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if k < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        assert_eq!(x.ncols(), self.input_dim(), "network input width");
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w) + &l.b;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(h);
            h = z;
        }
        (h, Tape { acts })
    }

    /// Reverse-mode pass: returns parameter gradients and the gradient with
    /// respect to the input batch, given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> (Gradients, Array2<f64>) {
        assert_eq!(upstream.ncols(), self.output_dim(), "upstream gradient width");
        let n = self.layers.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for k in (0..n).rev() {
            let a = &tape.acts[k];
            gw.push(a.t().dot(&delta));
            gb.push(delta.sum_axis(Axis(0)));
            let mut prev = delta.dot(&self.layers[k].w.t());
            if k > 0 {
                // a = tanh(z) so da/dz = 1 - a^2
                prev.zip_mut_with(a, |d, &act| *d *= 1.0 - act * act);
            }
            delta = prev;
        }
        gw.reverse();
        gb.reverse();
        (Gradients { w: gw, b: gb }, delta)
    }

    /// `self = tau * online + (1 - tau) * self`.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) {
        assert_eq!(self.dims, online.dims);
        if tau >= 1.0 {
            self.layers.clone_from(&online.layers);
            return;
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.w.zip_mut_with(&o.w, |a, &b| *a = tau * b + (1.0 - tau) * *a);
            t.b.zip_mut_with(&o.b, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }

    pub(crate) fn apply<F: FnMut(&mut f64, f64, usize)>(&mut self, grads: &Gradients, mut f: F) {
        let mut idx = 0;
        for (l, (gw, gb)) in self.layers.iter_mut().zip(grads.w.iter().zip(&grads.b)) {
            for (p, &g) in l.w.iter_mut().zip(gw.iter()) {
                f(p, g, idx);
                idx += 1;
            }
            for (p, &g) in l.b.iter_mut().zip(gb.iter()) {
                f(p, g, idx);
                idx += 1;
            }
        }
    }

    pub fn to_doc(&self) -> MlpDoc {
        MlpDoc {
            version: MLP_DOC_VERSION,
            layer_dims: self.dims.clone(),
            activation: "tanh".to_string(),
            weights: self.layers.iter().map(|l| l.w.iter().copied().collect()).collect(),
            biases: self.layers.iter().map(|l| l.b.to_vec()).collect(),
        }
    }

    pub fn from_doc(doc: &MlpDoc) -> Result<Self> {
        if doc.version != MLP_DOC_VERSION {
            return Err(Error::Checkpoint(format!("unsupported network version {}", doc.version)));
        }
        if doc.activation != "tanh" {
            return Err(Error::Checkpoint(format!("unsupported activation {:?}", doc.activation)));
        }
        let dims = &doc.layer_dims;
        if dims.len() < 2 || doc.weights.len() != dims.len() - 1 || doc.biases.len() != dims.len() - 1 {
            return Err(Error::Checkpoint("layer count mismatch".into()));
        }
        let mut layers = Vec::new();
        for (k, w) in dims.windows(2).enumerate() {
            let wv = Array2::from_shape_vec((w[0], w[1]), doc.weights[k].clone())
                .map_err(|e| Error::Checkpoint(format!("layer {k} weights: {e}")))?;
            if doc.biases[k].len() != w[1] {
                return Err(Error::Checkpoint(format!("layer {k} bias length")));
            }
            layers.push(Layer {
                w: wv,
                b: Array1::from(doc.biases[k].clone()),
            });
        }
        Ok(Mlp {
            dims: dims.clone(),
            layers,
        })
    }
}

/// Serialized network: row-major `d_in x d_out` weight arrays per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpDoc {
    pub version: u32,
    pub layer_dims: Vec<usize>,
    pub activation: String,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}
