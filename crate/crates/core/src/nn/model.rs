//! Three-level encoder-decoder with a segmentation head and a projection head.
//!
//! ```text
//! input (2, H, W) ──enc1(8)──┬─────────────────────────────┐
//!                    pool    │                             │
//!                  enc2(16)──┼──────────────┐              │
//!                    pool    │              │              │
//!                  enc3(32) ─┘ up ─ cat ─ dec2(16) ─ up ─ cat ─ dec1(8) ─┬─ 1x1 → sigmoid  (seg)
//!                                                                      └─ 1x1 → L2 norm  (proj, 16)
//! ```
//!
//! Every encoder/decoder stage is two 3x3 convolutions with ReLU.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::util::Fnv1a;

/// Embedding width of the projection head.
pub const PROJ_DIM: usize = 16;
/// Input channels: image and prior.
pub const IN_CHANNELS: usize = 2;

/// `(name, in_channels, out_channels, kernel)` for every convolution, in order.
pub const LAYOUT: [(&str, usize, usize, usize); 12] = [
    ("enc1.conv1", 2, 8, 3),
    ("enc1.conv2", 8, 8, 3),
    ("enc2.conv1", 8, 16, 3),
    ("enc2.conv2", 16, 16, 3),
    ("enc3.conv1", 16, 32, 3),
    ("enc3.conv2", 32, 32, 3),
    ("dec2.conv1", 48, 16, 3),
    ("dec2.conv2", 16, 16, 3),
    ("dec1.conv1", 24, 8, 3),
    ("dec1.conv2", 8, 8, 3),
    ("seg_head", 8, 1, 1),
    ("proj_head", 8, PROJ_DIM, 1),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `(cout, cin, k, k)` row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    fn zeros(name: &str, cin: usize, cout: usize, k: usize) -> Self {
        ConvLayer {
            name: name.into(),
            cin,
            cout,
            k,
            weight: alloc::vec![T::ZERO; cout * cin * k * k],
            bias: alloc::vec![T::ZERO; cout],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// All trainable tensors. Gradients and optimizer moments share this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Real> ModelParams<T> {
    /// Zero-valued parameters with the standard layout.
    pub fn zeros() -> Self {
        ModelParams {
            layers: LAYOUT
                .iter()
                .map(|&(n, ci, co, k)| ConvLayer::zeros(n, ci, co, k))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(&l.name, l.cin, l.cout, l.k))
                .collect(),
        }
    }

    /// Fan-in scaled uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros();
        for layer in &mut params.layers {
            let bound = libm::sqrt(6.0 / layer.fan_in() as f64);
            for w in &mut layer.weight {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        params
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat views `(weight, bias)` of every layer, in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.cin == b.cin && a.cout == b.cout && a.k == b.k && a.name == b.name
            })
    }

    pub fn check_finite(&self) -> Result<()> {
        for l in &self.layers {
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(l.name.clone()));
            }
        }
        Ok(())
    }

    /// FNV-1a over the little-endian bytes of every value.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        for t in self.tensors() {
            for v in t {
                h.write(&v.to_f64().to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn scale(&mut self, s: T) {
        self.tensors_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    cin: l.cin,
                    cout: l.cout,
                    k: l.k,
                    weight: l.weight.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Segmentation probabilities and per-pixel embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutputs<T> {
    /// `(1, H, W)`, values in `(0, 1)`.
    pub seg_prob: Tensor<T>,
    /// `(PROJ_DIM, H, W)`, unit norm per pixel.
    pub proj: Tensor<T>,
}

/// A recorded forward pass ready for [`Tape::backward`].
#[derive(Debug)]
pub struct ForwardPass<T> {
    pub tape: Tape<T>,
    pub seg: NodeId,
    pub proj: NodeId,
}

impl<T: Real> ForwardPass<T> {
    pub fn seg_prob(&self) -> &Tensor<T> {
        self.tape.value(self.seg)
    }

    pub fn proj(&self) -> &Tensor<T> {
        self.tape.value(self.proj)
    }

    pub fn outputs(&self) -> NetworkOutputs<T> {
        NetworkOutputs {
            seg_prob: self.seg_prob().clone(),
            proj: self.proj().clone(),
        }
    }
}

fn check_input<T: Real>(input: &Tensor<T>) -> Result<()> {
    if input.channels != IN_CHANNELS {
        return Err(Error::Shape(alloc::format!(
            "expected {IN_CHANNELS} input channels, got {}",
            input.channels
        )));
    }
    if input.height % 4 != 0 || input.width % 4 != 0 || input.height == 0 || input.width == 0 {
        return Err(Error::Shape(alloc::format!(
            "input {}x{} is not divisible by 4",
            input.height,
            input.width
        )));
    }
    input.check_finite("network input")
}

/// Runs the network on one `(2, H, W)` input and keeps the tape.
pub fn forward<T: Real>(params: &ModelParams<T>, input: Tensor<T>) -> Result<ForwardPass<T>> {
    check_input(&input)?;
    let mut t = Tape::new();
    let x = t.input(input);
    let block = |t: &mut Tape<T>, x: NodeId, first: usize| -> Result<NodeId> {
        let a = t.conv(params, x, first)?;
        let a = t.relu(a);
        let b = t.conv(params, a, first + 1)?;
        Ok(t.relu(b))
    };
    let e1 = block(&mut t, x, 0)?;
    let p1 = t.maxpool2(e1)?;
    let e2 = block(&mut t, p1, 2)?;
    let p2 = t.maxpool2(e2)?;
    let e3 = block(&mut t, p2, 4)?;
    let u2 = t.upsample2(e3);
    let c2 = t.concat(u2, e2)?;
    let d2 = block(&mut t, c2, 6)?;
    let u1 = t.upsample2(d2);
    let c1 = t.concat(u1, e1)?;
    let d1 = block(&mut t, c1, 8)?;
    let logits = t.conv(params, d1, 10)?;
    let seg = t.sigmoid(logits);
    let raw = t.conv(params, d1, 11)?;
    let proj = t.l2_normalize(raw);
    t.value(seg).check_finite("segmentation output")?;
    t.value(proj).check_finite("projection output")?;
    Ok(ForwardPass { tape: t, seg, proj })
}

/// Forward pass without keeping the tape around.
pub fn predict<T: Real>(params: &ModelParams<T>, input: Tensor<T>) -> Result<NetworkOutputs<T>> {
    forward(params, input).map(|f| f.outputs())
}

/// Runs each input of a batch independently.
pub fn predict_batch<T: Real>(
    params: &ModelParams<T>,
    inputs: &[Tensor<T>],
) -> Result<Vec<NetworkOutputs<T>>> {
    inputs.iter().map(|x| predict(params, x.clone())).collect()
}
