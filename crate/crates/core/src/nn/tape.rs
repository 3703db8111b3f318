//! Reverse-mode tape over whole-tensor operations.
//!
//! Every op appends a node holding its output value plus whatever the
//! backward rule needs (im2col buffers, pooling winners, norms). `backward`
//! consumes the tape, walks the nodes in reverse creation order and
//! accumulates gradients into a parameter-shaped buffer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::model::ModelParams;
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Conv {
        input: NodeId,
        layer: usize,
        /// im2col buffer for 3x3 kernels; 1x1 kernels read the input directly.
        cols: Option<Vec<T>>,
    },
    Relu(NodeId),
    MaxPool {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample(NodeId),
    Concat(NodeId, NodeId),
    Sigmoid(NodeId),
    L2Normalize {
        input: NodeId,
        norms: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded forward computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct TapeGradients<T> {
    pub params: ModelParams<T>,
    nodes: Vec<Option<Tensor<T>>>,
}

impl<T> TapeGradients<T> {
    /// Gradient reaching an intermediate node, if any flowed there.
    pub fn node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }
}

const NORM_EPS: f64 = 1e-12;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Same-padded convolution with the weights of `params.layers[layer]`.
    pub fn conv(&mut self, params: &ModelParams<T>, input: NodeId, layer: usize) -> Result<NodeId> {
        let spec = &params.layers[layer];
        let x = self.value(input);
        if x.channels != spec.cin {
            return Err(Error::Shape(format!(
                "layer {} expects {} channels, got {}",
                spec.name, spec.cin, x.channels
            )));
        }
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        let kk = spec.cin * spec.k * spec.k;
        let cols = (spec.k == 3).then(|| im2col3(x));
        let mut out = Tensor::zeros(spec.cout, h, w);
        let b: &[T] = cols.as_deref().unwrap_or(&x.data);
        unsafe {
            T::gemm(
                spec.cout,
                kk,
                hw,
                T::ONE,
                spec.weight.as_ptr(),
                kk as isize,
                1,
                b.as_ptr(),
                hw as isize,
                1,
                T::ZERO,
                out.data.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        for (co, row) in out.data.chunks_exact_mut(hw).enumerate() {
            let bias = spec.bias[co];
            row.iter_mut().for_each(|v| *v += bias);
        }
        Ok(self.push(out, Op::Conv { input, layer, cols }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let mut out = self.value(input).clone();
        out.data.iter_mut().for_each(|v| {
            if *v < T::ZERO {
                *v = T::ZERO
            }
        });
        self.push(out, Op::Relu(input))
    }

    /// 2x2 max pooling with stride 2; ties go to the first element in scan order.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.height % 2 != 0 || x.width % 2 != 0 {
            return Err(Error::Shape(format!(
                "cannot pool {}x{} by 2",
                x.height, x.width
            )));
        }
        let (c, h, w) = x.shape();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(c, oh, ow);
        let mut argmax = vec![0u32; c * oh * ow];
        for ch in 0..c {
            let src = x.channel(ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = 2 * oy * w + 2 * ox;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    let o = (ch * oh + oy) * ow + ox;
                    out.data[o] = src[best];
                    argmax[o] = best as u32;
                }
            }
        }
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let (c, h, w) = x.shape();
        let mut out = Tensor::zeros(c, 2 * h, 2 * w);
        for ch in 0..c {
            let src = x.channel(ch);
            let dst = &mut out.data[ch * 4 * h * w..(ch + 1) * 4 * h * w];
            for y in 0..2 * h {
                let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
                for (x2, d) in dst[y * 2 * w..(y + 1) * 2 * w].iter_mut().enumerate() {
                    *d = srow[x2 / 2];
                }
            }
        }
        self.push(out, Op::Upsample(input))
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.height != vb.height || va.width != vb.width {
            return Err(Error::Shape(format!(
                "concat of {}x{} and {}x{}",
                va.height, va.width, vb.height, vb.width
            )));
        }
        let mut data = Vec::with_capacity(va.data.len() + vb.data.len());
        data.extend_from_slice(&va.data);
        data.extend_from_slice(&vb.data);
        let out = Tensor::from_vec(va.channels + vb.channels, va.height, va.width, data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let mut out = self.value(input).clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = T::ONE / (T::ONE + (-*v).exp()));
        self.push(out, Op::Sigmoid(input))
    }

    /// Scales each pixel's channel vector to unit Euclidean norm.
    pub fn l2_normalize(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let (c, _, _) = x.shape();
        let p = x.plane();
        let eps = T::from_f64(NORM_EPS);
        let mut norms = vec![T::ZERO; p];
        for ch in 0..c {
            for (n, &v) in norms.iter_mut().zip(x.channel(ch)) {
                *n += v * v;
            }
        }
        norms.iter_mut().for_each(|n| *n = n.sqrt().max(eps));
        let mut out = x.clone();
        for ch in 0..c {
            for (v, &n) in out.data[ch * p..(ch + 1) * p].iter_mut().zip(&norms) {
                *v /= n;
            }
        }
        self.push(out, Op::L2Normalize { input, norms })
    }

    /// Back-propagates `seeds` (gradients of the loss w.r.t. chosen nodes).
    ///
    /// Consuming the tape enforces one backward pass per recorded forward.
    pub fn backward(
        self,
        params: &ModelParams<T>,
        seeds: &[(NodeId, &Tensor<T>)],
    ) -> Result<TapeGradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(id, g) in seeds {
            let node = &self.nodes[id.0];
            if !g.same_shape(&node.value) {
                return Err(Error::Shape(format!(
                    "seed shape {:?} for node of shape {:?}",
                    g.shape(),
                    node.value.shape()
                )));
            }
            g.check_finite("seed gradient")?;
            accumulate(&mut grads[id.0], g.clone());
        }
        let mut pgrads = params.zeros_like();
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    grads[i] = Some(g);
                }
                Op::Conv { input, layer, cols } => {
                    let spec = &params.layers[*layer];
                    let x = &self.nodes[input.0].value;
                    let hw = x.plane();
                    let kk = spec.cin * spec.k * spec.k;
                    let gl = &mut pgrads.layers[*layer];
                    for (co, row) in g.data.chunks_exact(hw).enumerate() {
                        gl.bias[co] += row.iter().copied().sum::<T>();
                    }
                    let b: &[T] = cols.as_deref().unwrap_or(&x.data);
                    unsafe {
                        T::gemm(
                            spec.cout,
                            hw,
                            kk,
                            T::ONE,
                            g.data.as_ptr(),
                            hw as isize,
                            1,
                            b.as_ptr(),
                            1,
                            hw as isize,
                            T::ONE,
                            gl.weight.as_mut_ptr(),
                            kk as isize,
                            1,
                        );
                    }
                    if matches!(self.nodes[input.0].op, Op::Input) {
                        continue;
                    }
                    let mut dcols = vec![T::ZERO; kk * hw];
                    unsafe {
                        T::gemm(
                            kk,
                            spec.cout,
                            hw,
                            T::ONE,
                            spec.weight.as_ptr(),
                            1,
                            kk as isize,
                            g.data.as_ptr(),
                            hw as isize,
                            1,
                            T::ZERO,
                            dcols.as_mut_ptr(),
                            hw as isize,
                            1,
                        );
                    }
                    let dx = if spec.k == 3 {
                        col2im3(&dcols, x.channels, x.height, x.width)
                    } else {
                        Tensor::from_vec(x.channels, x.height, x.width, dcols)?
                    };
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Relu(input) => {
                    let mut dx = g;
                    for (d, &y) in dx.data.iter_mut().zip(&node.value.data) {
                        if y <= T::ZERO {
                            *d = T::ZERO;
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::MaxPool { input, argmax } => {
                    let x = &self.nodes[input.0].value;
                    let p_in = x.plane();
                    let p_out = node.value.plane();
                    let mut dx = Tensor::zeros(x.channels, x.height, x.width);
                    for (o, (&gv, &src)) in g.data.iter().zip(argmax).enumerate() {
                        let ch = o / p_out;
                        dx.data[ch * p_in + src as usize] += gv;
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Upsample(input) => {
                    let x = &self.nodes[input.0].value;
                    let (c, h, w) = x.shape();
                    let mut dx = Tensor::zeros(c, h, w);
                    for ch in 0..c {
                        let src = &g.data[ch * 4 * h * w..(ch + 1) * 4 * h * w];
                        let dst = &mut dx.data[ch * h * w..(ch + 1) * h * w];
                        for y in 0..2 * h {
                            for x2 in 0..2 * w {
                                dst[(y / 2) * w + x2 / 2] += src[y * 2 * w + x2];
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Concat(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let split = va.data.len();
                    let (h, w) = (va.height, va.width);
                    let ga = Tensor::from_vec(va.channels, h, w, g.data[..split].to_vec())?;
                    let cb = self.nodes[b.0].value.channels;
                    let gb = Tensor::from_vec(cb, h, w, g.data[split..].to_vec())?;
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Sigmoid(input) => {
                    let mut dx = g;
                    for (d, &s) in dx.data.iter_mut().zip(&node.value.data) {
                        *d *= s * (T::ONE - s);
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::L2Normalize { input, norms } => {
                    // dx = (g - y (y . g)) / |x|
                    let y = &node.value;
                    let p = y.plane();
                    let mut dots = vec![T::ZERO; p];
                    for ch in 0..y.channels {
                        let (yc, gc) = (&y.data[ch * p..(ch + 1) * p], &g.data[ch * p..(ch + 1) * p]);
                        for ((d, &yv), &gv) in dots.iter_mut().zip(yc).zip(gc) {
                            *d += yv * gv;
                        }
                    }
                    let mut dx = g;
                    for ch in 0..y.channels {
                        let yc = &y.data[ch * p..(ch + 1) * p];
                        let dc = &mut dx.data[ch * p..(ch + 1) * p];
                        for (j, d) in dc.iter_mut().enumerate() {
                            *d = (*d - yc[j] * dots[j]) / norms[j];
                        }
                    }
                    accumulate(&mut grads[input.0], dx);
                }
            }
        }
        pgrads.check_finite()?;
        Ok(TapeGradients {
            params: pgrads,
            nodes: grads,
        })
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Column buffer for a 3x3 same-padded convolution: row `ci*9 + ky*3 + kx`
/// holds the input shifted by `(ky-1, kx-1)`, zero outside the image.
fn im2col3<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let (c, h, w) = x.shape();
    let hw = h * w;
    let mut cols = vec![T::ZERO; c * 9 * hw];
    for ci in 0..c {
        let src = x.channel(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    let drow = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                        1 => drow.copy_from_slice(srow),
                        _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3`].
fn col2im3<T: Real>(cols: &[T], c: usize, h: usize, w: usize) -> Tensor<T> {
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    let srow = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => drow[..w - 1].iter_mut().zip(&srow[1..]).for_each(|(d, &s)| *d += s),
                        1 => drow.iter_mut().zip(srow).for_each(|(d, &s)| *d += s),
                        _ => drow[1..].iter_mut().zip(&srow[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_adjoint_identity() {
        // <im2col(x), y> == <x, col2im(y)> for arbitrary x, y.
        let (c, h, w) = (2, 5, 4);
        let x = Tensor::from_vec(
            c,
            h,
            w,
            (0..c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect(),
        )
        .unwrap();
        let cols = im2col3(&x);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im3(&y, c, h, w);
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        // Centre tap reproduces the input.
        assert_eq!(&cols[4 * h * w..5 * h * w], x.channel(0));
    }
}
