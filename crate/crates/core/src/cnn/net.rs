//! Batched forward and backward passes, generic over the element type.

use super::spec::{LayerSpec, NetworkSpec, Shape};
use super::tensor::{gemm, Op, ParamSet, Scalar};

/// Everything the backward pass needs from a forward pass.
pub(crate) struct Trace<T> {
    pub batch: usize,
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    pub activations: Vec<Vec<T>>,
    /// Winning input offset (within one image) for every pooled output, per pooling layer.
    pub pool_argmax: Vec<Option<Vec<u32>>>,
}

impl<T: Scalar> Trace<T> {
    /// Final softmax rows, `batch × classes`.
    pub fn probabilities(&self) -> &[T] {
        self.activations.last().unwrap()
    }

    /// Piecewise-linear region the pass went through: ReLU input signs and pool winners.
    pub fn activation_pattern(&self, spec: &NetworkSpec) -> (Vec<bool>, Vec<u32>) {
        let mut signs = Vec::new();
        let mut winners = Vec::new();
        for (i, layer) in spec.layers().iter().enumerate() {
            match layer {
                LayerSpec::Relu => signs.extend(self.activations[i].iter().map(|&v| v > T::zero())),
                LayerSpec::MaxPool2d { .. } => winners.extend(self.pool_argmax[i].as_ref().unwrap()),
                _ => {}
            }
        }
        (signs, winners)
    }
}

/// Maps layer index to the position of its weight tensor in the parameter set.
fn param_offsets(spec: &NetworkSpec) -> Vec<Option<usize>> {
    let mut next = 0;
    spec.layers()
        .iter()
        .map(|l| {
            l.has_params().then(|| {
                let at = next;
                next += 2;
                at
            })
        })
        .collect()
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(layer: &LayerSpec, input: Shape, output: Shape) -> Self {
        match (*layer, input, output) {
            (
                LayerSpec::Conv2d {
                    kernel: (kh, kw),
                    stride,
                    padding,
                    ..
                },
                Shape::Image { c, h, w },
                Shape::Image { h: oh, w: ow, .. },
            ) => Self {
                c,
                h,
                w,
                kh,
                kw,
                stride,
                pad: padding,
                oh,
                ow,
            },
            _ => unreachable!("validated spec"),
        }
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Input pixel under kernel offset `(ki, kj)` at output `(oy, ox)`, if not padding.
    #[inline]
    fn source(&self, ki: usize, kj: usize, oy: usize, ox: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.pad)?;
        let x = (ox * self.stride + kj).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let n = self.out_len();
        for ch in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ch * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            dst[oy * self.ow + ox] = match self.source(ki, kj, oy, ox) {
                                Some((y, x)) => image[(ch * self.h + y) * self.w + x],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let n = self.out_len();
        for ch in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ch * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, x)) = self.source(ki, kj, oy, ox) {
                                image[(ch * self.h + y) * self.w + x] =
                                    image[(ch * self.h + y) * self.w + x] + src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Runs the network on `batch` images stored back to back in `input`.
pub(crate) fn forward_trace<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    input: &[T],
    batch: usize,
) -> Trace<T> {
    debug_assert_eq!(input.len(), batch * spec.input_len());
    let offsets = param_offsets(spec);
    let mut activations = vec![input.to_vec()];
    let mut pool_argmax = Vec::with_capacity(spec.layers().len());

    for (i, layer) in spec.layers().iter().enumerate() {
        let x = activations.last().unwrap();
        let in_shape = spec.shape(i);
        let out_shape = spec.shape(i + 1);
        let in_len = in_shape.len();
        let out_len = out_shape.len();
        let mut y = vec![T::zero(); batch * out_len];
        let mut argmax = None;
        match *layer {
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = ConvGeom::new(layer, in_shape, out_shape);
                let p = offsets[i].unwrap();
                let (weight, bias) = (&params.tensors[p].data, &params.tensors[p + 1].data);
                let mut cols = vec![T::zero(); g.patch_len() * g.out_len()];
                for b in 0..batch {
                    g.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
                    let out = &mut y[b * out_len..(b + 1) * out_len];
                    for (o, row) in out.chunks_mut(g.out_len()).enumerate() {
                        row.fill(bias[o]);
                    }
                    gemm(out_channels, g.patch_len(), g.out_len(), weight, Op::N, &cols, Op::N, out, true);
                }
            }
            LayerSpec::Relu => {
                for (o, &v) in y.iter_mut().zip(x) {
                    *o = if v > T::zero() { v } else { T::zero() };
                }
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let (Shape::Image { c, h, w }, Shape::Image { h: oh, w: ow, .. }) = (in_shape, out_shape) else {
                    unreachable!("validated spec")
                };
                let mut winners = vec![0u32; batch * out_len];
                for b in 0..batch {
                    let img = &x[b * in_len..(b + 1) * in_len];
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = (oy * stride * w + ox * stride) + ch * h * w;
                                for dy in 0..window {
                                    for dx in 0..window {
                                        let idx = ch * h * w + (oy * stride + dy) * w + ox * stride + dx;
                                        // strict comparison keeps the first maximum in row-major order
                                        if img[idx] > img[best] {
                                            best = idx;
                                        }
                                    }
                                }
                                let o = (ch * oh + oy) * ow + ox;
                                y[b * out_len + o] = img[best];
                                winners[b * out_len + o] = best as u32;
                            }
                        }
                    }
                }
                argmax = Some(winners);
            }
            LayerSpec::Flatten => y.copy_from_slice(x),
            LayerSpec::Dense { out_features } => {
                let p = offsets[i].unwrap();
                let (weight, bias) = (&params.tensors[p].data, &params.tensors[p + 1].data);
                for row in y.chunks_mut(out_features) {
                    row.copy_from_slice(bias);
                }
                gemm(batch, in_len, out_features, x, Op::N, weight, Op::T, &mut y, true);
            }
            LayerSpec::Softmax => {
                for (src, dst) in x.chunks(in_len).zip(y.chunks_mut(out_len)) {
                    softmax_row(src, dst);
                }
            }
        }
        activations.push(y);
        pool_argmax.push(argmax);
    }
    Trace {
        batch,
        activations,
        pool_argmax,
    }
}

pub(crate) fn softmax_row<T: Scalar>(logits: &[T], out: &mut [T]) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// Gradient of the mean cross-entropy with respect to the softmax input:
/// `(p − y) / batch`.
pub fn softmax_input_gradient<T: Scalar>(probs: &[T], targets: &[usize], classes: usize) -> Vec<T> {
    let batch = targets.len();
    let scale = T::one() / T::from_f64(batch as f64);
    let mut g = probs.to_vec();
    for (row, &t) in g.chunks_mut(classes).zip(targets) {
        row[t] = row[t] - T::one();
        for v in row.iter_mut() {
            *v = *v * scale;
        }
    }
    g
}

/// Gradients of the mean cross-entropy over the traced batch.
pub(crate) fn backward_trace<T: Scalar>(
    spec: &NetworkSpec,
    params: &ParamSet<T>,
    trace: &Trace<T>,
    targets: &[usize],
) -> ParamSet<T> {
    let batch = trace.batch;
    let offsets = param_offsets(spec);
    let mut grads = params.zeros_like();
    let n_layers = spec.layers().len();
    let mut delta = softmax_input_gradient(trace.probabilities(), targets, spec.classes());

    // softmax is always last and already folded into `delta`
    for i in (0..n_layers - 1).rev() {
        let layer = &spec.layers()[i];
        let x = &trace.activations[i];
        let in_shape = spec.shape(i);
        let out_shape = spec.shape(i + 1);
        let in_len = in_shape.len();
        let out_len = out_shape.len();
        let need_input_grad = i > 0;
        let mut dx = vec![T::zero(); if need_input_grad { batch * in_len } else { 0 }];
        match *layer {
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = ConvGeom::new(layer, in_shape, out_shape);
                let p = offsets[i].unwrap();
                let weight = &params.tensors[p].data;
                let mut cols = vec![T::zero(); g.patch_len() * g.out_len()];
                let mut dcols = vec![T::zero(); g.patch_len() * g.out_len()];
                let (gw, rest) = grads.tensors.split_at_mut(p + 1);
                let (gw, gb) = (&mut gw[p].data, &mut rest[0].data);
                for b in 0..batch {
                    let dout = &delta[b * out_len..(b + 1) * out_len];
                    g.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
                    gemm(out_channels, g.out_len(), g.patch_len(), dout, Op::N, &cols, Op::T, gw, true);
                    for (o, row) in dout.chunks(g.out_len()).enumerate() {
                        gb[o] = row.iter().fold(gb[o], |acc, &v| acc + v);
                    }
                    if need_input_grad {
                        gemm(g.patch_len(), out_channels, g.out_len(), weight, Op::T, dout, Op::N, &mut dcols, false);
                        g.col2im(&dcols, &mut dx[b * in_len..(b + 1) * in_len]);
                    }
                }
            }
            LayerSpec::Relu => {
                for ((d, &v), &g) in dx.iter_mut().zip(x).zip(&delta) {
                    *d = if v > T::zero() { g } else { T::zero() };
                }
            }
            LayerSpec::MaxPool2d { .. } => {
                let winners = trace.pool_argmax[i].as_ref().unwrap();
                if need_input_grad {
                    for b in 0..batch {
                        for o in 0..out_len {
                            let src = b * in_len + winners[b * out_len + o] as usize;
                            dx[src] = dx[src] + delta[b * out_len + o];
                        }
                    }
                }
            }
            LayerSpec::Flatten => {
                if need_input_grad {
                    dx.copy_from_slice(&delta);
                }
            }
            LayerSpec::Dense { out_features } => {
                let p = offsets[i].unwrap();
                let weight = &params.tensors[p].data;
                let (gw, rest) = grads.tensors.split_at_mut(p + 1);
                gemm(out_features, batch, in_len, &delta, Op::T, x, Op::N, &mut gw[p].data, false);
                let gb = &mut rest[0].data;
                for row in delta.chunks(out_features) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                if need_input_grad {
                    gemm(batch, out_features, in_len, &delta, Op::N, weight, Op::N, &mut dx, false);
                }
            }
            LayerSpec::Softmax => unreachable!("softmax is last"),
        }
        delta = dx;
    }
    grads
}
