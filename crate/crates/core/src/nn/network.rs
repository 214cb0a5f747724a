//! Layer definitions, parameter layout, forward and backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tensor::{gemm, Scalar, Tensor};
use super::NnError;
use crate::rng::keyed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        kernel: [usize; 2],
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    /// 2x2 max pooling with stride 2.
    MaxPool,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerSpec {
    pub fn conv3x3(in_ch: usize, out_ch: usize) -> Self {
        LayerSpec::Conv {
            kernel: [3, 3],
            in_ch,
            out_ch,
            stride: 1,
            padding: 1,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                kernel: [kh, kw],
                in_ch,
                out_ch,
                ..
            } => vec![vec![out_ch, in_ch, kh, kw], vec![out_ch]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            _ => Vec::new(),
        }
    }

    /// Output shape of a single sample, or `None` if the input does not fit.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv {
                kernel: [kh, kw],
                in_ch,
                out_ch,
                stride,
                padding,
            } => {
                let [c, h, w] = input else { return None };
                if *c != in_ch || stride == 0 || h + 2 * padding < kh || w + 2 * padding < kw {
                    return None;
                }
                Some(vec![
                    out_ch,
                    (h + 2 * padding - kh) / stride + 1,
                    (w + 2 * padding - kw) / stride + 1,
                ])
            }
            LayerSpec::Relu => Some(input.to_vec()),
            LayerSpec::MaxPool => {
                let [c, h, w] = input else { return None };
                (*h >= 2 && *w >= 2).then(|| vec![*c, h / 2, w / 2])
            }
            LayerSpec::Flatten => Some(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => {
                (input.len() == 1 && input[0] == inputs).then(|| vec![outputs])
            }
        }
    }
}

/// An ordered layer stack mapping `input` (channels, height, width) to
/// `classes` logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// conv3x3x16/relu/pool, conv3x3x32/relu/pool, conv3x3x64/relu/pool,
    /// dense 128/relu, dense 24.
    pub fn reference() -> Self {
        NetworkSpec {
            name: "reference-cnn".into(),
            input: [3, 64, 64],
            classes: 24,
            layers: vec![
                LayerSpec::conv3x3(3, 16),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::conv3x3(16, 32),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::conv3x3(32, 64),
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 64 * 8 * 8,
                    outputs: 128,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 24,
                },
            ],
        }
    }

    /// Per-sample activation shapes: the input followed by each layer output.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = shapes.last().expect("non-empty");
            let next = layer.output_shape(prev).ok_or_else(|| {
                NnError::ShapeMismatch(format!("layer {i} ({layer:?}) cannot take input {prev:?}"))
            })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let shapes = self.activation_shapes()?;
        let out = shapes.last().expect("non-empty");
        if out != &vec![self.classes] {
            return Err(NnError::ShapeMismatch(format!(
                "network output {out:?} is not [{}]",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| l.param_shapes()).collect()
    }

    /// Index of the first parameter tensor of each layer.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut next = 0;
        for l in &self.layers {
            offsets.push(next);
            next += l.param_shapes().len();
        }
        offsets
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("network spec serializes")
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    /// Fan-in scaled uniform weights, zero biases.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<Tensor<T>> {
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let shapes = layer.param_shapes();
            if shapes.is_empty() {
                continue;
            }
            let w_shape = &shapes[0];
            let fan_in: usize = w_shape[1..].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            let mut rng = keyed_rng("weight-init", &[seed, i as u64]);
            let n: usize = w_shape.iter().product();
            let w = (0..n).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
            params.push(Tensor::from_vec(w_shape, w));
            params.push(Tensor::zeros(&shapes[1]));
        }
        params
    }

    pub fn check_params<T: Scalar>(&self, params: &[Tensor<T>]) -> Result<(), NnError> {
        let expect = self.param_shapes();
        if params.len() != expect.len() || params.iter().zip(&expect).any(|(p, s)| &p.shape != s) {
            return Err(NnError::ShapeMismatch(format!(
                "parameter shapes {:?} do not match {expect:?}",
                params.iter().map(|p| p.shape.clone()).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

/// Every activation of a forward pass: `acts[0]` is the input batch and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub acts: Vec<Tensor<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.acts.last().expect("trace holds the input")
    }
}

pub(crate) struct ConvGeom {
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
    pub(crate) fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub(crate) fn p(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let dst = &mut col[row + oy * g.ow..row + (oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
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

pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[base + ix as usize] = dx[base + ix as usize] + col[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_geom(layer: &LayerSpec, input: &[usize]) -> ConvGeom {
    let LayerSpec::Conv {
        kernel: [kh, kw],
        stride,
        padding,
        ..
    } = *layer
    else {
        unreachable!("conv geometry of a non-conv layer")
    };
    let (c, h, w) = (input[0], input[1], input[2]);
    ConvGeom {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        oh: (h + 2 * padding - kh) / stride + 1,
        ow: (w + 2 * padding - kw) / stride + 1,
    }
}

/// Run the network on a batch shaped `[n, c, h, w]`.
pub fn forward<T: Scalar>(spec: &NetworkSpec, params: &[Tensor<T>], batch: &Tensor<T>) -> Result<Trace<T>, NnError> {
    spec.check_params(params)?;
    let shapes = spec.activation_shapes()?;
    if batch.shape.len() != 4 || batch.shape[1..] != shapes[0][..] {
        return Err(NnError::ShapeMismatch(format!(
            "batch {:?} does not match input {:?}",
            batch.shape, shapes[0]
        )));
    }
    let n = batch.shape[0];
    let offsets = spec.param_offsets();
    let mut acts = Vec::with_capacity(spec.layers.len() + 1);
    acts.push(batch.clone());
    for (li, layer) in spec.layers.iter().enumerate() {
        let x = acts.last().expect("non-empty");
        let in_shape = &shapes[li];
        let out_shape = &shapes[li + 1];
        let mut full = vec![n];
        full.extend_from_slice(out_shape);
        let mut y = Tensor::zeros(&full);
        match layer {
            LayerSpec::Conv { out_ch, .. } => {
                let g = conv_geom(layer, in_shape);
                let (w, b) = (&params[offsets[li]], &params[offsets[li] + 1]);
                let (k, p) = (g.k(), g.p());
                let in_len: usize = in_shape.iter().product();
                let mut col = vec![T::zero(); k * p];
                for s in 0..n {
                    im2col(&g, &x.data[s * in_len..(s + 1) * in_len], &mut col);
                    let out = &mut y.data[s * out_ch * p..(s + 1) * out_ch * p];
                    for (o, row) in out.chunks_exact_mut(p).enumerate() {
                        row.fill(b.data[o]);
                    }
                    gemm(*out_ch, k, p, &w.data, false, &col, false, T::one(), out);
                }
            }
            LayerSpec::Relu => {
                for (o, i) in y.data.iter_mut().zip(&x.data) {
                    *o = if *i > T::zero() { *i } else { T::zero() };
                }
            }
            LayerSpec::MaxPool => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                for s in 0..n {
                    for ch in 0..c {
                        let src = &x.data[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                        let dst = &mut y.data[(s * c + ch) * oh * ow..(s * c + ch + 1) * oh * ow];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let i0 = 2 * oy * w + 2 * ox;
                                let m = src[i0].max(src[i0 + 1]).max(src[i0 + w]).max(src[i0 + w + 1]);
                                dst[oy * ow + ox] = m;
                            }
                        }
                    }
                }
            }
            LayerSpec::Flatten => y.data.copy_from_slice(&x.data),
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = (&params[offsets[li]], &params[offsets[li] + 1]);
                for row in y.data.chunks_exact_mut(*outputs) {
                    row.copy_from_slice(&b.data);
                }
                gemm(n, *inputs, *outputs, &x.data, false, &w.data, true, T::one(), &mut y.data);
            }
        }
        acts.push(y);
    }
    Ok(Trace { acts })
}

/// Index of the first maximum within a 2x2 pooling window, in scan order.
#[inline]
pub(crate) fn pool_argmax<T: Scalar>(src: &[T], i0: usize, w: usize) -> usize {
    let cand = [i0, i0 + 1, i0 + w, i0 + w + 1];
    let mut best = cand[0];
    for &c in &cand[1..] {
        if src[c] > src[best] {
            best = c;
        }
    }
    best
}

/// Back-propagate `dlogits` through the trace. Returns parameter gradients
/// and, if requested, the gradient with respect to the input batch.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &[Tensor<T>],
    trace: &Trace<T>,
    dlogits: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(Vec<Tensor<T>>, Option<Tensor<T>>), NnError> {
    let mut grads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(&p.shape)).collect();
    let dx = backward_accumulate(spec, params, trace, dlogits, &mut grads, want_input_grad)?;
    Ok((grads, dx))
}

/// Like [`backward`], but adds the parameter gradients onto `grads`.
pub fn backward_accumulate<T: Scalar>(
    spec: &NetworkSpec,
    params: &[Tensor<T>],
    trace: &Trace<T>,
    dlogits: &Tensor<T>,
    grads: &mut [Tensor<T>],
    want_input_grad: bool,
) -> Result<Option<Tensor<T>>, NnError> {
    spec.check_params(grads)?;
    let shapes = spec.activation_shapes()?;
    let offsets = spec.param_offsets();
    if dlogits.shape != trace.logits().shape {
        return Err(NnError::ShapeMismatch(format!(
            "upstream gradient {:?} vs logits {:?}",
            dlogits.shape,
            trace.logits().shape
        )));
    }
    let n = dlogits.shape[0];
    let mut dy = dlogits.clone();
    for li in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[li];
        let x = &trace.acts[li];
        let in_shape = &shapes[li];
        // the first layer's input gradient is only needed on request
        let need_dx = li > 0 || want_input_grad;
        let mut dx = Tensor::zeros(&x.shape);
        match layer {
            LayerSpec::Conv { out_ch, .. } => {
                let g = conv_geom(layer, in_shape);
                let (k, p) = (g.k(), g.p());
                let in_len: usize = in_shape.iter().product();
                let w = &params[offsets[li]];
                let mut col = vec![T::zero(); k * p];
                let mut dcol = vec![T::zero(); k * p];
                for s in 0..n {
                    let dout = &dy.data[s * out_ch * p..(s + 1) * out_ch * p];
                    im2col(&g, &x.data[s * in_len..(s + 1) * in_len], &mut col);
                    gemm(*out_ch, p, k, dout, false, &col, true, T::one(), &mut grads[offsets[li]].data);
                    let db = &mut grads[offsets[li] + 1].data;
                    for (o, row) in dout.chunks_exact(p).enumerate() {
                        db[o] = db[o] + row.iter().copied().sum::<T>();
                    }
                    if need_dx {
                        gemm(k, *out_ch, p, &w.data, true, dout, false, T::zero(), &mut dcol);
                        col2im(&g, &dcol, &mut dx.data[s * in_len..(s + 1) * in_len]);
                    }
                }
            }
            LayerSpec::Relu => {
                for ((d, g), xi) in dx.data.iter_mut().zip(&dy.data).zip(&x.data) {
                    *d = if *xi > T::zero() { *g } else { T::zero() };
                }
            }
            LayerSpec::MaxPool => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                for sc in 0..n * c {
                    let src = &x.data[sc * h * w..(sc + 1) * h * w];
                    let up = &dy.data[sc * oh * ow..(sc + 1) * oh * ow];
                    let dst = &mut dx.data[sc * h * w..(sc + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let a = pool_argmax(src, 2 * oy * w + 2 * ox, w);
                            dst[a] = dst[a] + up[oy * ow + ox];
                        }
                    }
                }
            }
            LayerSpec::Flatten => dx.data.copy_from_slice(&dy.data),
            LayerSpec::Dense { inputs, outputs } => {
                let w = &params[offsets[li]];
                gemm(*outputs, n, *inputs, &dy.data, true, &x.data, false, T::one(), &mut grads[offsets[li]].data);
                let db = &mut grads[offsets[li] + 1].data;
                for row in dy.data.chunks_exact(*outputs) {
                    for (b, g) in db.iter_mut().zip(row) {
                        *b = *b + *g;
                    }
                }
                if need_dx {
                    gemm(n, *outputs, *inputs, &dy.data, false, &w.data, false, T::zero(), &mut dx.data);
                }
            }
        }
        dy = dx;
    }
    Ok(want_input_grad.then_some(dy))
}
