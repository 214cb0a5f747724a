//! Layer-wise relevance propagation and heatmap rendering.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::predict_classes;
use crate::nn::{
    col2im, conv_geom, forward, gemm, im2col, pool_argmax, Checkpoint, LabeledSet, LayerSpec, NnError, Tensor,
};
use crate::raster::{RasterError, Rgb};

/// Rule parameters: epsilon rule on dense layers, alpha-beta on conv layers,
/// box rule on a leading conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrpConfig {
    /// Epsilon is this multiple of the standard deviation of the layer input.
    pub epsilon_scale: f64,
    pub epsilon_floor: f64,
    pub alpha: f64,
    pub beta: f64,
    pub box_low: f64,
    pub box_high: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon_scale: 0.25,
            epsilon_floor: 1e-9,
            alpha: 1.0,
            beta: 0.0,
            box_low: 0.0,
            box_high: 1.0,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if (self.alpha - self.beta - 1.0).abs() > 1e-12 || self.beta < 0.0 {
            return Err("alpha - beta must equal 1 with beta >= 0".into());
        }
        if !(self.epsilon_floor > 0.0) || self.epsilon_scale < 0.0 {
            return Err("epsilon must be positive".into());
        }
        if self.box_low > self.box_high {
            return Err("box bounds inverted".into());
        }
        Ok(())
    }
}

/// Per-pixel relevance, channels summed.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub target: usize,
    /// Number of images averaged into this map.
    pub sources: usize,
}

impl RelevanceMap {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Relevance of every input value and the target logit it started from.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub input_relevance: Tensor<f64>,
    pub logit: f64,
    /// Total relevance entering each layer; the last entry is the logit.
    pub layer_totals: Vec<f64>,
}

fn stabilize(z: f64, eps: f64) -> f64 {
    if z >= 0.0 {
        z + eps
    } else {
        z - eps
    }
}

fn safe_div(r: f64, z: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else {
        r / z
    }
}

fn split_signs(w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (w.iter().map(|v| v.max(0.0)).collect(), w.iter().map(|v| v.min(0.0)).collect())
}

/// Propagate the target logit of a single image back to its input.
/// `params` and `x` are in double precision; `x` is `[1, c, h, w]`.
pub fn lrp_propagate(
    layers: &[LayerSpec],
    shapes: &[Vec<usize>],
    params: &[Tensor<f64>],
    acts: &[Tensor<f64>],
    target: usize,
    config: &LrpConfig,
) -> Result<Explanation, NnError> {
    let logits = acts.last().expect("trace holds logits");
    if target >= logits.len() {
        return Err(NnError::ShapeMismatch(format!("target {target} out of {} logits", logits.len())));
    }
    let logit = logits.data[target];
    let mut rel = Tensor::zeros(&logits.shape);
    rel.data[target] = logit;
    let first_param = layers.iter().position(|l| l.has_params());
    let mut layer_totals = vec![0.0; layers.len() + 1];
    layer_totals[layers.len()] = logit;
    let mut offsets = Vec::new();
    let mut next = 0;
    for l in layers {
        offsets.push(next);
        next += if l.has_params() { 2 } else { 0 };
    }
    for li in (0..layers.len()).rev() {
        let x = &acts[li];
        let z = &acts[li + 1];
        let mut r_in = Tensor::zeros(&x.shape);
        match layers[li] {
            LayerSpec::Relu | LayerSpec::Flatten => r_in.data.copy_from_slice(&rel.data),
            LayerSpec::MaxPool => {
                let (c, h, w) = (shapes[li][0], shapes[li][1], shapes[li][2]);
                let (oh, ow) = (h / 2, w / 2);
                for ch in 0..c {
                    let src = &x.data[ch * h * w..(ch + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let a = pool_argmax(src, 2 * oy * w + 2 * ox, w);
                            r_in.data[ch * h * w + a] += rel.data[(ch * oh + oy) * ow + ox];
                        }
                    }
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = &params[offsets[li]];
                let n = x.len() as f64;
                let mean = x.data.iter().sum::<f64>() / n;
                let std = (x.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                let eps = (config.epsilon_scale * std).max(config.epsilon_floor);
                let s: Vec<f64> = (0..outputs)
                    .map(|j| safe_div(rel.data[j], stabilize(z.data[j], eps)))
                    .collect();
                let mut c = vec![0.0; inputs];
                gemm(1, outputs, inputs, &s, false, &w.data, false, 0.0, &mut c);
                for (r, (xi, ci)) in r_in.data.iter_mut().zip(x.data.iter().zip(&c)) {
                    *r = xi * ci;
                }
            }
            LayerSpec::Conv { out_ch, .. } => {
                let g = conv_geom(&layers[li], &shapes[li]);
                let (k, p) = (g.k(), g.p());
                let (w, b) = (&params[offsets[li]], &params[offsets[li] + 1]);
                let mut col = vec![0.0; k * p];
                im2col(&g, &x.data, &mut col);
                let (wp, wn) = split_signs(&w.data);
                if Some(li) == first_param {
                    // box rule; padding positions are not inputs
                    let mut ones = vec![0.0; k * p];
                    im2col(&g, &vec![1.0; x.len()], &mut ones);
                    let mut d = vec![0.0; out_ch * p];
                    gemm(out_ch, k, p, &w.data, false, &col, false, 0.0, &mut d);
                    let mut lo = vec![0.0; out_ch * p];
                    gemm(out_ch, k, p, &wp, false, &ones, false, 0.0, &mut lo);
                    let mut hi = vec![0.0; out_ch * p];
                    gemm(out_ch, k, p, &wn, false, &ones, false, 0.0, &mut hi);
                    let s: Vec<f64> = (0..out_ch * p)
                        .map(|i| {
                            let den = d[i] - config.box_low * lo[i] - config.box_high * hi[i];
                            safe_div(rel.data[i], stabilize(den, 1e-12))
                        })
                        .collect();
                    let mut cx = vec![0.0; k * p];
                    gemm(k, out_ch, p, &w.data, true, &s, false, 0.0, &mut cx);
                    let mut cp = vec![0.0; k * p];
                    gemm(k, out_ch, p, &wp, true, &s, false, 0.0, &mut cp);
                    let mut cn = vec![0.0; k * p];
                    gemm(k, out_ch, p, &wn, true, &s, false, 0.0, &mut cn);
                    let (mut rx, mut rp, mut rn) = (vec![0.0; x.len()], vec![0.0; x.len()], vec![0.0; x.len()]);
                    col2im(&g, &cx, &mut rx);
                    col2im(&g, &cp, &mut rp);
                    col2im(&g, &cn, &mut rn);
                    for i in 0..x.len() {
                        r_in.data[i] = x.data[i] * rx[i] - config.box_low * rp[i] - config.box_high * rn[i];
                    }
                } else {
                    let cp_: Vec<f64> = col.iter().map(|v| v.max(0.0)).collect();
                    let cn_: Vec<f64> = col.iter().map(|v| v.min(0.0)).collect();
                    // positive and negative contribution sums per output
                    let mut zp = vec![0.0; out_ch * p];
                    gemm(out_ch, k, p, &wp, false, &cp_, false, 0.0, &mut zp);
                    gemm(out_ch, k, p, &wn, false, &cn_, false, 1.0, &mut zp);
                    let mut zn = vec![0.0; out_ch * p];
                    gemm(out_ch, k, p, &wp, false, &cn_, false, 0.0, &mut zn);
                    gemm(out_ch, k, p, &wn, false, &cp_, false, 1.0, &mut zn);
                    let mut sp = vec![0.0; out_ch * p];
                    let mut sn = vec![0.0; out_ch * p];
                    for o in 0..out_ch {
                        let (bp, bn) = (b.data[o].max(0.0), b.data[o].min(0.0));
                        for q in 0..p {
                            let i = o * p + q;
                            sp[i] = config.alpha * safe_div(rel.data[i], zp[i] + bp);
                            if config.beta != 0.0 {
                                sn[i] = -config.beta * safe_div(rel.data[i], zn[i] + bn);
                            }
                        }
                    }
                    // R_i = x+ (W+ sp + W- sn) + x- (W- sp + W+ sn)
                    let mut a = vec![0.0; k * p];
                    gemm(k, out_ch, p, &wp, true, &sp, false, 0.0, &mut a);
                    gemm(k, out_ch, p, &wn, true, &sn, false, 1.0, &mut a);
                    let mut bb = vec![0.0; k * p];
                    gemm(k, out_ch, p, &wn, true, &sp, false, 0.0, &mut bb);
                    gemm(k, out_ch, p, &wp, true, &sn, false, 1.0, &mut bb);
                    let (mut ra, mut rb) = (vec![0.0; x.len()], vec![0.0; x.len()]);
                    col2im(&g, &a, &mut ra);
                    col2im(&g, &bb, &mut rb);
                    for i in 0..x.len() {
                        let v = x.data[i];
                        r_in.data[i] = v.max(0.0) * ra[i] + v.min(0.0) * rb[i];
                    }
                }
            }
        }
        layer_totals[li] = r_in.data.iter().sum();
        rel = r_in;
    }
    Ok(Explanation {
        input_relevance: rel,
        logit,
        layer_totals,
    })
}

/// Explain `target` for one channel-major image.
pub fn lrp_explain(checkpoint: &Checkpoint, chw: &[f32], target: usize, config: &LrpConfig) -> Result<RelevanceMap, NnError> {
    let spec = &checkpoint.spec;
    let [c, h, w] = spec.input;
    if chw.len() != c * h * w {
        return Err(NnError::ShapeMismatch(format!("image has {} values, network takes {}", chw.len(), c * h * w)));
    }
    let params: Vec<Tensor<f64>> = checkpoint.params.iter().map(|p| p.cast()).collect();
    let x = Tensor::from_vec(&[1, c, h, w], chw.iter().map(|&v| f64::from(v)).collect());
    let trace = forward(spec, &params, &x)?;
    let shapes = spec.activation_shapes()?;
    let e = lrp_propagate(&spec.layers, &shapes, &params, &trace.acts, target, config)?;
    let plane = h * w;
    let values = (0..plane)
        .map(|i| (0..c).map(|ch| e.input_relevance.data[ch * plane + i]).sum())
        .collect();
    Ok(RelevanceMap {
        width: w,
        height: h,
        values,
        target,
        sources: 1,
    })
}

/// Mean explanation per class over the correctly predicted samples.
/// Classes without a correct prediction are left out.
pub fn average_class_explanations(
    checkpoint: &Checkpoint,
    set: &LabeledSet,
    config: &LrpConfig,
) -> Result<BTreeMap<usize, RelevanceMap>, NnError> {
    let predicted = predict_classes(checkpoint, set).map_err(|e| match e {
        crate::eval::EvalError::Nn(n) => n,
        other => NnError::ShapeMismatch(other.to_string()),
    })?;
    let [_, h, w] = checkpoint.spec.input;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (i, (&label, &pred)) in set.labels.iter().zip(&predicted).enumerate() {
        if label != pred {
            continue;
        }
        let map = lrp_explain(checkpoint, set.sample(i), label, config)?;
        let acc = sums.entry(label).or_insert_with(|| (vec![0.0; h * w], 0));
        acc.0.iter_mut().zip(&map.values).for_each(|(a, v)| *a += v);
        acc.1 += 1;
    }
    for class in 0..checkpoint.spec.classes {
        if set.labels.contains(&class) && !sums.contains_key(&class) {
            log::warn!("class {class} has no correctly predicted sample; no explanation");
        }
    }
    Ok(sums
        .into_iter()
        .map(|(class, (sum, n))| {
            let values = sum.into_iter().map(|v| v / n as f64).collect();
            (
                class,
                RelevanceMap {
                    width: w,
                    height: h,
                    values,
                    target: class,
                    sources: n,
                },
            )
        })
        .collect())
}

/// Diverging colormap for `t` in [-1, 1]: blue, green at zero, dark red.
pub fn colormap(t: f64) -> [f32; 3] {
    let f = |v: f64| v.clamp(0.0, 1.0) as f32;
    [f(1.5 - (2.0 * t - 1.0).abs()), f(1.5 - (2.0 * t).abs()), f(1.5 - (2.0 * t + 1.0).abs())]
}

/// Render a map normalized by its largest magnitude, optionally blended
/// half and half over a background of the same size.
pub fn render_heatmap(map: &RelevanceMap, background: Option<&Rgb>) -> Rgb {
    let peak = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let heat = Rgb::from_fn(map.width, map.height, |x, y| {
        let v = map.values[y * map.width + x];
        colormap(if peak > 0.0 { v / peak } else { 0.0 })
    });
    match background {
        Some(bg) if bg.width() == map.width && bg.height() == map.height => {
            Rgb::from_fn(map.width, map.height, |x, y| {
                let (a, b) = (heat.pixel(x, y), bg.pixel(x, y));
                [0.5 * a[0] + 0.5 * b[0], 0.5 * a[1] + 0.5 * b[1], 0.5 * a[2] + 0.5 * b[2]]
            })
        }
        _ => heat,
    }
}

/// Write `<class>.png` and `<class>_blend.png` into `dir`.
pub fn save_heatmap_pair(dir: &Path, map: &RelevanceMap, background: &Rgb) -> Result<(), RasterError> {
    render_heatmap(map, None)
        .quantized()
        .save_png(&dir.join(format!("{:02}.png", map.target)))?;
    render_heatmap(map, Some(background))
        .quantized()
        .save_png(&dir.join(format!("{:02}_blend.png", map.target)))
}
