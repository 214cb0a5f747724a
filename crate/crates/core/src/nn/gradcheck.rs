use super::loss::cross_entropy;
use super::network::{backward, forward, pool_argmax, LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use super::NnError;

/// Worst relative disagreement between analytic and central-difference
/// gradients, over every parameter and every input value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_param_error: f64,
    pub max_input_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU or
    /// max-pool switch, where central differences are meaningless.
    pub kinks: usize,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.max_param_error.max(self.max_input_error)
    }
}

fn relative(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Which ReLUs are active and which pool inputs win, for every sample.
fn switch_pattern(spec: &NetworkSpec, acts: &[Tensor<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    for (li, layer) in spec.layers.iter().enumerate() {
        let a = &acts[li];
        match layer {
            LayerSpec::Relu => out.extend(a.data.iter().map(|&v| usize::from(v > 0.0))),
            LayerSpec::MaxPool => {
                let (h, w) = (a.shape[a.shape.len() - 2], a.shape[a.shape.len() - 1]);
                for plane in a.data.chunks(h * w) {
                    for oy in 0..h / 2 {
                        for ox in 0..w / 2 {
                            out.push(pool_argmax(plane, 2 * oy * w + 2 * ox, w));
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn loss(spec: &NetworkSpec, params: &[Tensor<f64>], x: &Tensor<f64>, labels: &[usize]) -> Result<(f64, Vec<usize>), NnError> {
    let trace = forward(spec, params, x)?;
    Ok((cross_entropy(trace.logits(), labels)?.0, switch_pattern(spec, &trace.acts)))
}

/// Compare backprop against central differences with step `h`. Coordinates
/// whose perturbation flips a ReLU or a pooling winner are counted in
/// `kinks` instead of compared.
pub fn gradient_check(
    spec: &NetworkSpec,
    params: &[Tensor<f64>],
    x: &Tensor<f64>,
    labels: &[usize],
    h: f64,
) -> Result<GradCheck, NnError> {
    let trace = forward(spec, params, x)?;
    let base = switch_pattern(spec, &trace.acts);
    let (_, dlogits) = cross_entropy(trace.logits(), labels)?;
    let (grads, dx) = backward(spec, params, &trace, &dlogits, true)?;
    let dx = dx.expect("input gradient requested");
    let mut out = GradCheck {
        max_param_error: 0.0,
        max_input_error: 0.0,
        checked: 0,
        kinks: 0,
    };
    let mut work = params.to_vec();
    for (t, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = work[t].data[i];
            work[t].data[i] = orig + h;
            let (up, pu) = loss(spec, &work, x, labels)?;
            work[t].data[i] = orig - h;
            let (down, pd) = loss(spec, &work, x, labels)?;
            work[t].data[i] = orig;
            if pu != base || pd != base {
                out.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            out.max_param_error = out.max_param_error.max(relative(g.data[i], numeric));
            out.checked += 1;
        }
    }
    let mut xw = x.clone();
    for i in 0..x.len() {
        let orig = xw.data[i];
        xw.data[i] = orig + h;
        let (up, pu) = loss(spec, params, &xw, labels)?;
        xw.data[i] = orig - h;
        let (down, pd) = loss(spec, params, &xw, labels)?;
        xw.data[i] = orig;
        if pu != base || pd != base {
            out.kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * h);
        out.max_input_error = out.max_input_error.max(relative(dx.data[i], numeric));
        out.checked += 1;
    }
    Ok(out)
}
