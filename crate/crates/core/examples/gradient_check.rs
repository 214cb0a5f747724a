//! Check backpropagation through a narrow version of the reference network
//! against central differences, on a small random batch in f64.
//!
//! cargo run --release --example gradient_check

use rand::Rng;
use signbench::nn::{gradient_check, LayerSpec, NetworkSpec, Tensor};
use signbench::rng::seeded_rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = NetworkSpec::reference();
    // a smaller input and narrower layers keep the finite differences quick
    spec.input = [3, 16, 16];
    spec.layers = vec![
        LayerSpec::conv3x3(3, 4),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::conv3x3(4, 8),
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 8 * 4 * 4, outputs: 16 },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: 16, outputs: spec.classes },
    ];
    spec.validate()?;
    let params = spec.init_params::<f64>(7);
    let mut rng = seeded_rng("example", 7);
    let x = Tensor::from_vec(&[2, 3, 16, 16], (0..2 * 3 * 16 * 16).map(|_| rng.gen::<f64>()).collect());
    let labels = [3, 19];
    let check = gradient_check(&spec, &params, &x, &labels, 1e-4)?;
    println!(
        "{} coordinates checked, {} skipped at kinks, max relative error: params {:.2e}, input {:.2e}",
        check.checked, check.kinks, check.max_param_error, check.max_input_error
    );
    Ok(())
}
