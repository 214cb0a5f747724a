//! Class-mean relevance heatmaps for a trained checkpoint, over correctly
//! classified test images of one design. Pass a checkpoint written by the
//! train_classifier example or by `signbench train`.
//!
//! cargo run --release --example explain_lrp -- <checkpoint> [design] [level] [out_dir]

use std::path::PathBuf;

use signbench::catalog::{class_by_id, Design};
use signbench::config::ExperimentConfig;
use signbench::dataset::{assign_splits, render_splits, Split};
use signbench::nn::{forward, Checkpoint, Tensor};
use signbench::placeholder::placeholder_catalog;
use signbench::raster::Rgb;
use signbench::synthesis::{procedural_base_patches, with_flipped};
use signbench::xai::{average_class_explanations, lrp_propagate, save_heatmap_pair, LrpConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().map(PathBuf::from).ok_or("usage: explain_lrp <checkpoint> [design] [level] [out_dir]")?;
    let design: Design = args.next().as_deref().unwrap_or("ATc").parse()?;
    let level: u8 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/examples/lrp".into());

    let checkpoint = Checkpoint::load(&ckpt)?;
    let config = ExperimentConfig::desk();
    let catalog = placeholder_catalog(config.master_seed);
    let patches = with_flipped(procedural_base_patches(config.master_seed))?;
    let splits = assign_splits(&patches, &config.splits.val, &config.splits.test)?;
    let sets = render_splits(0, design, &config.generation(), &catalog, &patches, &splits, &[level])?;
    let (test, _) = &sets[&Split::Test];
    let lrp = LrpConfig::default();

    // how much of the logit reaches the pixels, for the first test image
    let params: Vec<Tensor<f64>> = checkpoint.params.iter().map(|p| p.cast()).collect();
    let [c, h, w] = checkpoint.spec.input;
    let x = Tensor::from_vec(&[1, c, h, w], test.sample(0).iter().map(|&v| f64::from(v)).collect());
    let trace = forward(&checkpoint.spec, &params, &x)?;
    let e = lrp_propagate(&checkpoint.spec.layers, &checkpoint.spec.activation_shapes()?, &params, &trace.acts, test.labels[0], &lrp)?;
    println!("relevance entering each layer, input first:");
    for t in &e.layer_totals {
        print!(" {t:.2}");
    }
    println!();

    let maps = average_class_explanations(&checkpoint, test, &lrp)?;
    for (class, map) in &maps {
        // mean test image of the class as the blend background
        let idx: Vec<usize> = (0..test.len()).filter(|&i| test.labels[i] == *class).collect();
        let mut mean = vec![0.0f32; c * h * w];
        for &i in &idx {
            for (m, v) in mean.iter_mut().zip(test.sample(i)) {
                *m += v / idx.len() as f32;
            }
        }
        let background = Rgb::from_fn(w, h, |x, y| [0, 1, 2].map(|ch| mean[ch * h * w + y * w + x]));
        let dir = out.join(format!("{:02}", class));
        save_heatmap_pair(&dir, map, &background)?;
        println!("{:2} {:<28} {} images, total relevance {:.2}", class, class_by_id(*class as u8)?.name, map.sources, map.total());
    }
    Ok(())
}
