//! Train the reference network on one design at intensity level 1 and save
//! the checkpoint with its loss history. A few epochs at desk scale take a
//! couple of minutes on one core in release mode.
//!
//! cargo run --release --example train_classifier -- [epochs] [out_dir]

use std::path::PathBuf;

use signbench::catalog::Design;
use signbench::config::ExperimentConfig;
use signbench::dataset::{assign_splits, render_splits, Split};
use signbench::nn::{train, NetworkSpec};
use signbench::placeholder::placeholder_catalog;
use signbench::synthesis::{procedural_base_patches, with_flipped};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/examples/train".into());

    let mut config = ExperimentConfig::desk();
    config.train.epochs = epochs;
    let catalog = placeholder_catalog(config.master_seed);
    let patches = with_flipped(procedural_base_patches(config.master_seed))?;
    let splits = assign_splits(&patches, &config.splits.val, &config.splits.test)?;
    let sets = render_splits(0, Design::ATc, &config.generation(), &catalog, &patches, &splits, &[1])?;
    println!(
        "train {} / val {} / test {} images",
        sets[&Split::Train].0.len(),
        sets[&Split::Val].0.len(),
        sets[&Split::Test].0.len()
    );

    let outcome = train(&NetworkSpec::reference(), &config.train, &sets[&Split::Train].0, &sets[&Split::Val].0)?;
    for e in &outcome.history {
        println!(
            "epoch {}: lr {:.0e} train loss {:.3} acc {:.3}, val loss {:.3} acc {:.3}",
            e.epoch, e.lr, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy
        );
    }
    std::fs::create_dir_all(&out)?;
    let path = out.join("ATc_level1.ckpt");
    outcome.checkpoint.save(&path)?;
    println!("{}  {}", outcome.checkpoint.digest(), path.display());
    Ok(())
}
