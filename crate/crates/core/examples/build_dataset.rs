//! Render one design's corrupted dataset at desk scale, write the PNGs and
//! the manifest, then read the manifest back and count the splits.
//!
//! cargo run --release --example build_dataset -- [out_dir]

use std::path::PathBuf;

use signbench::catalog::{Design, DesignGroup};
use signbench::config::ExperimentConfig;
use signbench::dataset::{assign_splits, build_dataset, manifest_path, select, DatasetManifest, Split};
use signbench::placeholder::placeholder_catalog;
use signbench::synthesis::{procedural_base_patches, with_flipped};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/examples/dataset".into());
    let config = ExperimentConfig::desk();
    let generation = config.generation();
    let catalog = placeholder_catalog(config.master_seed);
    let patches = with_flipped(procedural_base_patches(config.master_seed))?;

    let manifest = build_dataset(0, Design::ATn, &generation, &catalog, &patches, &out)?;
    println!("{}", manifest.balance());

    let reread = DatasetManifest::load(&manifest_path(&out, 0, DesignGroup::Base(Design::ATn)))?;
    assert_eq!(reread, manifest);

    let splits = assign_splits(&patches, &config.splits.val, &config.splits.test)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let n = select(&reread, &splits, split, None, None).len();
        println!("{split:?}: {n} images (patches {:?})", splits.ids(split));
    }
    Ok(())
}
