//! Train on one design and test on all three at the same intensity level.
//! The gap between the diagonal and the foreign designs is the design
//! shift the benchmark measures.
//!
//! cargo run --release --example cross_design -- [train_design] [level]

use std::collections::BTreeMap;

use signbench::catalog::{class_by_id, Design, DesignGroup};
use signbench::config::ExperimentConfig;
use signbench::dataset::{assign_splits, render_splits, Split};
use signbench::eval::{evaluate, top_confusions, EvaluationPair};
use signbench::nn::{train, NetworkSpec};
use signbench::placeholder::placeholder_catalog;
use signbench::synthesis::{procedural_base_patches, with_flipped};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let source: Design = args.next().as_deref().unwrap_or("ATc").parse()?;
    let level: u8 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);

    let mut config = ExperimentConfig::desk();
    config.train.epochs = 4;
    let generation = config.generation();
    let catalog = placeholder_catalog(config.master_seed);
    let patches = with_flipped(procedural_base_patches(config.master_seed))?;
    let splits = assign_splits(&patches, &config.splits.val, &config.splits.test)?;

    let mut tests = BTreeMap::new();
    let mut checkpoint = None;
    for design in Design::ALL {
        let mut sets = render_splits(0, design, &generation, &catalog, &patches, &splits, &[level])?;
        if design == source {
            let outcome = train(&NetworkSpec::reference(), &config.train, &sets[&Split::Train].0, &sets[&Split::Val].0)?;
            checkpoint = Some(outcome.checkpoint);
        }
        tests.insert(design, sets.remove(&Split::Test).expect("test split rendered"));
    }

    let checkpoint = checkpoint.expect("source design is one of the three");
    for design in Design::ALL {
        let (set, levels) = &tests[&design];
        let (report, confusion) = evaluate(&checkpoint, set, levels)?;
        let pair = EvaluationPair::new(DesignGroup::Base(source), design);
        println!("{}: {:.1}%", pair.label(), 100.0 * report.overall());
        for (truth, predicted, pct) in top_confusions(&confusion.percentages(), 3) {
            println!("    {} -> {} ({pct:.1}%)", class_by_id(truth as u8)?.name, class_by_id(predicted as u8)?.name);
        }
    }
    Ok(())
}
