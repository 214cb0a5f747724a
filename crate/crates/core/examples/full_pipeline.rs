//! Every stage of the command-line tool through the library: generate,
//! train, evaluate, explain and report, on a tiny configuration that
//! finishes in a few minutes. Outputs land in a content-addressed folder
//! under out/examples/pipeline.
//!
//! cargo run --release --example full_pipeline

use signbench::catalog::Design;
use signbench::config::ExperimentConfig;
use signbench::pipeline::{Pipeline, TrainScope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = ExperimentConfig::desk();
    config.output_root = "out/examples/pipeline".into();
    config.generation.runs = 2;
    config.generation.designs = vec![Design::ATc, Design::DE];
    config.generation.desk_scale = Some(50);
    config.pairs = ["ATc-ATc", "ATc-DE", "DE-DE", "DE-ATc"].map(String::from).to_vec();
    config.train.epochs = 3;

    let pipeline = Pipeline::open(config)?;
    println!("output directory: {}", pipeline.dir.display());
    for m in pipeline.generate(None, None, false)? {
        println!("run {} {}: {}", m.run, m.design, m.balance());
    }
    for (path, digest) in pipeline.train(None, None, Some(TrainScope::All), false)? {
        println!("{}  {}", &digest[..12], path.display());
    }
    pipeline.evaluate(None)?;
    let maps = pipeline.explain(Some(0))?;
    println!("{} heatmaps", maps.len());
    print!("{}", pipeline.report()?.to_markdown());
    Ok(())
}
