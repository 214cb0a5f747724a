//! Write the built-in stand-in pictograms for all 24 classes and three
//! designs to disk, in the layout `load_catalog` reads back.
//!
//! cargo run --example placeholder_catalog -- [out_dir]

use std::path::PathBuf;

use signbench::catalog::{load_catalog, save_catalog, Design, DesignGroup, Provenance, CLASSES};
use signbench::placeholder::placeholder_catalog;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/examples/pictograms".into());
    let catalog = placeholder_catalog(0);
    save_catalog(&catalog, &out)?;

    let reloaded = load_catalog(&out)?;
    assert_eq!(reloaded.assets().len(), catalog.assets().len());

    for class in &CLASSES {
        let de = catalog.lookup(class.id, DesignGroup::Base(Design::DE))?;
        let mark = if de.provenance == Provenance::Handcrafted { " (handcrafted DE)" } else { "" };
        println!("{:2} {:<28} {:?}{mark}", class.id, class.name, class.shape());
    }
    println!("{} pictograms written under {}", catalog.assets().len(), out.display());
    Ok(())
}
