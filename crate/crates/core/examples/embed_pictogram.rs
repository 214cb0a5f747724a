//! Put one class into every procedural source patch, once per design, and
//! save the clean 64x64 images side by side.
//!
//! cargo run --example embed_pictogram -- [class_id] [out_dir]

use std::path::PathBuf;

use signbench::catalog::{class_by_id, Design};
use signbench::placeholder::placeholder_catalog;
use signbench::raster::Rgb;
use signbench::synthesis::{build_clean_set_for_classes, procedural_base_patches, with_flipped, CLEAN_SIZE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let class_id: u8 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| "out/examples/embed".into());
    let class = class_by_id(class_id)?;

    let catalog = placeholder_catalog(0);
    let patches = with_flipped(procedural_base_patches(0))?;

    // one row per design, one column per patch variant
    let rows: Vec<_> = Design::ALL
        .iter()
        .map(|&d| build_clean_set_for_classes(&catalog, &patches, d, &[class_id]))
        .collect::<Result<_, _>>()?;
    let cols = rows[0].len();
    let mut sheet = Rgb::filled(cols * CLEAN_SIZE, rows.len() * CLEAN_SIZE, [1.0; 3]);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            for y in 0..CLEAN_SIZE {
                for x in 0..CLEAN_SIZE {
                    sheet.put(c * CLEAN_SIZE + x, r * CLEAN_SIZE + y, img.raster.pixel(x, y));
                }
            }
        }
    }
    std::fs::create_dir_all(&out)?;
    let path = out.join(format!("{}.png", class.file_stem));
    sheet.quantized().save_png(&path)?;
    println!("{} on {cols} patch variants x {} designs -> {}", class.name, rows.len(), path.display());
    Ok(())
}
