//! One clean sign under every corruption kind at every intensity level.
//! Rows are kinds, columns are levels 1 to 5.
//!
//! cargo run --example corruption_gallery -- [out_dir]

use std::path::PathBuf;

use signbench::catalog::Design;
use signbench::corruption::{apply, sample_spec, CorruptionConfig, CorruptionKind, IntensityLevel};
use signbench::placeholder::placeholder_catalog;
use signbench::raster::Rgb;
use signbench::rng::RngKey;
use signbench::synthesis::{build_clean_set_for_classes, procedural_base_patches, with_flipped, CLEAN_SIZE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "out/examples/corruptions".into());
    let catalog = placeholder_catalog(0);
    let patches = with_flipped(procedural_base_patches(0))?;
    let clean = build_clean_set_for_classes(&catalog, &patches, Design::DE, &[1])?.remove(0);

    let key = RngKey {
        master_seed: 0,
        run: 0,
        patch_id: clean.patch_id,
        flipped: clean.flipped,
        class_id: u32::from(clean.class_id),
        replica_index: 0,
    };
    let levels: Vec<_> = IntensityLevel::all().collect();
    let mut sheet = Rgb::filled(levels.len() * CLEAN_SIZE, CorruptionKind::ALL.len() * CLEAN_SIZE, [1.0; 3]);
    for (r, kind) in CorruptionKind::ALL.iter().enumerate() {
        let config = CorruptionConfig {
            kinds: vec![*kind],
            ..CorruptionConfig::default()
        };
        for (c, &level) in levels.iter().enumerate() {
            let spec = sample_spec(&key, level, &config);
            let img = apply(&clean.raster, &spec);
            for y in 0..CLEAN_SIZE {
                for x in 0..CLEAN_SIZE {
                    sheet.put(c * CLEAN_SIZE + x, r * CLEAN_SIZE + y, img.pixel(x, y));
                }
            }
            if c == levels.len() - 1 {
                println!("{kind:?}: level 5 downsampled to {} px, digest {}", spec.downsampled_side(CLEAN_SIZE), spec.digest());
            }
        }
    }
    std::fs::create_dir_all(&out)?;
    let path = out.join("gallery.png");
    sheet.quantized().save_png(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
