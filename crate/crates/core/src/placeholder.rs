//! Procedural stand-in pictograms.
//!
//! Real pictogram artwork is an input of the pipeline, not something it
//! draws. For tests, examples and desk experiments without the artwork this
//! module paints a complete 72-asset catalog: every class gets a distinct
//! composition of chunky primitives, and each design group redraws that
//! composition with its own offsets, proportions and stroke widths, the way
//! two sign authorities draw "the same" symbol differently.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{provenance_of, Catalog, Design, PictogramAsset, ASSET_SIZE, CLASSES};
use crate::raster::Rgba;
use crate::rng::keyed_rng;

const INK: [f32; 3] = [0.05, 0.05, 0.05];
const RED: [f32; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { cx: f32, cy: f32, r: f32 },
    Ring { cx: f32, cy: f32, r: f32, w: f32 },
    Rect { cx: f32, cy: f32, hw: f32, hh: f32 },
    Bar { x0: f32, y0: f32, x1: f32, y1: f32, w: f32 },
    Wedge { cx: f32, cy: f32, s: f32, up: bool },
}

#[derive(Debug, Clone, Copy)]
struct Stroke {
    shape: Shape,
    color: [f32; 3],
}

impl Shape {
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Ring { cx, cy, r, w } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                (d - r).abs() <= w * 0.5
            }
            Shape::Rect { cx, cy, hw, hh } => (x - cx).abs() <= hw && (y - cy).abs() <= hh,
            Shape::Bar { x0, y0, x1, y1, w } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = (dx * dx + dy * dy).max(1e-6);
                let t = (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0);
                let (px, py) = (x0 + t * dx, y0 + t * dy);
                (x - px).powi(2) + (y - py).powi(2) <= (w * 0.5).powi(2)
            }
            Shape::Wedge { cx, cy, s, up } => {
                // isosceles triangle of half-width s and height 1.6 s
                let h = 1.6 * s;
                let rel = if up { cy + h * 0.5 - y } else { y - (cy - h * 0.5) };
                rel >= 0.0 && rel <= h && (x - cx).abs() <= s * (1.0 - rel / h)
            }
        }
    }
}

fn paint(strokes: &[Stroke]) -> Rgba {
    const SS: usize = 3;
    let mut img = Rgba::new(ASSET_SIZE, ASSET_SIZE);
    for y in 0..ASSET_SIZE {
        for x in 0..ASSET_SIZE {
            let mut rgb_acc = [0.0f32; 3];
            let mut cover = 0usize;
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f32 + (sx as f32 + 0.5) / SS as f32;
                    let py = y as f32 + (sy as f32 + 0.5) / SS as f32;
                    // later strokes paint over earlier ones
                    if let Some(s) = strokes.iter().rev().find(|s| s.shape.contains(px, py)) {
                        cover += 1;
                        for c in 0..3 {
                            rgb_acc[c] += s.color[c];
                        }
                    }
                }
            }
            if cover > 0 {
                let n = cover as f32;
                let a = n / (SS * SS) as f32;
                img.put(x, y, [rgb_acc[0] / n, rgb_acc[1] / n, rgb_acc[2] / n, a]);
            }
        }
    }
    img.quantized()
}

fn random_shape(rng: &mut ChaCha8Rng, cx: f32, cy: f32) -> Shape {
    match rng.gen_range(0..5) {
        0 => Shape::Disk {
            cx,
            cy,
            r: rng.gen_range(9.0..15.0),
        },
        1 => Shape::Ring {
            cx,
            cy,
            r: rng.gen_range(10.0..15.0),
            w: rng.gen_range(5.0..8.0),
        },
        2 => Shape::Rect {
            cx,
            cy,
            hw: rng.gen_range(7.0..16.0),
            hh: rng.gen_range(7.0..16.0),
        },
        3 => {
            let a: f32 = rng.gen_range(0.0..std::f32::consts::PI);
            let l = rng.gen_range(14.0..22.0);
            Shape::Bar {
                x0: cx - a.cos() * l,
                y0: cy - a.sin() * l,
                x1: cx + a.cos() * l,
                y1: cy + a.sin() * l,
                w: rng.gen_range(6.0..10.0),
            }
        }
        _ => Shape::Wedge {
            cx,
            cy,
            s: rng.gen_range(9.0..15.0),
            up: rng.gen(),
        },
    }
}

/// Base composition of a class: three or four primitives on distinct cells
/// of a 3x3 layout grid.
fn class_composition(class_id: u8, seed: u64) -> Vec<Stroke> {
    let mut rng = keyed_rng("placeholder-class", &[seed, u64::from(class_id)]);
    let mut cells: Vec<usize> = (0..9).collect();
    let n = rng.gen_range(3..=4);
    let mut strokes = Vec::with_capacity(n);
    for i in 0..n {
        let pick = rng.gen_range(0..cells.len());
        let cell = cells.swap_remove(pick);
        let cx = 24.0 + 26.0 * (cell % 3) as f32;
        let cy = 24.0 + 26.0 * (cell / 3) as f32;
        let shape = random_shape(&mut rng, cx, cy);
        // "Overtaking" classes carry one red vehicle, as on the real signs.
        let color = if i == 0 && (class_id == 14 || class_id == 15) { RED } else { INK };
        strokes.push(Stroke { shape, color });
    }
    strokes
}

fn jitter(rng: &mut ChaCha8Rng, amount: f32) -> f32 {
    rng.gen_range(-amount..amount)
}

/// Redraw a composition in a design's own style.
fn restyle(base: &[Stroke], design: Design, class_id: u8, seed: u64) -> Vec<Stroke> {
    let (shift, scale, stroke, swap_p) = match design {
        Design::ATc => return base.to_vec(),
        // thinner strokes, reduced detail
        Design::ATn => (10.0, 0.35, 0.7, 0.4),
        Design::DE => (9.0, 0.3, 1.15, 0.35),
    };
    let mut rng = keyed_rng(
        "placeholder-design",
        &[seed, u64::from(class_id), design as u64],
    );
    base.iter()
        .map(|s| {
            let dx = jitter(&mut rng, shift);
            let dy = jitter(&mut rng, shift);
            let k = 1.0 + jitter(&mut rng, scale);
            let shape = if rng.gen_bool(swap_p) {
                let (cx, cy) = centre(&s.shape);
                random_shape(&mut rng, cx + dx, cy + dy)
            } else {
                match s.shape {
                    Shape::Disk { cx, cy, r } => Shape::Disk {
                        cx: cx + dx,
                        cy: cy + dy,
                        r: r * k,
                    },
                    Shape::Ring { cx, cy, r, w } => Shape::Ring {
                        cx: cx + dx,
                        cy: cy + dy,
                        r: r * k,
                        w: w * stroke,
                    },
                    Shape::Rect { cx, cy, hw, hh } => Shape::Rect {
                        cx: cx + dx,
                        cy: cy + dy,
                        hw: hw * k,
                        hh: hh / k,
                    },
                    Shape::Bar { x0, y0, x1, y1, w } => Shape::Bar {
                        x0: x0 + dx,
                        y0: y0 + dy,
                        x1: x1 + dx * k,
                        y1: y1 + dy * k,
                        w: w * stroke,
                    },
                    Shape::Wedge { cx, cy, s, up } => Shape::Wedge {
                        cx: cx + dx,
                        cy: cy + dy,
                        s: s * k,
                        up,
                    },
                }
            };
            Stroke { shape, color: s.color }
        })
        .collect()
}

fn centre(s: &Shape) -> (f32, f32) {
    match *s {
        Shape::Disk { cx, cy, .. }
        | Shape::Ring { cx, cy, .. }
        | Shape::Rect { cx, cy, .. }
        | Shape::Wedge { cx, cy, .. } => (cx, cy),
        Shape::Bar { x0, y0, x1, y1, .. } => ((x0 + x1) * 0.5, (y0 + y1) * 0.5),
    }
}

/// Paint one stand-in pictogram.
pub fn placeholder_asset(class_id: u8, design: Design, seed: u64) -> PictogramAsset {
    let base = class_composition(class_id, seed);
    // The German wrong-way-driver pictogram is a copy of the current Austrian one.
    let strokes = if design == Design::DE && class_id == 23 {
        base
    } else {
        restyle(&base, design, class_id, seed)
    };
    PictogramAsset {
        class_id,
        design,
        raster: paint(&strokes),
        provenance: provenance_of(class_id, design),
    }
}

/// A complete 24 x 3 catalog of stand-in pictograms.
pub fn placeholder_catalog(seed: u64) -> Catalog {
    let assets = CLASSES
        .iter()
        .flat_map(|c| Design::ALL.map(|d| placeholder_asset(c.id, d, seed)))
        .collect();
    Catalog::from_assets(assets).expect("placeholder catalog is complete")
}
