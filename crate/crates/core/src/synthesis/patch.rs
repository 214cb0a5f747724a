//! Background sign patches: procedural generation, flipping and descriptors.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::homography::{check_quad, Point, Quad};
use super::SynthesisError;
use crate::catalog::SignShape;
use crate::raster::{Rgb, RasterError};
use crate::rng::keyed_rng;

/// Number of distinct source sign photographs (before flipping).
pub const BASE_PATCHES: usize = 14;
pub const PATCHES_PER_SHAPE: usize = 7;
/// Side of procedurally rendered patches.
pub const PROCEDURAL_SIZE: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePatch {
    pub id: u32,
    pub shape: SignShape,
    pub raster: Rgb,
    /// Pictogram region inside the sign face, ordered TL, TR, BR, BL.
    pub quad: Quad,
    pub color_gain: [f32; 3],
    pub color_bias: [f32; 3],
    pub flipped: bool,
}

impl SourcePatch {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.raster.width() < 128 || self.raster.height() < 128 {
            return Err(SynthesisError::InvalidPatch(format!(
                "patch {} raster {}x{} is smaller than 128x128",
                self.id,
                self.raster.width(),
                self.raster.height()
            )));
        }
        if self.color_gain.iter().any(|g| !(*g > 0.0)) {
            return Err(SynthesisError::InvalidPatch(format!(
                "patch {} has non-positive color gain",
                self.id
            )));
        }
        check_quad(&self.quad)
    }
}

/// Mirror a patch about its vertical axis. The quad is mirrored and
/// re-ordered so it stays TL, TR, BR, BL; pictograms inserted afterwards are
/// therefore upright, never mirrored.
pub fn flip_patch(patch: &SourcePatch) -> Result<SourcePatch, SynthesisError> {
    if patch.flipped {
        return Err(SynthesisError::AlreadyFlipped(patch.id));
    }
    let w = patch.raster.width() as f64;
    let m = |p: Point| Point::new(w - p.x, p.y);
    let [tl, tr, br, bl] = patch.quad;
    Ok(SourcePatch {
        id: patch.id,
        shape: patch.shape,
        raster: patch.raster.flip_horizontal(),
        quad: [m(tr), m(tl), m(bl), m(br)],
        color_gain: patch.color_gain,
        color_bias: patch.color_bias,
        flipped: true,
    })
}

/// Smooth lattice noise in [0, 1] with `cells` lattice cells per side.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f32> {
    let n = cells + 1;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.gen::<f32>()).collect();
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let fx = x as f32 / size as f32 * cells as f32;
            let fy = y as f32 / size as f32 * cells as f32;
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
            let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
            let l = |i: usize, j: usize| lattice[j.min(cells) * n + i.min(cells)];
            let top = l(x0, y0) + (l(x0 + 1, y0) - l(x0, y0)) * sx;
            let bot = l(x0, y0 + 1) + (l(x0 + 1, y0 + 1) - l(x0, y0 + 1)) * sx;
            out[y * size + x] = top + (bot - top) * sy;
        }
    }
    out
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Region of a sign: 0 outside, 1 border, 2 face.
fn sign_region(shape: SignShape, geom: &SignGeometry, x: f32, y: f32) -> u8 {
    let (dx, dy) = (x - geom.cx, y - geom.cy);
    match shape {
        SignShape::Round => {
            let d = (dx * dx + dy * dy).sqrt();
            if d <= geom.face_radius {
                2
            } else if d <= geom.outer {
                1
            } else {
                0
            }
        }
        SignShape::Triangular => {
            // distance inside an upward equilateral triangle with the given
            // inradius, measured against its three edge normals
            let normals = [(0.0f32, 1.0f32), (-0.866_025_4, -0.5), (0.866_025_4, -0.5)];
            let depth = normals
                .iter()
                .map(|(nx, ny)| -(dx * nx + dy * ny))
                .fold(f32::INFINITY, f32::min);
            let outer_in = geom.outer * 0.5;
            let face_in = geom.face_radius;
            // depth is minus the largest edge-normal projection; adding the
            // outer inradius gives the distance inside the outer triangle
            let to_outer = depth + outer_in;
            if to_outer < 0.0 {
                0
            } else if to_outer < outer_in - face_in {
                1
            } else {
                2
            }
        }
    }
}

struct SignGeometry {
    cx: f32,
    cy: f32,
    /// Round: outer radius. Triangular: circumradius of the outer triangle.
    outer: f32,
    /// Radius of the circle inscribed in the white face.
    face_radius: f32,
}

/// Render a stand-in sign patch: a red-bordered round or triangular sign on
/// a textured sky/foliage background with mildly perspective pictogram quad
/// and randomized lighting. A pure function of `(seed, shape)`.
pub fn generate_procedural_patch(seed: u64, shape: SignShape) -> SourcePatch {
    generate_with_geometry(seed, shape).0
}

fn generate_with_geometry(seed: u64, shape: SignShape) -> (SourcePatch, SignGeometry) {
    let mut rng = keyed_rng("procedural-patch", &[seed, shape as u64]);
    let size = PROCEDURAL_SIZE;

    let color_gain = [0.0; 3].map(|_: f32| rng.gen_range(0.7f32..1.1));
    let color_bias = [0.0; 3].map(|_: f32| rng.gen_range(-0.1f32..0.1));
    let lit = |c: [f32; 3]| [0, 1, 2].map(|i| (color_gain[i] * c[i] + color_bias[i]).clamp(0.0, 1.0));

    let sky = [rng.gen_range(0.45..0.7), rng.gen_range(0.6..0.8), rng.gen_range(0.75..0.95)];
    let foliage = [rng.gen_range(0.15..0.35), rng.gen_range(0.3..0.5), rng.gen_range(0.1..0.25)];
    let horizon = rng.gen_range(0.3f32..0.8);
    let coarse = value_noise(&mut rng, size, 4);
    let fine = value_noise(&mut rng, size, 16);

    let geom = match shape {
        SignShape::Round => {
            let outer = rng.gen_range(56.0f32..61.0);
            SignGeometry {
                cx: 64.0 + rng.gen_range(-2.0f32..2.0),
                cy: 64.0 + rng.gen_range(-2.0f32..2.0),
                outer,
                face_radius: 0.8 * outer,
            }
        }
        SignShape::Triangular => {
            let outer = rng.gen_range(66.0f32..72.0);
            SignGeometry {
                cx: 64.0 + rng.gen_range(-2.0f32..2.0),
                cy: 74.0 + rng.gen_range(-1.5f32..1.5),
                outer,
                face_radius: 0.72 * outer * 0.5,
            }
        }
    };
    let red = lit([0.78, 0.08, 0.1]);
    let face_light = rng.gen_range(-0.08f32..0.08);

    const SS: usize = 2;
    let raster = Rgb::from_fn(size, size, |x, y| {
        let t = y as f32 / size as f32;
        let blend = ((t - horizon) * 6.0).clamp(-1.0, 1.0) * 0.5 + 0.5;
        let n = coarse[y * size + x] * 0.6 + fine[y * size + x] * 0.4;
        let bg = lerp3(sky, foliage, blend).map(|c| (c * (0.75 + 0.5 * n)).clamp(0.0, 1.0));
        let mut acc = [0.0f32; 3];
        for sy in 0..SS {
            for sx in 0..SS {
                let px = x as f32 + (sx as f32 + 0.5) / SS as f32;
                let py = y as f32 + (sy as f32 + 0.5) / SS as f32;
                let c = match sign_region(shape, &geom, px, py) {
                    0 => bg,
                    1 => red,
                    _ => {
                        let shade = 1.0 + face_light * (py - geom.cy) / geom.face_radius;
                        lit([0.95 * shade, 0.95 * shade, 0.93 * shade])
                    }
                };
                for i in 0..3 {
                    acc[i] += c[i];
                }
            }
        }
        acc.map(|v| v / (SS * SS) as f32)
    })
    .quantized();

    // Square inscribed in the face's incircle, then corner jitter bounded
    // both by 12% of the sign width and by the remaining margin.
    let face_r = f64::from(geom.face_radius);
    let half = 0.66 * face_r;
    let margin = face_r - half * std::f64::consts::SQRT_2;
    let sign_width = match shape {
        SignShape::Round => 2.0 * f64::from(geom.outer),
        SignShape::Triangular => 3f64.sqrt() * f64::from(geom.outer),
    };
    let jitter = (0.12 * sign_width).min(0.9 * margin);
    let (cx, cy) = (f64::from(geom.cx), f64::from(geom.cy));
    let mut corner = |sx: f64, sy: f64| {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = jitter * rng.gen::<f64>().sqrt();
        Point::new(cx + sx * half + r * a.cos(), cy + sy * half + r * a.sin())
    };
    let quad = [corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0)];

    let patch = SourcePatch {
        id: 0,
        shape,
        raster,
        quad,
        color_gain,
        color_bias,
        flipped: false,
    };
    (patch, geom)
}

/// The 14 base patches: ids 0-6 round, 7-13 triangular.
pub fn procedural_base_patches(master_seed: u64) -> Vec<SourcePatch> {
    (0..BASE_PATCHES as u32)
        .map(|id| {
            let shape = if (id as usize) < PATCHES_PER_SHAPE {
                SignShape::Round
            } else {
                SignShape::Triangular
            };
            let seed = crate::rng::derive_seed("patch-seed", &[master_seed, u64::from(id)]);
            let seed = u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"));
            SourcePatch {
                id,
                ..generate_procedural_patch(seed, shape)
            }
        })
        .collect()
}

/// Base patches followed by their mirrored versions (28 in total).
pub fn with_flipped(base: Vec<SourcePatch>) -> Result<Vec<SourcePatch>, SynthesisError> {
    let flipped: Vec<_> = base.iter().map(flip_patch).collect::<Result<_, _>>()?;
    let mut all = base;
    all.extend(flipped);
    Ok(all)
}

/// Serialized patch record; the raster lives next to the descriptor file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PatchDescriptor {
    pub id: u32,
    pub shape: SignShape,
    pub quad: [[f64; 2]; 4],
    pub color_gain: [f32; 3],
    pub color_bias: [f32; 3],
    pub raster: PathBuf,
    #[serde(default)]
    pub flipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PatchFile {
    pub patch: Vec<PatchDescriptor>,
}

#[derive(Debug, thiserror::Error)]
pub enum PatchIoError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad patch descriptor {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Invalid(#[from] SynthesisError),
}

/// Write `patches.toml` plus one PNG per patch into `dir`.
pub fn save_patch_set(dir: &Path, patches: &[SourcePatch]) -> Result<PathBuf, PatchIoError> {
    let mut records = Vec::with_capacity(patches.len());
    for p in patches {
        let name = PathBuf::from(format!("patch_{:02}{}.png", p.id, if p.flipped { "_f" } else { "" }));
        p.raster.save_png(&dir.join(&name))?;
        records.push(PatchDescriptor {
            id: p.id,
            shape: p.shape,
            quad: p.quad.map(|q| [q.x, q.y]),
            color_gain: p.color_gain,
            color_bias: p.color_bias,
            raster: name,
            flipped: p.flipped,
        });
    }
    let path = dir.join("patches.toml");
    let text = toml::to_string(&PatchFile { patch: records }).map_err(|e| PatchIoError::Parse {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    std::fs::write(&path, text).map_err(|source| PatchIoError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Read a descriptor file; raster paths resolve relative to its directory.
pub fn load_patch_set(path: &Path) -> Result<Vec<SourcePatch>, PatchIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| PatchIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: PatchFile = toml::from_str(&text).map_err(|e| PatchIoError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    file.patch
        .into_iter()
        .map(|d| {
            let patch = SourcePatch {
                id: d.id,
                shape: d.shape,
                raster: Rgb::load_png(&dir.join(&d.raster))?,
                quad: d.quad.map(|[x, y]| Point::new(x, y)),
                color_gain: d.color_gain,
                color_bias: d.color_bias,
                flipped: d.flipped,
            };
            patch.validate()?;
            Ok(patch)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_patch() -> SourcePatch {
        SourcePatch {
            id: 3,
            shape: SignShape::Round,
            raster: Rgb::from_fn(100, 100, |x, y| [x as f32 / 99.0, y as f32 / 99.0, 0.5]),
            quad: [
                Point::new(30.0, 30.0),
                Point::new(70.0, 32.0),
                Point::new(70.0, 70.0),
                Point::new(30.0, 68.0),
            ],
            color_gain: [1.0; 3],
            color_bias: [0.0; 3],
            flipped: false,
        }
    }

    #[test]
    fn flipping_twice_is_refused() {
        let f = flip_patch(&toy_patch()).unwrap();
        assert!(f.flipped);
        assert_eq!(f.id, 3);
        assert!(matches!(flip_patch(&f), Err(SynthesisError::AlreadyFlipped(3))));
    }

    #[test]
    fn symmetric_raster_is_unchanged_by_mirroring() {
        let mut p = toy_patch();
        p.raster = Rgb::from_fn(100, 100, |x, y| {
            let d = (x as f32 - 49.5).abs();
            [d / 50.0, y as f32 / 99.0, 0.2]
        });
        assert_eq!(flip_patch(&p).unwrap().raster, p.raster);
    }

    #[test]
    fn flipped_quad_coordinates_mirror_and_reorder() {
        let f = flip_patch(&toy_patch()).unwrap();
        // x -> 100 - x, with left/right corners exchanged
        let expect = [(30.0, 32.0), (70.0, 30.0), (70.0, 68.0), (30.0, 70.0)];
        for (p, (x, y)) in f.quad.iter().zip(expect) {
            assert_eq!((p.x, p.y), (x, y));
        }
        assert!(check_quad(&f.quad).is_ok());
        assert!(f.quad[0].x < f.quad[1].x && f.quad[0].y < f.quad[3].y);
    }

    #[test]
    fn procedural_patch_is_deterministic() {
        for shape in [SignShape::Round, SignShape::Triangular] {
            assert_eq!(generate_procedural_patch(11, shape), generate_procedural_patch(11, shape));
        }
    }

    #[test]
    fn procedural_quads_are_inscribed_in_the_face_incircle() {
        for seed in 0..60 {
            for shape in [SignShape::Round, SignShape::Triangular] {
                let (p, g) = generate_with_geometry(seed, shape);
                p.validate().unwrap();
                for q in p.quad {
                    let (dx, dy) = (q.x - f64::from(g.cx), q.y - f64::from(g.cy));
                    let d = (dx * dx + dy * dy).sqrt();
                    assert!(d < f64::from(g.face_radius), "seed {seed} {shape:?}: corner outside incircle");
                    assert_eq!(sign_region(shape, &g, q.x as f32, q.y as f32), 2);
                }
                assert!(p.color_gain.iter().all(|g| (0.7..1.1).contains(g)));
                assert!(p.color_bias.iter().all(|b| (-0.1..0.1).contains(b)));
            }
        }
    }

    #[test]
    fn corner_jitter_is_bounded_by_sign_width() {
        for seed in 0..60 {
            let (p, g) = generate_with_geometry(seed, SignShape::Round);
            let half = 0.66 * f64::from(g.face_radius);
            let ideal = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
            for (q, (sx, sy)) in p.quad.iter().zip(ideal) {
                let jx = q.x - (f64::from(g.cx) + sx * half);
                let jy = q.y - (f64::from(g.cy) + sy * half);
                assert!((jx * jx + jy * jy).sqrt() <= 0.12 * 2.0 * f64::from(g.outer));
            }
        }
    }

    #[test]
    fn fourteen_base_patches_are_distinct() {
        let base = procedural_base_patches(0);
        assert_eq!(base.len(), 14);
        assert_eq!(base.iter().filter(|p| p.shape == SignShape::Round).count(), 7);
        for i in 0..base.len() {
            for j in i + 1..base.len() {
                let diff: f32 = base[i]
                    .raster
                    .data()
                    .iter()
                    .zip(base[j].raster.data())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                assert!(diff > 0.0, "patches {i} and {j} identical");
            }
        }
    }

    #[test]
    fn descriptor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let patches = with_flipped(procedural_base_patches(5)).unwrap();
        let path = save_patch_set(dir.path(), &patches).unwrap();
        let back = load_patch_set(&path).unwrap();
        assert_eq!(back, patches);
    }
}
