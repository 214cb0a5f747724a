//! Pictogram embedding: warp a pictogram into a sign patch and produce the
//! clean 64x64 images every corrupted sample derives from.

mod homography;
mod patch;

use thiserror::Error;

pub use homography::{check_quad, homography_from_quad, Homography, Point, Quad};
pub use patch::{
    flip_patch, generate_procedural_patch, load_patch_set, procedural_base_patches, save_patch_set,
    with_flipped, PatchDescriptor, PatchFile, PatchIoError, SourcePatch, BASE_PATCHES, PATCHES_PER_SHAPE,
    PROCEDURAL_SIZE,
};

use crate::catalog::{Catalog, CatalogError, Design, PictogramAsset, SignShape, CLASSES};
use crate::raster::{area_weights, Mask, Rgb, Rgba};

pub const CLEAN_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("degenerate quad: corners collinear or not convex")]
    DegenerateQuad,
    #[error("patch {0} is already flipped")]
    AlreadyFlipped(u32),
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("incomplete patch set: {0}")]
    IncompletePatchSet(String),
    #[error("shape mismatch: patch {patch} is {patch_shape:?} but class {class} needs {class_shape:?}")]
    ShapeMismatch {
        patch: u32,
        patch_shape: SignShape,
        class: u8,
        class_shape: SignShape,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// A pictogram embedded into one (possibly flipped) patch, down-scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanImage {
    pub patch_id: u32,
    pub flipped: bool,
    pub class_id: u8,
    pub design: Design,
    pub raster: Rgb,
}

/// Bilinear sample of premultiplied RGBA; outside the raster is transparent.
fn sample_premultiplied(img: &Rgba, x: f32, y: f32) -> [f32; 4] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let fetch = |ix: i64, iy: i64| -> [f32; 4] {
        if ix < 0 || iy < 0 || ix >= w || iy >= h {
            return [0.0; 4];
        }
        let p = img.pixel(ix as usize, iy as usize);
        [p[0] * p[3], p[1] * p[3], p[2] * p[3], p[3]]
    };
    let (ix, iy) = (x0 as i64, y0 as i64);
    let p00 = fetch(ix, iy);
    let p10 = fetch(ix + 1, iy);
    let p01 = fetch(ix, iy + 1);
    let p11 = fetch(ix + 1, iy + 1);
    let mut out = [0.0; 4];
    for c in 0..4 {
        let top = p00[c] + (p10[c] - p00[c]) * fx;
        let bot = p01[c] + (p11[c] - p01[c]) * fx;
        out[c] = top + (bot - top) * fy;
    }
    out
}

/// Patch pixels (in patch resolution) whose centers fall inside the quad.
/// These are the only pixels embedding can touch.
pub fn quad_mask(patch: &SourcePatch) -> Result<Mask, SynthesisError> {
    let inv = homography_from_quad(&patch.quad)?
        .inverse()
        .ok_or(SynthesisError::DegenerateQuad)?;
    let (w, h) = (patch.raster.width(), patch.raster.height());
    let mut mask = Mask::new(w, h);
    let (x0, y0, x1, y1) = quad_bounds(&patch.quad, w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            let uv = inv.apply(Point::new(x as f64 + 0.5, y as f64 + 0.5));
            if (0.0..=1.0).contains(&uv.x) && (0.0..=1.0).contains(&uv.y) {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

fn quad_bounds(quad: &Quad, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let min_x = quad.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = quad.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = quad.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = quad.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    (
        (min_x.floor().max(0.0) as usize).min(w),
        (min_y.floor().max(0.0) as usize).min(h),
        (max_x.ceil().max(0.0) as usize + 1).min(w),
        (max_y.ceil().max(0.0) as usize + 1).min(h),
    )
}

/// Pixels of the `out_size` clean image that can differ between designs:
/// every output pixel whose area-filter footprint overlaps the quad mask.
pub fn quad_footprint(patch: &SourcePatch, out_size: usize) -> Result<Mask, SynthesisError> {
    let mask = quad_mask(patch)?;
    Ok(downscale_mask(&mask, out_size, out_size))
}

/// Propagate a mask through [`Rgb::resize_area`]: an output pixel is set if
/// any source pixel with nonzero weight is set.
pub fn downscale_mask(mask: &Mask, width: usize, height: usize) -> Mask {
    if mask.width == width && mask.height == height {
        return mask.clone();
    }
    let wx = area_weights(mask.width, width);
    let wy = area_weights(mask.height, height);
    let mut out = Mask::new(width, height);
    for (oy, ty) in wy.iter().enumerate() {
        for (ox, tx) in wx.iter().enumerate() {
            let hit = ty
                .iter()
                .any(|&(sy, _)| tx.iter().any(|&(sx, _)| mask.get(sx, sy)));
            out.set(ox, oy, hit);
        }
    }
    out
}

/// Warp `asset` into `patch.quad`, map its colors through the patch's
/// per-channel gain and bias, alpha-composite it over the patch and area
/// down-scale the result to `out_size` x `out_size`.
pub fn embed_pictogram(
    patch: &SourcePatch,
    asset: &PictogramAsset,
    out_size: usize,
) -> Result<CleanImage, SynthesisError> {
    let inv = homography_from_quad(&patch.quad)?
        .inverse()
        .ok_or(SynthesisError::DegenerateQuad)?;
    let mut comp = patch.raster.clone();
    let (w, h) = (comp.width(), comp.height());
    let (aw, ah) = (asset.raster.width() as f64, asset.raster.height() as f64);
    let (x0, y0, x1, y1) = quad_bounds(&patch.quad, w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            let uv = inv.apply(Point::new(x as f64 + 0.5, y as f64 + 0.5));
            if !((0.0..=1.0).contains(&uv.x) && (0.0..=1.0).contains(&uv.y)) {
                continue;
            }
            let s = sample_premultiplied(&asset.raster, (uv.x * aw - 0.5) as f32, (uv.y * ah - 0.5) as f32);
            let alpha = s[3];
            if alpha <= 0.0 {
                continue;
            }
            let bg = comp.pixel(x, y);
            let mut px = [0.0; 3];
            for c in 0..3 {
                let ink = (patch.color_gain[c] * (s[c] / alpha) + patch.color_bias[c]).clamp(0.0, 1.0);
                px[c] = alpha * ink + (1.0 - alpha) * bg[c];
            }
            comp.put(x, y, px);
        }
    }
    Ok(CleanImage {
        patch_id: patch.id,
        flipped: patch.flipped,
        class_id: asset.class_id,
        design: asset.design,
        raster: comp.resize_area(out_size, out_size).quantized(),
    })
}

/// Check the patch set holds 7 round and 7 triangular base patches, each
/// also present flipped.
pub fn validate_patch_set(patches: &[SourcePatch]) -> Result<(), SynthesisError> {
    let count = |shape: SignShape, flipped: bool| {
        patches
            .iter()
            .filter(|p| p.shape == shape && p.flipped == flipped)
            .count()
    };
    for shape in [SignShape::Round, SignShape::Triangular] {
        for flipped in [false, true] {
            let n = count(shape, flipped);
            if n != PATCHES_PER_SHAPE {
                return Err(SynthesisError::IncompletePatchSet(format!(
                    "{n} {shape:?} patches with flipped={flipped}, expected {PATCHES_PER_SHAPE}"
                )));
            }
        }
    }
    for p in patches.iter().filter(|p| !p.flipped) {
        if !patches.iter().any(|q| q.flipped && q.id == p.id && q.shape == p.shape) {
            return Err(SynthesisError::IncompletePatchSet(format!(
                "patch {} has no flipped counterpart",
                p.id
            )));
        }
    }
    for p in patches {
        p.validate()?;
    }
    Ok(())
}

/// Clean images for the given classes: each class is embedded into every
/// patch of its sign shape. Ordered by (patch id, flipped, class id).
pub fn build_clean_set_for_classes(
    catalog: &Catalog,
    patches: &[SourcePatch],
    design: Design,
    classes: &[u8],
) -> Result<Vec<CleanImage>, SynthesisError> {
    validate_patch_set(patches)?;
    let mut ordered: Vec<&SourcePatch> = patches.iter().collect();
    ordered.sort_by_key(|p| (p.id, p.flipped));
    let mut out = Vec::new();
    for patch in ordered {
        for &class_id in classes {
            let class = crate::catalog::class_by_id(class_id)?;
            if class.shape() != patch.shape {
                continue;
            }
            let asset = catalog.lookup(class_id, design.into())?;
            let clean = embed_pictogram(patch, asset, CLEAN_SIZE)?;
            out.push(clean);
        }
    }
    for c in &out {
        let patch = patches
            .iter()
            .find(|p| p.id == c.patch_id && p.flipped == c.flipped)
            .expect("clean image comes from a known patch");
        let class_shape = CLASSES[usize::from(c.class_id)].shape();
        if patch.shape != class_shape {
            return Err(SynthesisError::ShapeMismatch {
                patch: patch.id,
                patch_shape: patch.shape,
                class: c.class_id,
                class_shape,
            });
        }
    }
    Ok(out)
}

/// All 336 clean images of one design: 18 prohibitory classes on 14 round
/// patch variants and 6 warning classes on 14 triangular ones.
pub fn build_clean_set(
    catalog: &Catalog,
    patches: &[SourcePatch],
    design: Design,
) -> Result<Vec<CleanImage>, SynthesisError> {
    let all: Vec<u8> = CLASSES.iter().map(|c| c.id).collect();
    build_clean_set_for_classes(catalog, patches, design, &all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Provenance;
    use crate::placeholder::placeholder_catalog;
    use std::collections::BTreeMap;

    fn asset(fill: [f32; 4]) -> PictogramAsset {
        PictogramAsset {
            class_id: 0,
            design: Design::ATc,
            raster: Rgba::filled(100, 100, fill),
            provenance: Provenance::Official,
        }
    }

    fn rect_patch(size: usize, x0: f64, y0: f64, x1: f64, y1: f64) -> SourcePatch {
        SourcePatch {
            id: 0,
            shape: SignShape::Round,
            raster: Rgb::from_fn(size, size, |x, y| [0.9, (x + y) as f32 / (2 * size) as f32, 0.6]).quantized(),
            quad: [
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
            color_gain: [1.0; 3],
            color_bias: [0.0; 3],
            flipped: false,
        }
    }

    #[test]
    fn transparent_asset_leaves_the_resized_patch() {
        let patch = generate_procedural_patch(1, SignShape::Round);
        let out = embed_pictogram(&patch, &asset([0.0; 4]), 64).unwrap();
        assert_eq!(out.raster, patch.raster.resize_area(64, 64).quantized());
    }

    #[test]
    fn opaque_black_rectangle_matches_nearest_pixel_reference() {
        let patch = rect_patch(16, 4.0, 3.0, 12.0, 11.0);
        let out = embed_pictogram(&patch, &asset([0.0, 0.0, 0.0, 1.0]), 16).unwrap();
        // reference rasterizer: a pixel is ink iff its center is inside the rectangle
        for y in 0..16 {
            for x in 0..16 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = (4.0..=12.0).contains(&cx) && (3.0..=11.0).contains(&cy);
                let got = out.raster.pixel(x, y);
                if inside {
                    assert_eq!(got, [0.0; 3], "({x},{y})");
                } else {
                    assert_eq!(got, patch.raster.pixel(x, y), "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn affine_color_transform_on_mid_gray() {
        let mut patch = rect_patch(128, 20.0, 20.0, 108.0, 108.0);
        patch.color_gain = [0.5; 3];
        patch.color_bias = [0.25; 3];
        let out = embed_pictogram(&patch, &asset([0.5, 0.5, 0.5, 1.0]), 64).unwrap();
        // 0.5 * 0.5 + 0.25 = 0.5, stored as round(127.5) = 128 (ties to even)
        for y in 12..52 {
            for x in 12..52 {
                assert_eq!(out.raster.pixel(x, y), [128.0 / 255.0; 3]);
            }
        }
    }

    #[test]
    fn embedding_is_deterministic_and_confined_to_the_quad() {
        let catalog = placeholder_catalog(0);
        let patch = generate_procedural_patch(4, SignShape::Round);
        let foot = quad_footprint(&patch, 64).unwrap();
        let a = embed_pictogram(&patch, catalog.lookup(3, Design::ATc.into()).unwrap(), 64).unwrap();
        let b = embed_pictogram(&patch, catalog.lookup(3, Design::DE.into()).unwrap(), 64).unwrap();
        let a2 = embed_pictogram(&patch, catalog.lookup(3, Design::ATc.into()).unwrap(), 64).unwrap();
        assert_eq!(a, a2);
        let mut differing = 0;
        for y in 0..64 {
            for x in 0..64 {
                if a.raster.pixel(x, y) != b.raster.pixel(x, y) {
                    differing += 1;
                    assert!(foot.get(x, y), "pixel ({x},{y}) differs outside the quad");
                }
            }
        }
        assert!(differing > 50);
    }

    #[test]
    fn clean_set_counts() {
        let catalog = placeholder_catalog(0);
        let patches = with_flipped(procedural_base_patches(0)).unwrap();
        let set = build_clean_set(&catalog, &patches, Design::ATn).unwrap();
        assert_eq!(set.len(), 336);
        let mut per_class: BTreeMap<u8, Vec<(u32, bool)>> = BTreeMap::new();
        let mut per_patch: BTreeMap<(u32, bool), usize> = BTreeMap::new();
        for c in &set {
            assert_eq!((c.raster.width(), c.raster.height()), (64, 64));
            per_class.entry(c.class_id).or_default().push((c.patch_id, c.flipped));
            *per_patch.entry((c.patch_id, c.flipped)).or_default() += 1;
        }
        assert_eq!(per_class.len(), 24);
        for (class, mut pids) in per_class {
            // the multiset of patches is every id of the class's shape, base and flipped
            pids.sort();
            let shape = CLASSES[class as usize].shape();
            let mut expect: Vec<(u32, bool)> = patches
                .iter()
                .filter(|p| p.shape == shape)
                .map(|p| (p.id, p.flipped))
                .collect();
            expect.sort();
            assert_eq!(pids, expect);
            assert_eq!(pids.len(), 14);
        }
        for ((id, _), n) in per_patch {
            assert_eq!(n, if id < 7 { 18 } else { 6 });
        }
    }

    #[test]
    fn single_class_clean_set_scales() {
        let catalog = placeholder_catalog(0);
        let patches = with_flipped(procedural_base_patches(0)).unwrap();
        let set = build_clean_set_for_classes(&catalog, &patches, Design::DE, &[7]).unwrap();
        assert_eq!(set.len(), 14);
    }

    #[test]
    fn incomplete_patch_sets_are_rejected() {
        let catalog = placeholder_catalog(0);
        let base = procedural_base_patches(0);
        assert!(matches!(
            build_clean_set(&catalog, &base, Design::DE),
            Err(SynthesisError::IncompletePatchSet(_))
        ));
    }
}
