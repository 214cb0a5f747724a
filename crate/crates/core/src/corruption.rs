//! Secondary corruptions and distance-simulating down-sampling.
//!
//! A [`CorruptionSpec`] carries every parameter of one corruption, including
//! the seed of any stochastic field, so applying it is a pure function of
//! `(image, spec)`. Specs are sampled from a design-free [`RngKey`]; the
//! three design groups therefore receive byte-identical corruptions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::Design;
use crate::raster::{Gray, Mask, Rgb};
use crate::rng::{keyed_rng, seeded_rng, RngKey};
use crate::synthesis::CleanImage;

pub const NUM_LEVELS: usize = 5;
/// Down-sampled images never go below this side length.
pub const MIN_DOWNSAMPLED_SIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    Contrast,
    Brighten,
    Darken,
    GaussianNoise,
    Spatter,
    Shadow,
    Rain,
    MotionBlur,
    GaussianBlur,
    ZoomBlur,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 10] = [
        CorruptionKind::Contrast,
        CorruptionKind::Brighten,
        CorruptionKind::Darken,
        CorruptionKind::GaussianNoise,
        CorruptionKind::Spatter,
        CorruptionKind::Shadow,
        CorruptionKind::Rain,
        CorruptionKind::MotionBlur,
        CorruptionKind::GaussianBlur,
        CorruptionKind::ZoomBlur,
    ];

    /// Whether every output pixel depends only on the same input pixel
    /// (plus position-keyed fields).
    pub fn is_pointwise(self) -> bool {
        !matches!(
            self,
            CorruptionKind::MotionBlur | CorruptionKind::GaussianBlur | CorruptionKind::ZoomBlur
        )
    }
}

/// Fully materialized parameters of one secondary corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionParams {
    /// `out = 0.5 + factor * (in - 0.5)`
    Contrast { factor: f64 },
    Brighten { amount: f64 },
    Darken { amount: f64 },
    GaussianNoise { sigma: f64 },
    /// Dark blobs from a thresholded, blurred noise field.
    Spatter { coverage: f64, sigma: f64, opacity: f64 },
    /// Soft-edged half-plane shadow.
    Shadow {
        angle: f64,
        offset: f64,
        attenuation: f64,
        softness: f64,
    },
    /// Bright streaks sharing one direction.
    Rain {
        streaks: u32,
        angle: f64,
        length: f64,
        brightness: f64,
    },
    MotionBlur { length: f64, angle: f64 },
    GaussianBlur { sigma: f64 },
    /// Mean of `copies` center-scaled versions, scales from 1 to `max_scale`.
    ZoomBlur { max_scale: f64, copies: u32 },
}

impl CorruptionParams {
    pub fn kind(&self) -> CorruptionKind {
        match self {
            CorruptionParams::Contrast { .. } => CorruptionKind::Contrast,
            CorruptionParams::Brighten { .. } => CorruptionKind::Brighten,
            CorruptionParams::Darken { .. } => CorruptionKind::Darken,
            CorruptionParams::GaussianNoise { .. } => CorruptionKind::GaussianNoise,
            CorruptionParams::Spatter { .. } => CorruptionKind::Spatter,
            CorruptionParams::Shadow { .. } => CorruptionKind::Shadow,
            CorruptionParams::Rain { .. } => CorruptionKind::Rain,
            CorruptionParams::MotionBlur { .. } => CorruptionKind::MotionBlur,
            CorruptionParams::GaussianBlur { .. } => CorruptionKind::GaussianBlur,
            CorruptionParams::ZoomBlur { .. } => CorruptionKind::ZoomBlur,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct IntensityLevel(u8);

impl IntensityLevel {
    pub fn new(level: u8) -> Result<Self, CorruptionError> {
        if (1..=NUM_LEVELS as u8).contains(&level) {
            Ok(IntensityLevel(level))
        } else {
            Err(CorruptionError::InvalidLevel(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = IntensityLevel> {
        (1..=NUM_LEVELS as u8).map(IntensityLevel)
    }

    pub fn factor_interval(self, config: &CorruptionConfig) -> [f64; 2] {
        config.level_intervals[usize::from(self.0) - 1]
    }
}

impl TryFrom<u8> for IntensityLevel {
    type Error = CorruptionError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        IntensityLevel::new(v)
    }
}

impl From<IntensityLevel> for u8 {
    fn from(l: IntensityLevel) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub level: IntensityLevel,
    pub params: CorruptionParams,
    /// Seed for noise textures, rain streaks and spatter blobs. Stored as hex
    /// so the record survives formats limited to signed 64-bit integers.
    #[serde(with = "hex_u64")]
    pub noise_seed: u64,
    pub downsample_factor: f64,
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16).map_err(serde::de::Error::custom)
    }
}

impl CorruptionSpec {
    pub fn kind(&self) -> CorruptionKind {
        self.params.kind()
    }

    /// Structured text record used for audit trails and digests.
    pub fn to_record(&self) -> String {
        toml::to_string(self).expect("corruption spec serializes")
    }

    pub fn from_record(text: &str) -> Result<Self, CorruptionError> {
        toml::from_str(text).map_err(|e| CorruptionError::BadRecord(e.to_string()))
    }

    /// Hex SHA-256 prefix of the record; equal digests mean equal specs.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_record().as_bytes());
        hex::encode(&hash[..8])
    }

    /// Side length of the intermediate down-sampled raster.
    pub fn downsampled_side(&self, size: usize) -> usize {
        ((size as f64 / self.downsample_factor).round() as usize).clamp(MIN_DOWNSAMPLED_SIDE, size)
    }
}

/// Every sampling range, the level intervals and the enabled kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Half-open down-sampling factor interval per level 1..5.
    pub level_intervals: [[f64; 2]; NUM_LEVELS],
    /// Kinds the sampler chooses from, uniformly.
    pub kinds: Vec<CorruptionKind>,
    pub contrast: [f64; 2],
    pub brighten: [f64; 2],
    pub darken: [f64; 2],
    pub gaussian_noise_sigma: [f64; 2],
    pub gaussian_blur_sigma: [f64; 2],
    pub motion_blur_length: [f64; 2],
    pub motion_blur_angle: [f64; 2],
    pub zoom_blur_max_scale: [f64; 2],
    pub zoom_blur_copies: u32,
    pub shadow_attenuation: [f64; 2],
    pub shadow_offset: [f64; 2],
    pub shadow_softness: f64,
    pub rain_streaks: [u32; 2],
    pub rain_angle_deg: [f64; 2],
    pub rain_length: f64,
    pub rain_brightness: f64,
    pub spatter_coverage: [f64; 2],
    pub spatter_sigma: f64,
    pub spatter_opacity: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            level_intervals: [[1.0, 1.5], [1.5, 2.5], [2.5, 4.0], [4.0, 6.0], [6.0, 8.0]],
            kinds: CorruptionKind::ALL.to_vec(),
            contrast: [0.4, 1.6],
            brighten: [0.1, 0.35],
            darken: [0.1, 0.35],
            gaussian_noise_sigma: [0.02, 0.12],
            gaussian_blur_sigma: [0.5, 2.0],
            motion_blur_length: [3.0, 9.0],
            motion_blur_angle: [0.0, PI],
            zoom_blur_max_scale: [1.02, 1.12],
            zoom_blur_copies: 8,
            shadow_attenuation: [0.3, 0.6],
            shadow_offset: [-20.0, 20.0],
            shadow_softness: 4.0,
            rain_streaks: [20, 60],
            rain_angle_deg: [70.0, 110.0],
            rain_length: 8.0,
            rain_brightness: 0.25,
            spatter_coverage: [0.03, 0.08],
            spatter_sigma: 2.0,
            spatter_opacity: 0.6,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<(), CorruptionError> {
        let bad = |msg: String| Err(CorruptionError::InvalidConfig(msg));
        if self.level_intervals[0][0] != 1.0 {
            return bad("level 1 interval must start at 1.0".into());
        }
        for (i, [lo, hi]) in self.level_intervals.iter().enumerate() {
            if !(*lo >= 1.0 && lo < hi) {
                return bad(format!("level {} interval [{lo}, {hi}) is empty or below 1", i + 1));
            }
            if i > 0 && *lo < self.level_intervals[i - 1][1] {
                return bad(format!("level {} interval overlaps level {}", i + 1, i));
            }
        }
        if self.kinds.is_empty() {
            return bad("no corruption kinds enabled".into());
        }
        let ranges = [
            ("contrast", self.contrast),
            ("brighten", self.brighten),
            ("darken", self.darken),
            ("gaussian_noise_sigma", self.gaussian_noise_sigma),
            ("gaussian_blur_sigma", self.gaussian_blur_sigma),
            ("motion_blur_length", self.motion_blur_length),
            ("motion_blur_angle", self.motion_blur_angle),
            ("zoom_blur_max_scale", self.zoom_blur_max_scale),
            ("shadow_attenuation", self.shadow_attenuation),
            ("shadow_offset", self.shadow_offset),
            ("rain_angle_deg", self.rain_angle_deg),
            ("spatter_coverage", self.spatter_coverage),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if self.rain_streaks[0] > self.rain_streaks[1] {
            return bad("rain_streaks range is inverted".into());
        }
        if self.zoom_blur_copies < 2 || self.zoom_blur_max_scale[0] < 1.0 {
            return bad("zoom blur needs >= 2 copies and scales >= 1".into());
        }
        if !(self.spatter_coverage[0] > 0.0 && self.spatter_coverage[1] < 1.0) {
            return bad("spatter coverage must lie in (0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("intensity level {0} outside 1..=5")]
    InvalidLevel(u8),
    #[error("invalid corruption config: {0}")]
    InvalidConfig(String),
    #[error("clean images disagree on (patch, flipped, class): {0}")]
    MismatchedProvenance(String),
    #[error("bad corruption record: {0}")]
    BadRecord(String),
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draw a corruption for one replica at one intensity level. The kind is
/// uniform over the enabled kinds, parameters uniform over their ranges,
/// the down-sampling factor uniform over the level's interval.
pub fn sample_spec(key: &RngKey, level: IntensityLevel, config: &CorruptionConfig) -> CorruptionSpec {
    let mut fields = key.fields().to_vec();
    fields.push(u64::from(level.get()));
    let mut rng = keyed_rng("corruption-spec", &fields);
    let kind = config.kinds[rng.gen_range(0..config.kinds.len())];
    let params = match kind {
        CorruptionKind::Contrast => CorruptionParams::Contrast {
            factor: uniform(&mut rng, config.contrast),
        },
        CorruptionKind::Brighten => CorruptionParams::Brighten {
            amount: uniform(&mut rng, config.brighten),
        },
        CorruptionKind::Darken => CorruptionParams::Darken {
            amount: uniform(&mut rng, config.darken),
        },
        CorruptionKind::GaussianNoise => CorruptionParams::GaussianNoise {
            sigma: uniform(&mut rng, config.gaussian_noise_sigma),
        },
        CorruptionKind::Spatter => CorruptionParams::Spatter {
            coverage: uniform(&mut rng, config.spatter_coverage),
            sigma: config.spatter_sigma,
            opacity: config.spatter_opacity,
        },
        CorruptionKind::Shadow => CorruptionParams::Shadow {
            angle: uniform(&mut rng, [0.0, 2.0 * PI]),
            offset: uniform(&mut rng, config.shadow_offset),
            attenuation: uniform(&mut rng, config.shadow_attenuation),
            softness: config.shadow_softness,
        },
        CorruptionKind::Rain => CorruptionParams::Rain {
            streaks: rng.gen_range(config.rain_streaks[0]..=config.rain_streaks[1]),
            angle: uniform(&mut rng, config.rain_angle_deg).to_radians(),
            length: config.rain_length,
            brightness: config.rain_brightness,
        },
        CorruptionKind::MotionBlur => CorruptionParams::MotionBlur {
            length: uniform(&mut rng, config.motion_blur_length),
            angle: uniform(&mut rng, config.motion_blur_angle),
        },
        CorruptionKind::GaussianBlur => CorruptionParams::GaussianBlur {
            sigma: uniform(&mut rng, config.gaussian_blur_sigma),
        },
        CorruptionKind::ZoomBlur => CorruptionParams::ZoomBlur {
            max_scale: uniform(&mut rng, config.zoom_blur_max_scale),
            copies: config.zoom_blur_copies,
        },
    };
    let downsample_factor = uniform(&mut rng, level.factor_interval(config));
    let noise_seed = rng.gen::<u64>();
    CorruptionSpec {
        level,
        params,
        noise_seed,
        downsample_factor,
    }
}

/// A position-keyed random field rendered from a spec's noise seed.
#[derive(Debug, Clone, PartialEq)]
pub enum StochasticField {
    /// Per pixel and channel, already scaled by sigma.
    Noise(Rgb),
    /// Streak intensity in [0, 1] per pixel.
    Rain(Gray),
    /// Blob mask in {0, 1} per pixel.
    Spatter(Gray),
    /// Shadow weight in [0, 1] per pixel.
    Shadow(Gray),
}

/// Render the random or geometric field a corruption uses, if any. Depends
/// only on `(spec, size)`, never on the image content.
pub fn stochastic_field(spec: &CorruptionSpec, width: usize, height: usize) -> Option<StochasticField> {
    match spec.params {
        CorruptionParams::GaussianNoise { sigma } => {
            let mut rng = seeded_rng("noise-field", spec.noise_seed);
            let data = (0..width * height * 3)
                .map(|_| (rng.sample::<f64, _>(StandardNormal) * sigma) as f32)
                .collect();
            Some(StochasticField::Noise(Rgb::from_vec(width, height, data)))
        }
        CorruptionParams::Rain {
            streaks, angle, length, ..
        } => {
            let mut rng = seeded_rng("rain-field", spec.noise_seed);
            let mut field = Gray::new(width, height);
            let (dx, dy) = (angle.cos(), angle.sin());
            let steps = (length * 4.0).ceil() as usize;
            for _ in 0..streaks {
                let x0 = rng.gen_range(0.0..width as f64);
                let y0 = rng.gen_range(0.0..height as f64);
                for s in 0..=steps {
                    let t = (s as f64 / steps as f64 - 0.5) * length;
                    let (x, y) = (x0 + t * dx, y0 + t * dy);
                    if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
                        field.put(x as usize, y as usize, [1.0]);
                    }
                }
            }
            Some(StochasticField::Rain(field))
        }
        CorruptionParams::Spatter { coverage, sigma, .. } => {
            let mut rng = seeded_rng("spatter-field", spec.noise_seed);
            let data: Vec<f32> = (0..width * height)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect();
            let blurred = gaussian_blur(&Gray::from_vec(width, height, data), sigma);
            let mut sorted = blurred.data().to_vec();
            sorted.sort_by(f32::total_cmp);
            let keep = ((coverage * (width * height) as f64).round() as usize).clamp(1, width * height);
            let threshold = sorted[width * height - keep];
            Some(StochasticField::Spatter(
                blurred.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
            ))
        }
        CorruptionParams::Shadow {
            angle,
            offset,
            softness,
            ..
        } => {
            let (c, s) = (angle.cos(), angle.sin());
            let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
            Some(StochasticField::Shadow(Gray::from_fn(width, height, |x, y| {
                let d = (x as f64 + 0.5 - cx) * c + (y as f64 + 0.5 - cy) * s - offset;
                [(d / softness + 0.5).clamp(0.0, 1.0) as f32]
            })))
        }
        _ => None,
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter().map(|v| (v / sum) as f32).collect()
}

fn gaussian_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

/// Separable Gaussian blur with clamp-to-edge borders.
fn gaussian_blur<const C: usize>(img: &crate::raster::Image<C>, sigma: f64) -> crate::raster::Image<C> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let pass = |src: &crate::raster::Image<C>, horizontal: bool| {
        crate::raster::Image::<C>::from_fn(w as usize, h as usize, |x, y| {
            let mut acc = [0.0f32; C];
            for (i, wk) in k.iter().enumerate() {
                let o = i as i64 - r;
                let (sx, sy) = if horizontal {
                    ((x as i64 + o).clamp(0, w - 1), y as i64)
                } else {
                    (x as i64, (y as i64 + o).clamp(0, h - 1))
                };
                let p = src.pixel(sx as usize, sy as usize);
                for c in 0..C {
                    acc[c] += wk * p[c];
                }
            }
            acc
        })
    };
    let tmp = pass(img, true);
    pass(&tmp, false)
}

fn motion_blur(img: &Rgb, length: f64, angle: f64) -> Rgb {
    let taps = (length.ceil() as usize).max(1) + 1;
    let (dx, dy) = (angle.cos() as f32, angle.sin() as f32);
    let offsets: Vec<f32> = (0..taps)
        .map(|i| ((i as f64 / (taps - 1) as f64 - 0.5) * length) as f32)
        .collect();
    let n = offsets.len() as f32;
    Rgb::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0.0f32; 3];
        for t in &offsets {
            let p = img.sample_clamped(x as f32 + t * dx, y as f32 + t * dy);
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        acc.map(|v| v / n)
    })
}

fn zoom_blur(img: &Rgb, max_scale: f64, copies: u32) -> Rgb {
    let cx = (img.width() as f32 - 1.0) / 2.0;
    let cy = (img.height() as f32 - 1.0) / 2.0;
    let scales: Vec<f32> = (0..copies)
        .map(|k| (1.0 + (max_scale - 1.0) * f64::from(k) / f64::from(copies - 1)) as f32)
        .collect();
    let n = scales.len() as f32;
    Rgb::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0.0f32; 3];
        for s in &scales {
            let p = img.sample_clamped(cx + (x as f32 - cx) / s, cy + (y as f32 - cy) / s);
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        acc.map(|v| v / n)
    })
}

/// Apply only the secondary corruption (no down-sampling).
pub fn apply_secondary(img: &Rgb, spec: &CorruptionSpec) -> Rgb {
    let field = stochastic_field(spec, img.width(), img.height());
    let mut out = match (spec.params, field) {
        (CorruptionParams::Contrast { factor }, _) => {
            let f = factor as f32;
            img.map(|v| 0.5 + f * (v - 0.5))
        }
        (CorruptionParams::Brighten { amount }, _) => img.map(|v| v + amount as f32),
        (CorruptionParams::Darken { amount }, _) => img.map(|v| v - amount as f32),
        (CorruptionParams::GaussianNoise { .. }, Some(StochasticField::Noise(noise))) => {
            let mut out = img.clone();
            for (v, n) in out.data_mut().iter_mut().zip(noise.data()) {
                *v += n;
            }
            out
        }
        (CorruptionParams::Rain { brightness, .. }, Some(StochasticField::Rain(field))) => {
            let b = brightness as f32;
            Rgb::from_fn(img.width(), img.height(), |x, y| {
                let f = field.pixel(x, y)[0];
                img.pixel(x, y).map(|v| v + b * f)
            })
        }
        (CorruptionParams::Spatter { opacity, .. }, Some(StochasticField::Spatter(mask))) => {
            const BLOB: [f32; 3] = [0.12, 0.1, 0.08];
            let o = opacity as f32;
            Rgb::from_fn(img.width(), img.height(), |x, y| {
                let m = o * mask.pixel(x, y)[0];
                let p = img.pixel(x, y);
                [0, 1, 2].map(|c| (1.0 - m) * p[c] + m * BLOB[c])
            })
        }
        (CorruptionParams::Shadow { attenuation, .. }, Some(StochasticField::Shadow(weight))) => {
            let a = attenuation as f32;
            Rgb::from_fn(img.width(), img.height(), |x, y| {
                let k = 1.0 - a * weight.pixel(x, y)[0];
                img.pixel(x, y).map(|v| v * k)
            })
        }
        (CorruptionParams::MotionBlur { length, angle }, _) => motion_blur(img, length, angle),
        (CorruptionParams::GaussianBlur { sigma }, _) => gaussian_blur(img, sigma),
        (CorruptionParams::ZoomBlur { max_scale, copies }, _) => zoom_blur(img, max_scale, copies),
        (params, field) => unreachable!("field {field:?} does not match {params:?}"),
    };
    out.clamp_unit();
    out
}

/// Down-scale by area averaging to the spec's reduced side, then bilinear
/// up-scale back, losing spatial resolution but keeping the size.
pub fn downsample(img: &Rgb, spec: &CorruptionSpec) -> Rgb {
    let (w, h) = (img.width(), img.height());
    let side = spec.downsampled_side(w.min(h));
    if side >= w && side >= h {
        return img.clone();
    }
    let sw = ((w as f64 / spec.downsample_factor).round() as usize).clamp(MIN_DOWNSAMPLED_SIDE, w);
    let sh = ((h as f64 / spec.downsample_factor).round() as usize).clamp(MIN_DOWNSAMPLED_SIDE, h);
    img.resize_area(sw, sh).resize_bilinear(w, h)
}

/// Secondary corruption followed by down-sampling, clamped to [0, 1].
pub fn apply(clean: &Rgb, spec: &CorruptionSpec) -> Rgb {
    let mut out = downsample(&apply_secondary(clean, spec), spec);
    out.clamp_unit();
    out
}

/// Corrupt the designs of one (patch, class, replica) with one spec.
pub fn apply_paired(
    cleans: &BTreeMap<Design, CleanImage>,
    spec: &CorruptionSpec,
) -> Result<BTreeMap<Design, Rgb>, CorruptionError> {
    let mut ids = cleans.values().map(|c| (c.patch_id, c.flipped, c.class_id));
    if let Some(first) = ids.next() {
        if let Some(other) = ids.find(|id| *id != first) {
            return Err(CorruptionError::MismatchedProvenance(format!("{first:?} vs {other:?}")));
        }
    }
    Ok(cleans
        .iter()
        .map(|(d, c)| (*d, apply(&c.raster, spec)))
        .collect())
}

/// Pixels of the corrupted output that can depend on any pixel in `mask`.
/// Conservative: blur supports are dilated by their full kernel radius and
/// the down/up-sampling pair by every tap it touches.
pub fn reach_mask(spec: &CorruptionSpec, mask: &Mask) -> Mask {
    let radius = match spec.params {
        CorruptionParams::GaussianBlur { sigma } => gaussian_radius(sigma),
        CorruptionParams::MotionBlur { length, .. } => (length / 2.0).ceil() as usize + 1,
        CorruptionParams::ZoomBlur { max_scale, .. } => {
            let half_diag = (mask.width.max(mask.height) as f64) * std::f64::consts::FRAC_1_SQRT_2;
            (half_diag * (1.0 - 1.0 / max_scale)).ceil() as usize + 1
        }
        _ => 0,
    };
    let after_secondary = mask.dilate(radius);
    let (w, h) = (mask.width, mask.height);
    let sw = ((w as f64 / spec.downsample_factor).round() as usize).clamp(MIN_DOWNSAMPLED_SIDE, w);
    let sh = ((h as f64 / spec.downsample_factor).round() as usize).clamp(MIN_DOWNSAMPLED_SIDE, h);
    if sw == w && sh == h {
        return after_secondary;
    }
    let low = crate::synthesis::downscale_mask(&after_secondary, sw, sh);
    let mut out = Mask::new(w, h);
    let (kx, ky) = (sw as f64 / w as f64, sh as f64 / h as f64);
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * ky - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * kx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let hit = low.get(x0, y0) || low.get(x1, y0) || low.get(x0, y1) || low.get(x1, y1);
            out.set(x, y, hit);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(replica: u32) -> RngKey {
        RngKey {
            master_seed: 42,
            run: 0,
            patch_id: 2,
            flipped: false,
            class_id: 5,
            replica_index: replica,
        }
    }

    fn spec(params: CorruptionParams, factor: f64) -> CorruptionSpec {
        CorruptionSpec {
            level: IntensityLevel::new(1).unwrap(),
            params,
            noise_seed: 99,
            downsample_factor: factor,
        }
    }

    fn gray(v: f32) -> Rgb {
        Rgb::filled(64, 64, [v; 3])
    }

    fn textured() -> Rgb {
        Rgb::from_fn(64, 64, |x, y| {
            [
                ((x * 7 + y * 3) % 17) as f32 / 16.0,
                ((x + 2 * y) % 11) as f32 / 10.0,
                0.4,
            ]
        })
    }

    #[test]
    fn default_config_is_valid_and_has_ten_kinds() {
        let c = CorruptionConfig::default();
        c.validate().unwrap();
        assert_eq!(c.kinds.len(), 10);
    }

    #[test]
    fn overlapping_levels_are_rejected() {
        let mut c = CorruptionConfig::default();
        c.level_intervals[2] = [2.0, 4.0];
        assert!(c.validate().is_err());
        let mut c = CorruptionConfig::default();
        c.level_intervals[0] = [1.1, 1.5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = CorruptionConfig::default();
        let l3 = IntensityLevel::new(3).unwrap();
        assert_eq!(sample_spec(&key(1), l3, &cfg), sample_spec(&key(1), l3, &cfg));
        assert_ne!(sample_spec(&key(1), l3, &cfg), sample_spec(&key(2), l3, &cfg));
    }

    #[test]
    fn level_one_factors_stay_in_interval() {
        let cfg = CorruptionConfig::default();
        let l1 = IntensityLevel::new(1).unwrap();
        for r in 0..2000 {
            let f = sample_spec(&key(r), l1, &cfg).downsample_factor;
            assert!((1.0..1.5).contains(&f), "{f}");
        }
    }

    #[test]
    fn kinds_are_uniform_chi_square() {
        // 10,000 draws over 10 kinds; chi-square critical value for df = 9 at
        // alpha = 0.01 is 21.666, and each count must sit within 3 sigma of
        // 1,000 with sigma = sqrt(10000 * 0.1 * 0.9) = 30.
        let cfg = CorruptionConfig::default();
        let l3 = IntensityLevel::new(3).unwrap();
        let mut counts = BTreeMap::new();
        for r in 0..10_000 {
            *counts.entry(sample_spec(&key(r), l3, &cfg).kind()).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 10);
        let chi2: f64 = counts
            .values()
            .map(|&c| (f64::from(c) - 1000.0).powi(2) / 1000.0)
            .sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}");
        for (k, c) in &counts {
            assert!((910..=1090).contains(c), "{k:?}: {c}");
        }
    }

    #[test]
    fn sampled_params_respect_ranges() {
        let cfg = CorruptionConfig::default();
        for level in IntensityLevel::all() {
            for r in 0..500 {
                let s = sample_spec(&key(r), level, &cfg);
                let [lo, hi] = level.factor_interval(&cfg);
                assert!(s.downsample_factor >= lo && s.downsample_factor < hi);
                match s.params {
                    CorruptionParams::Contrast { factor } => assert!((0.4..1.6).contains(&factor)),
                    CorruptionParams::Rain { streaks, angle, .. } => {
                        assert!((20..=60).contains(&streaks));
                        assert!((70f64.to_radians()..110f64.to_radians()).contains(&angle));
                    }
                    CorruptionParams::ZoomBlur { max_scale, copies } => {
                        assert!((1.02..1.12).contains(&max_scale));
                        assert_eq!(copies, 8);
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn zero_noise_without_downsampling_is_identity() {
        let img = textured();
        let s = spec(CorruptionParams::GaussianNoise { sigma: 0.0 }, 1.0);
        assert_eq!(apply(&img, &s), img);
    }

    #[test]
    fn blurring_a_constant_image_keeps_it_constant() {
        let img = gray(0.5);
        for sigma in [0.5, 1.3, 2.0] {
            let out = apply(&img, &spec(CorruptionParams::GaussianBlur { sigma }, 1.0));
            for v in out.data() {
                assert!((v - 0.5).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gaussian_noise_moments() {
        let out = apply(&gray(0.5), &spec(CorruptionParams::GaussianNoise { sigma: 0.1 }, 1.0));
        let (mean, std) = out.mean_std();
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((std - 0.1).abs() < 0.015, "std {std}");
    }

    #[test]
    fn spatter_coverage_hits_target() {
        let s = spec(
            CorruptionParams::Spatter {
                coverage: 0.05,
                sigma: 2.0,
                opacity: 0.6,
            },
            1.0,
        );
        let Some(StochasticField::Spatter(mask)) = stochastic_field(&s, 64, 64) else {
            panic!("spatter field");
        };
        let frac = mask.data().iter().filter(|v| **v > 0.5).count() as f64 / 4096.0;
        assert!((0.03..=0.08).contains(&frac), "{frac}");
    }

    #[test]
    fn every_kind_yields_in_range_images() {
        let cfg = CorruptionConfig::default();
        let img = textured();
        for level in IntensityLevel::all() {
            for r in 0..40 {
                let s = sample_spec(&key(r), level, &cfg);
                let out = apply(&img, &s);
                assert_eq!((out.width(), out.height()), (64, 64));
                assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(apply(&img, &s), out);
            }
        }
    }

    #[test]
    fn downsampled_side_is_bounded() {
        let mut s = spec(CorruptionParams::Contrast { factor: 1.0 }, 7.9);
        assert_eq!(s.downsampled_side(64), 8);
        s.downsample_factor = 100.0;
        assert_eq!(s.downsampled_side(64), 4);
        s.downsample_factor = 1.0;
        assert_eq!(s.downsampled_side(64), 64);
    }

    #[test]
    fn record_round_trip_and_digest() {
        let cfg = CorruptionConfig::default();
        for r in 0..50 {
            let s = sample_spec(&key(r), IntensityLevel::new(4).unwrap(), &cfg);
            let back = CorruptionSpec::from_record(&s.to_record()).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.digest(), s.digest());
        }
    }

    fn clean(patch: u32, design: Design, img: Rgb) -> CleanImage {
        CleanImage {
            patch_id: patch,
            flipped: false,
            class_id: 3,
            design,
            raster: img,
        }
    }

    #[test]
    fn paired_application_shares_fields() {
        let s = spec(
            CorruptionParams::Rain {
                streaks: 40,
                angle: 1.5,
                length: 8.0,
                brightness: 0.25,
            },
            2.0,
        );
        let a = textured();
        let b = textured().map(|v| 1.0 - v);
        let cleans = BTreeMap::from([
            (Design::ATc, clean(1, Design::ATc, a.clone())),
            (Design::DE, clean(1, Design::DE, b)),
        ]);
        let out = apply_paired(&cleans, &s).unwrap();
        assert_eq!(out[&Design::ATc], apply(&a, &s));
        assert_eq!(stochastic_field(&s, 64, 64), stochastic_field(&s.clone(), 64, 64));
    }

    #[test]
    fn identical_cleans_give_identical_outputs() {
        let s = sample_spec(&key(3), IntensityLevel::new(2).unwrap(), &CorruptionConfig::default());
        let cleans = BTreeMap::from([
            (Design::ATc, clean(1, Design::ATc, textured())),
            (Design::ATn, clean(1, Design::ATn, textured())),
        ]);
        let out = apply_paired(&cleans, &s).unwrap();
        assert_eq!(out[&Design::ATc], out[&Design::ATn]);
    }

    #[test]
    fn mismatched_provenance_is_rejected() {
        let s = sample_spec(&key(3), IntensityLevel::new(2).unwrap(), &CorruptionConfig::default());
        let cleans = BTreeMap::from([
            (Design::ATc, clean(1, Design::ATc, textured())),
            (Design::DE, clean(2, Design::DE, textured())),
        ]);
        assert!(matches!(
            apply_paired(&cleans, &s),
            Err(CorruptionError::MismatchedProvenance(_))
        ));
    }

    #[test]
    fn changes_stay_inside_the_reach_mask() {
        // perturb a small block and check every kind's influence is contained
        let cfg = CorruptionConfig::default();
        let a = textured();
        let mut b = a.clone();
        let mut mask = Mask::new(64, 64);
        for y in 20..30 {
            for x in 24..34 {
                b.put(x, y, [0.9, 0.1, 0.5]);
                mask.set(x, y, true);
            }
        }
        for level in IntensityLevel::all() {
            for r in 0..60 {
                let s = sample_spec(&key(r), level, &cfg);
                let reach = reach_mask(&s, &mask);
                let (oa, ob) = (apply(&a, &s), apply(&b, &s));
                for y in 0..64 {
                    for x in 0..64 {
                        if !reach.get(x, y) {
                            assert_eq!(oa.pixel(x, y), ob.pixel(x, y), "{:?} at ({x},{y})", s.kind());
                        }
                    }
                }
            }
        }
    }
}
