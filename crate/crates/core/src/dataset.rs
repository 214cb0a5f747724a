//! Dataset manifests: which corrupted images exist, where they live, and
//! which split each belongs to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Catalog, Design, DesignGroup, SignShape, NUM_CLASSES};
use crate::corruption::{apply, sample_spec, CorruptionConfig, CorruptionError, IntensityLevel, NUM_LEVELS};
use crate::raster::{RasterError, Rgb};
use crate::rng::RngKey;
use crate::nn::{image_to_chw, LabeledSet};
use crate::synthesis::{build_clean_set, SourcePatch, SynthesisError, BASE_PATCHES, CLEAN_SIZE};

const MANIFEST_MAGIC: &str = "# signbench-manifest v1";
const COLUMNS: &str = "path\tdesign\tpatch\tflipped\tclass\tlevel\treplica\tspec_digest";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("split sets must hold one round and one triangular patch: {0}")]
    ShapeCoverageViolation(String),
    #[error("patch {0} assigned to more than one split")]
    OverlappingSplits(u32),
    #[error("unknown patch id {0}")]
    UnknownPatch(u32),
    #[error("manifests disagree on {0}")]
    RunMismatch(String),
    #[error("bad manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub master_seed: u64,
    pub runs: u32,
    pub replicas_per_level: u32,
    pub designs: Vec<Design>,
    /// Divides `replicas_per_level`; nothing else scales.
    pub desk_scale: Option<u32>,
    pub corruption: CorruptionConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            master_seed: 0,
            runs: 3,
            replicas_per_level: 50,
            designs: Design::ALL.to_vec(),
            desk_scale: None,
            corruption: CorruptionConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.runs == 0 {
            return Err(DatasetError::InvalidConfig("runs must be at least 1".into()));
        }
        if self.effective_replicas() == 0 {
            return Err(DatasetError::InvalidConfig("replicas per level must be at least 1".into()));
        }
        if self.desk_scale == Some(0) {
            return Err(DatasetError::InvalidConfig("desk_scale must be positive".into()));
        }
        if self.designs.is_empty() {
            return Err(DatasetError::InvalidConfig("no designs selected".into()));
        }
        self.corruption.validate()?;
        Ok(())
    }

    pub fn effective_replicas(&self) -> u32 {
        self.replicas_per_level / self.desk_scale.unwrap_or(1).max(1)
    }

    /// Hex digest over everything that influences image content.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("generation config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

/// Identity of one corrupted image, shared by all designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryKey {
    pub run: u32,
    pub patch_id: u32,
    pub flipped: bool,
    pub class_id: u8,
    pub level: u8,
    pub replica: u32,
}

impl EntryKey {
    pub fn rng_key(&self, master_seed: u64) -> RngKey {
        RngKey {
            master_seed,
            run: self.run,
            patch_id: self.patch_id,
            flipped: self.flipped,
            class_id: u32::from(self.class_id),
            replica_index: self.replica,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: EntryKey,
    pub design: Design,
    /// Relative to the data root.
    pub path: String,
    pub spec_digest: String,
}

pub fn entry_path(key: &EntryKey, design: Design) -> String {
    format!(
        "run{}/{}/level{}/p{:02}{}_c{:02}_r{:03}.png",
        key.run,
        design,
        key.level,
        key.patch_id,
        if key.flipped { 'f' } else { 'o' },
        key.class_id,
        key.replica
    )
}

pub fn manifest_path(data_root: &Path, run: u32, design: DesignGroup) -> PathBuf {
    data_root.join(format!("run{run}")).join(design.tag()).join("manifest.tsv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub run: u32,
    pub design: DesignGroup,
    pub config_digest: String,
    pub entries: Vec<ManifestEntry>,
}

/// Entry counts along each balanced axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Balance {
    pub total: usize,
    pub per_class: [usize; NUM_CLASSES],
    pub per_level: [usize; NUM_LEVELS],
    /// Keyed by patch id; a base patch and its mirror share an id.
    pub per_patch: BTreeMap<u32, usize>,
}

impl fmt::Display for Balance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let range = |v: &mut dyn Iterator<Item = usize>| {
            let v: Vec<usize> = v.collect();
            (v.iter().min().copied().unwrap_or(0), v.iter().max().copied().unwrap_or(0))
        };
        let c = range(&mut self.per_class.iter().copied());
        let l = range(&mut self.per_level.iter().copied());
        let p = range(&mut self.per_patch.values().copied());
        write!(
            f,
            "{} entries; per class {}..{}; per level {}..{}; per patch {}..{}",
            self.total, c.0, c.1, l.0, l.1, p.0, p.1
        )
    }
}

impl DatasetManifest {
    pub fn balance(&self) -> Balance {
        let mut b = Balance {
            total: self.entries.len(),
            per_class: [0; NUM_CLASSES],
            per_level: [0; NUM_LEVELS],
            per_patch: BTreeMap::new(),
        };
        for e in &self.entries {
            b.per_class[usize::from(e.key.class_id)] += 1;
            b.per_level[usize::from(e.key.level) - 1] += 1;
            *b.per_patch.entry(e.key.patch_id).or_default() += 1;
        }
        b
    }

    /// Counts per patch pair: the k-th round and the k-th triangular patch
    /// (by id) form pair k.
    pub fn pair_counts(&self, patches: &[SourcePatch]) -> Vec<usize> {
        let mut rank = BTreeMap::new();
        for shape in [SignShape::Round, SignShape::Triangular] {
            let ids: BTreeSet<u32> = patches.iter().filter(|p| p.shape == shape).map(|p| p.id).collect();
            for (k, id) in ids.into_iter().enumerate() {
                rank.insert(id, k);
            }
        }
        let mut out = vec![0; rank.values().max().map_or(0, |m| m + 1)];
        for e in &self.entries {
            if let Some(&k) = rank.get(&e.key.patch_id) {
                out[k] += 1;
            }
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "{MANIFEST_MAGIC}\n# run\t{}\n# design\t{}\n# config_digest\t{}\n{COLUMNS}\n",
            self.run, self.design, self.config_digest
        );
        for e in &self.entries {
            let k = &e.key;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.path,
                e.design,
                k.patch_id,
                u8::from(k.flipped),
                k.class_id,
                k.level,
                k.replica,
                e.spec_digest
            ));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, DatasetError> {
        let bad = |line: usize, reason: &str| DatasetError::BadManifest {
            line: line + 1,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let mut header = |name: &str| -> Result<String, DatasetError> {
            let (i, l) = lines.next().ok_or_else(|| bad(0, "truncated header"))?;
            if name.is_empty() {
                return if l == MANIFEST_MAGIC { Ok(String::new()) } else { Err(bad(i, "not a manifest")) };
            }
            l.strip_prefix(&format!("# {name}\t"))
                .map(str::to_string)
                .ok_or_else(|| bad(i, &format!("expected {name} header")))
        };
        header("")?;
        let run = header("run")?.parse().map_err(|_| bad(1, "bad run"))?;
        let design = DesignGroup::from_str(&header("design")?).map_err(|_| bad(2, "bad design"))?;
        let config_digest = header("config_digest")?;
        if lines.next().map(|(_, l)| l) != Some(COLUMNS) {
            return Err(bad(4, "missing column header"));
        }
        let mut entries = Vec::new();
        for (i, l) in lines {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 8 {
                return Err(bad(i, "expected 8 columns"));
            }
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad(i, &format!("bad number {s:?}")));
            let design = Design::from_str(f[1]).map_err(|_| bad(i, "bad design"))?;
            let level = num(f[5])?;
            if !(1..=NUM_LEVELS as u32).contains(&level) {
                return Err(bad(i, "level out of range"));
            }
            let class = num(f[4])?;
            if class as usize >= NUM_CLASSES {
                return Err(bad(i, "class out of range"));
            }
            entries.push(ManifestEntry {
                key: EntryKey {
                    run,
                    patch_id: num(f[2])?,
                    flipped: match f[3] {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad(i, "bad flipped flag")),
                    },
                    class_id: class as u8,
                    level: level as u8,
                    replica: num(f[6])?,
                },
                design,
                path: f[0].to_string(),
                spec_digest: f[7].to_string(),
            });
        }
        Ok(DatasetManifest {
            run,
            design,
            config_digest,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_tsv(&fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Enumerate every entry key of one run in key order.
pub fn entry_keys(run: u32, config: &GenerationConfig, patches: &[SourcePatch]) -> Vec<(EntryKey, SignShape)> {
    let mut bases: Vec<&SourcePatch> = patches.iter().collect();
    bases.sort_by_key(|p| (p.id, p.flipped));
    let mut keys = Vec::new();
    for p in bases {
        for class in crate::catalog::CLASSES.iter().filter(|c| c.shape() == p.shape) {
            for level in 1..=NUM_LEVELS as u8 {
                for replica in 0..config.effective_replicas() {
                    keys.push((
                        EntryKey {
                            run,
                            patch_id: p.id,
                            flipped: p.flipped,
                            class_id: class.id,
                            level,
                            replica,
                        },
                        p.shape,
                    ));
                }
            }
        }
    }
    keys
}

/// Render every corrupted image of one (run, design) and hand each to
/// `sink`. Images are rendered in parallel; the manifest is in key order.
pub fn build_dataset_with<F>(
    run: u32,
    design: Design,
    config: &GenerationConfig,
    catalog: &Catalog,
    patches: &[SourcePatch],
    sink: F,
) -> Result<DatasetManifest, DatasetError>
where
    F: Fn(&ManifestEntry, &Rgb) -> Result<(), DatasetError> + Sync,
{
    config.validate()?;
    let clean = build_clean_set(catalog, patches, design)?;
    let index: BTreeMap<(u32, bool, u8), &Rgb> = clean
        .iter()
        .map(|c| ((c.patch_id, c.flipped, c.class_id), &c.raster))
        .collect();
    let keys = entry_keys(run, config, patches);
    let entries = keys
        .par_iter()
        .map(|(key, _)| {
            let spec = sample_spec(
                &key.rng_key(config.master_seed),
                IntensityLevel::new(key.level)?,
                &config.corruption,
            );
            let img = apply(index[&(key.patch_id, key.flipped, key.class_id)], &spec).quantized();
            let entry = ManifestEntry {
                key: *key,
                design,
                path: entry_path(key, design),
                spec_digest: spec.digest(),
            };
            sink(&entry, &img)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(DatasetManifest {
        run,
        design: DesignGroup::Base(design),
        config_digest: config.digest(),
        entries,
    })
}

/// Render one (run, design) to PNG files under `data_root` and save its
/// manifest next to them.
pub fn build_dataset(
    run: u32,
    design: Design,
    config: &GenerationConfig,
    catalog: &Catalog,
    patches: &[SourcePatch],
    data_root: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let manifest = build_dataset_with(run, design, config, catalog, patches, |entry, img| {
        img.save_png(&data_root.join(&entry.path))?;
        Ok(())
    })?;
    manifest.save(&manifest_path(data_root, run, DesignGroup::Base(design)))?;
    Ok(manifest)
}

/// Render one (run, design) straight into labeled in-memory sets, one per
/// split, keeping only the given levels. Returns each set with the level of
/// every sample.
pub fn render_splits(
    run: u32,
    design: Design,
    config: &GenerationConfig,
    catalog: &Catalog,
    patches: &[SourcePatch],
    splits: &SplitAssignment,
    levels: &[u8],
) -> Result<BTreeMap<Split, (LabeledSet, Vec<u8>)>, DatasetError> {
    let images = Mutex::new(BTreeMap::new());
    let manifest = build_dataset_with(run, design, config, catalog, patches, |entry, img| {
        if levels.contains(&entry.key.level) {
            images.lock().expect("no poisoned lock").insert(entry.key, image_to_chw(img));
        }
        Ok(())
    })?;
    let images = images.into_inner().expect("no poisoned lock");
    let mut out = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let mut set = LabeledSet::new([3, CLEAN_SIZE, CLEAN_SIZE]);
        let mut lv = Vec::new();
        for e in select(&manifest, splits, split, Some(levels), None) {
            set.push(&images[&e.key], usize::from(e.key.class_id));
            lv.push(e.key.level);
        }
        out.insert(split, (set, lv));
    }
    Ok(out)
}

pub fn load_image(data_root: &Path, entry: &ManifestEntry) -> Result<Rgb, DatasetError> {
    Ok(Rgb::load_png(&data_root.join(&entry.path))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Which split each patch id belongs to; mirrored patches share their id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub by_patch: BTreeMap<u32, Split>,
}

impl SplitAssignment {
    pub fn split_of(&self, patch_id: u32) -> Option<Split> {
        self.by_patch.get(&patch_id).copied()
    }

    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.by_patch
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Assign the given ids to validation and test and every other base patch
/// to training. Each of the two held-out sets needs one patch per shape.
pub fn assign_splits(patches: &[SourcePatch], val_ids: &[u32], test_ids: &[u32]) -> Result<SplitAssignment, DatasetError> {
    let shapes: BTreeMap<u32, SignShape> = patches.iter().map(|p| (p.id, p.shape)).collect();
    let mut by_patch = BTreeMap::new();
    for (ids, split) in [(val_ids, Split::Val), (test_ids, Split::Test)] {
        let mut seen = BTreeSet::new();
        for &id in ids {
            let shape = *shapes.get(&id).ok_or(DatasetError::UnknownPatch(id))?;
            if by_patch.insert(id, split).is_some() {
                return Err(DatasetError::OverlappingSplits(id));
            }
            seen.insert(shape);
        }
        if ids.len() != 2 || seen.len() != 2 {
            return Err(DatasetError::ShapeCoverageViolation(format!("{split:?} ids {ids:?}")));
        }
    }
    for &id in shapes.keys() {
        by_patch.entry(id).or_insert(Split::Train);
    }
    if by_patch.len() != BASE_PATCHES {
        return Err(DatasetError::InvalidConfig(format!(
            "expected {BASE_PATCHES} patch ids, found {}",
            by_patch.len()
        )));
    }
    Ok(SplitAssignment { by_patch })
}

/// Union of several manifests of one run under a composite tag.
pub fn combine_designs(manifests: &[DatasetManifest], group: DesignGroup) -> Result<DatasetManifest, DatasetError> {
    let first = manifests
        .first()
        .ok_or_else(|| DatasetError::InvalidConfig("nothing to combine".into()))?;
    for m in manifests {
        if m.run != first.run {
            return Err(DatasetError::RunMismatch(format!("run {} vs {}", m.run, first.run)));
        }
        if m.config_digest != first.config_digest {
            return Err(DatasetError::RunMismatch(format!(
                "config {} vs {}",
                m.config_digest, first.config_digest
            )));
        }
        if !m.design.members().is_subset(&group.members()) {
            return Err(DatasetError::InvalidConfig(format!("{} is not part of {group}", m.design)));
        }
    }
    let mut entries: Vec<ManifestEntry> = manifests.iter().flat_map(|m| m.entries.iter().cloned()).collect();
    entries.sort_by(|a, b| (a.key, a.design).cmp(&(b.key, b.design)));
    Ok(DatasetManifest {
        run: first.run,
        design: group,
        config_digest: first.config_digest.clone(),
        entries,
    })
}

/// Entries of one split, optionally restricted to some levels and designs,
/// in key order.
pub fn select<'a>(
    manifest: &'a DatasetManifest,
    splits: &SplitAssignment,
    split: Split,
    levels: Option<&[u8]>,
    designs: Option<&[Design]>,
) -> Vec<&'a ManifestEntry> {
    let mut out: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| splits.split_of(e.key.patch_id) == Some(split))
        .filter(|e| levels.map_or(true, |l| l.contains(&e.key.level)))
        .filter(|e| designs.map_or(true, |d| d.contains(&e.design)))
        .collect();
    out.sort_by(|a, b| (a.key, a.design).cmp(&(b.key, b.design)));
    out
}
