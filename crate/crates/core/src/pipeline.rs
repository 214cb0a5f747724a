//! The experiment driver behind the command line: generate, train,
//! evaluate, explain and report, all rooted in one configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::catalog::{load_catalog, Catalog, CatalogError, Design, DesignGroup, CLASSES, NUM_CLASSES};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dataset::{
    assign_splits, build_dataset, combine_designs, load_image, manifest_path, select, DatasetError,
    DatasetManifest, Split, SplitAssignment,
};
use crate::eval::{
    aggregate_runs, cross_design_matrix, evaluate, top_confusions, two_sided_t_test, AccuracyTable, AggregateTable,
    ConfusionMatrix, EvalError, EvaluationPair, LevelScope,
};
use crate::nn::{image_to_chw, train, Checkpoint, LabeledSet, NetworkSpec, NnError, TrainConfig};
use crate::placeholder::placeholder_catalog;
use crate::raster::{RasterError, Rgb};
use crate::rng::keyed_rng;
use crate::synthesis::{load_patch_set, procedural_base_patches, with_flipped, PatchIoError, SourcePatch, SynthesisError};
use crate::xai::{average_class_explanations, save_heatmap_pair};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} (pass --force to overwrite)")]
    Guard(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing manifest {0}; run generate first")]
    MissingManifest(PathBuf),
    #[error("missing checkpoint {0}; run train first")]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Patches(#[from] PatchIoError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    /// 2 for usage and overwrite guards, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Guard(_) | PipelineError::Usage(_) | PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn scope_tag(scope: LevelScope) -> String {
    match scope {
        LevelScope::Level(l) => format!("level{l}"),
        LevelScope::All => "all".into(),
    }
}

/// Which checkpoints `train` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    PerLevel,
    All,
}

impl TrainScope {
    pub fn level_scopes(self) -> Vec<LevelScope> {
        match self {
            TrainScope::PerLevel => LevelScope::columns().into_iter().filter(|s| *s != LevelScope::All).collect(),
            TrainScope::All => vec![LevelScope::All],
        }
    }
}

/// A configuration bound to its output directory and input assets.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub dir: PathBuf,
    catalog: Catalog,
    patches: Vec<SourcePatch>,
    splits: SplitAssignment,
    spec: NetworkSpec,
}

impl Pipeline {
    /// Create the output directory, record the configuration there and
    /// load pictograms and patches.
    pub fn open(config: ExperimentConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let dir = config.output_dir();
        write_file(&dir.join("config.toml"), config.to_toml())?;
        let catalog = match &config.assets.pictogram_root {
            Some(root) => load_catalog(root)?,
            None => placeholder_catalog(config.master_seed),
        };
        let patches = match &config.assets.patch_file {
            Some(path) => load_patch_set(path)?,
            None => with_flipped(procedural_base_patches(config.master_seed))?,
        };
        let splits = assign_splits(&patches, &config.splits.val, &config.splits.test)?;
        let spec = config.network_spec()?;
        Ok(Pipeline {
            config,
            dir,
            catalog,
            patches,
            splits,
            spec,
        })
    }

    pub fn data_root(&self) -> PathBuf {
        self.dir.join("data")
    }

    pub fn checkpoint_path(&self, run: u32, group: DesignGroup, scope: LevelScope) -> PathBuf {
        self.dir
            .join("models")
            .join(format!("run{run}"))
            .join(group.tag())
            .join(format!("{}.ckpt", scope_tag(scope)))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir.join("reports")
    }

    pub fn patches(&self) -> &[SourcePatch] {
        &self.patches
    }

    pub fn splits(&self) -> &SplitAssignment {
        &self.splits
    }

    pub fn runs(&self, run: Option<u32>) -> Result<Vec<u32>, PipelineError> {
        match run {
            Some(r) if r >= self.config.generation.runs => Err(PipelineError::Usage(format!(
                "run {r} out of range; the config has {} runs",
                self.config.generation.runs
            ))),
            Some(r) => Ok(vec![r]),
            None => Ok((0..self.config.generation.runs).collect()),
        }
    }

    fn designs(&self, design: Option<DesignGroup>) -> Result<Vec<Design>, PipelineError> {
        match design {
            None => Ok(self.config.generation.designs.clone()),
            Some(DesignGroup::Base(d)) if self.config.generation.designs.contains(&d) => Ok(vec![d]),
            Some(g) => Err(PipelineError::Usage(format!("{g} is not a generated base design"))),
        }
    }

    /// Render and store the datasets of the selected runs and designs.
    pub fn generate(&self, run: Option<u32>, design: Option<DesignGroup>, force: bool) -> Result<Vec<DatasetManifest>, PipelineError> {
        let runs = self.runs(run)?;
        let designs = self.designs(design)?;
        if !force {
            for &r in &runs {
                for &d in &designs {
                    let path = manifest_path(&self.data_root(), r, d.into());
                    if path.exists() {
                        return Err(PipelineError::Guard(format!("{} already exists", path.display())));
                    }
                }
            }
        }
        let gen = self.config.generation();
        let mut out = Vec::new();
        for &r in &runs {
            for &d in &designs {
                let m = build_dataset(r, d, &gen, &self.catalog, &self.patches, &self.data_root())?;
                log::info!("run {r} {d}: {}", m.balance());
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn load_manifest(&self, run: u32, group: DesignGroup) -> Result<DatasetManifest, PipelineError> {
        let mut parts = Vec::new();
        for d in group.members() {
            let path = manifest_path(&self.data_root(), run, d.into());
            if !path.exists() {
                return Err(PipelineError::MissingManifest(path));
            }
            parts.push(DatasetManifest::load(&path)?);
        }
        if group.is_composite() {
            Ok(combine_designs(&parts, group)?)
        } else {
            Ok(parts.pop().expect("one member"))
        }
    }

    /// Decode the images of a selection into a training set, with levels.
    pub fn load_set(&self, manifest: &DatasetManifest, split: Split, scope: LevelScope) -> Result<(LabeledSet, Vec<u8>), PipelineError> {
        let levels = scope.levels();
        let entries = select(manifest, &self.splits, split, Some(&levels), None);
        let mut set = LabeledSet::new(self.spec.input);
        let mut lv = Vec::with_capacity(entries.len());
        for e in entries {
            let img = load_image(&self.data_root(), e)?;
            set.push(&image_to_chw(&img), usize::from(e.key.class_id));
            lv.push(e.key.level);
        }
        Ok((set, lv))
    }

    /// Seed for one model, derived from the master seed and the model's role.
    pub fn train_seed(&self, run: u32, group: DesignGroup, scope: LevelScope) -> u64 {
        let g = match group {
            DesignGroup::Base(d) => d as u64,
            DesignGroup::Cur => 10,
            DesignGroup::All => 11,
        };
        let s = match scope {
            LevelScope::Level(l) => u64::from(l),
            LevelScope::All => 0,
        };
        keyed_rng("train-seed", &[self.config.master_seed, self.config.train.seed, u64::from(run), g, s]).gen()
    }

    /// Train one checkpoint per (run, group, level scope) and return their
    /// digests.
    pub fn train(
        &self,
        run: Option<u32>,
        group: Option<DesignGroup>,
        scope: Option<TrainScope>,
        force: bool,
    ) -> Result<Vec<(PathBuf, String)>, PipelineError> {
        let runs = self.runs(run)?;
        let all_groups = self.config.train_groups()?;
        let groups = match group {
            None => all_groups,
            Some(g) if all_groups.contains(&g) => vec![g],
            Some(g) => return Err(PipelineError::Usage(format!("{g} is not configured for training"))),
        };
        let scopes: Vec<LevelScope> = match scope {
            Some(s) => s.level_scopes(),
            None => LevelScope::columns(),
        };
        if !force {
            for &r in &runs {
                for &g in &groups {
                    for &s in &scopes {
                        let path = self.checkpoint_path(r, g, s);
                        if path.exists() {
                            return Err(PipelineError::Guard(format!("{} already exists", path.display())));
                        }
                    }
                }
            }
        }
        let mut out = Vec::new();
        for &r in &runs {
            for &g in &groups {
                let manifest = self.load_manifest(r, g)?;
                for &s in &scopes {
                    let (train_set, _) = self.load_set(&manifest, Split::Train, s)?;
                    let (val_set, _) = self.load_set(&manifest, Split::Val, s)?;
                    let cfg = TrainConfig {
                        seed: self.train_seed(r, g, s),
                        ..self.config.train.clone()
                    };
                    log::info!("training run {r} {g} level {s} on {} images", train_set.len());
                    let outcome = train(&self.spec, &cfg, &train_set, &val_set)?;
                    let path = self.checkpoint_path(r, g, s);
                    outcome.checkpoint.save(&path)?;
                    let mut hist = String::from("epoch,lr,train_loss,train_accuracy,val_loss,val_accuracy\n");
                    for h in &outcome.history {
                        writeln!(
                            hist,
                            "{},{:e},{:.6},{:.6},{:.6},{:.6}",
                            h.epoch, h.lr, h.train_loss, h.train_accuracy, h.val_loss, h.val_accuracy
                        )
                        .expect("string write");
                    }
                    write_file(&path.with_extension("history.csv"), hist)?;
                    out.push((path, outcome.checkpoint.digest()));
                }
            }
        }
        Ok(out)
    }

    fn load_checkpoint(&self, run: u32, group: DesignGroup, scope: LevelScope) -> Result<Checkpoint, PipelineError> {
        let path = self.checkpoint_path(run, group, scope);
        if !path.exists() {
            return Err(PipelineError::MissingCheckpoint(path));
        }
        Ok(Checkpoint::load(&path)?)
    }

    /// Scopes for which every training group has a checkpoint in this run.
    fn trained_scopes(&self, run: u32) -> Result<Vec<LevelScope>, PipelineError> {
        let groups = self.config.train_groups()?;
        Ok(LevelScope::columns()
            .into_iter()
            .filter(|&s| groups.iter().all(|&g| self.checkpoint_path(run, g, s).exists()))
            .collect())
    }

    fn all_pairs(&self) -> Result<Vec<EvaluationPair>, PipelineError> {
        Ok(self.config.evaluation_pairs()?)
    }

    /// Evaluate every configured pair at every trained scope, per run.
    pub fn evaluate(&self, run: Option<u32>) -> Result<Vec<AccuracyTable>, PipelineError> {
        let pairs = self.all_pairs()?;
        let mut tables = Vec::new();
        for r in self.runs(run)? {
            let scopes = self.trained_scopes(r)?;
            if scopes.is_empty() {
                return Err(PipelineError::MissingCheckpoint(self.checkpoint_path(
                    r,
                    self.config.train_groups()?[0],
                    LevelScope::All,
                )));
            }
            let mut checkpoints = BTreeMap::new();
            for g in self.config.train_groups()? {
                for &s in &scopes {
                    checkpoints.insert((g, s), self.load_checkpoint(r, g, s)?);
                }
            }
            let mut tests = BTreeMap::new();
            for &d in &self.config.generation.designs {
                let manifest = self.load_manifest(r, d.into())?;
                for &s in &scopes {
                    tests.insert((d, s), self.load_set(&manifest, Split::Test, s)?);
                }
            }
            let table = cross_design_matrix(&pairs, &scopes, &checkpoints, &tests)?;
            let run_dir = self.reports_dir().join(format!("run{r}"));
            let mut csv = String::from("pair,scope,accuracy\n");
            for ((pair, scope), acc) in &table.cells {
                writeln!(csv, "{pair},{scope},{acc:.10}").expect("string write");
            }
            write_file(&run_dir.join("accuracy.csv"), csv)?;
            for pair in &pairs {
                for &s in &scopes {
                    let (set, levels) = &tests[&(pair.eval, s)];
                    let (_, confusion) = evaluate(&checkpoints[&(pair.train, s)], set, levels)?;
                    let stem = run_dir.join("confusion").join(format!("{pair}_{}", scope_tag(s)));
                    write_file(&stem.with_extension("csv"), confusion.to_counts_csv())?;
                    confusion.save_png(&stem.with_extension("png"))?;
                }
            }
            tables.push(table);
        }
        Ok(tables)
    }

    fn read_run_table(&self, run: u32) -> Result<AccuracyTable, PipelineError> {
        let path = self.reports_dir().join(format!("run{run}")).join("accuracy.csv");
        if !path.exists() {
            return Err(PipelineError::Usage(format!("{} is missing; run evaluate first", path.display())));
        }
        let text = read_file(&path)?;
        let bad = |l: &str| PipelineError::Usage(format!("malformed line {l:?} in {}", path.display()));
        let mut cells = BTreeMap::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(line));
            }
            let pair: EvaluationPair = f[0].parse().map_err(|_| bad(line))?;
            let scope: LevelScope = f[1].parse().map_err(|_| bad(line))?;
            let acc: f64 = f[2].parse().map_err(|_| bad(line))?;
            cells.insert((pair, scope), acc);
        }
        let pairs = self.all_pairs()?;
        let mut scopes: Vec<LevelScope> = cells.keys().map(|(_, s)| *s).collect();
        scopes.sort();
        scopes.dedup();
        Ok(AccuracyTable { pairs, scopes, cells })
    }

    fn read_confusion(&self, run: u32, pair: &EvaluationPair, scope: LevelScope) -> Result<ConfusionMatrix, PipelineError> {
        let path = self
            .reports_dir()
            .join(format!("run{run}"))
            .join("confusion")
            .join(format!("{pair}_{}.csv", scope_tag(scope)));
        ConfusionMatrix::from_counts_csv(&read_file(&path)?)
            .ok_or_else(|| PipelineError::Usage(format!("malformed confusion file {}", path.display())))
    }

    /// Average relevance maps per class for every pair, on the all-levels
    /// models of one run.
    pub fn explain(&self, run: Option<u32>) -> Result<Vec<PathBuf>, PipelineError> {
        let r = run.unwrap_or(0);
        self.runs(Some(r))?;
        let cap = self.config.explain.images_per_class;
        let mut written = Vec::new();
        for pair in self.all_pairs()? {
            let ck = self.load_checkpoint(r, pair.train, LevelScope::All)?;
            let manifest = self.load_manifest(r, pair.eval.into())?;
            let (full, _) = self.load_set(&manifest, Split::Test, LevelScope::All)?;
            // the first `cap` test images of each class, in manifest order
            let mut taken = [0usize; NUM_CLASSES];
            let mut set = LabeledSet::new(full.sample_shape);
            for i in 0..full.len() {
                let c = full.labels[i];
                if taken[c] < cap {
                    taken[c] += 1;
                    set.push(full.sample(i), c);
                }
            }
            let maps = average_class_explanations(&ck, &set, &self.config.explain.lrp)?;
            let dir = self.dir.join("explanations").join(pair.label());
            for (class, map) in &maps {
                let background = mean_image(&set, *class);
                save_heatmap_pair(&dir, map, &background)?;
                written.push(dir.join(format!("{class:02}.png")));
            }
        }
        Ok(written)
    }

    /// Aggregate all evaluated runs into tables, t-tests and confusion lists.
    pub fn report(&self) -> Result<Report, PipelineError> {
        let runs = self.runs(None)?;
        let tables = runs
            .iter()
            .map(|&r| self.read_run_table(r))
            .collect::<Result<Vec<_>, _>>()?;
        let aggregate = aggregate_runs(&tables)?;
        let dir = self.reports_dir();
        write_file(&dir.join("accuracy_mean.csv"), aggregate.to_csv(|c| c.mean))?;
        write_file(&dir.join("accuracy_min.csv"), aggregate.to_csv(|c| c.min))?;
        write_file(&dir.join("accuracy_max.csv"), aggregate.to_csv(|c| c.max))?;

        let own: Vec<EvaluationPair> = aggregate.pairs.iter().copied().filter(|p| p.is_own()).collect();
        let mut ttests = Vec::new();
        let mut ttest_csv = String::from("pair_a,pair_b,t,df,p\n");
        for i in 0..own.len() {
            for j in i + 1..own.len() {
                let sample = |p: &EvaluationPair| -> Vec<f64> {
                    tables.iter().filter_map(|t| t.get(p, LevelScope::All)).map(|v| 100.0 * v).collect()
                };
                let res = two_sided_t_test(&sample(&own[i]), &sample(&own[j])).ok();
                match res {
                    Some(t) => writeln!(ttest_csv, "{},{},{:.6},{:.6},{:.6}", own[i], own[j], t.t, t.df, t.p),
                    None => writeln!(ttest_csv, "{},{},,,", own[i], own[j]),
                }
                .expect("string write");
                ttests.push((own[i], own[j], res));
            }
        }
        write_file(&dir.join("ttest.csv"), &ttest_csv)?;

        let mut confusions = BTreeMap::new();
        let mut conf_csv = String::from("pair,rank,true_class,predicted_class,percent\n");
        for pair in &aggregate.pairs {
            let mut sum = ConfusionMatrix::default();
            for &r in &runs {
                let m = self.read_confusion(r, pair, LevelScope::All)?;
                for (a, b) in sum.counts.iter_mut().zip(&m.counts) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            let top = top_confusions(&sum.percentages(), self.config.top_k);
            for (rank, (t, p, v)) in top.iter().enumerate() {
                writeln!(conf_csv, "{pair},{},{},{},{v:.4}", rank + 1, CLASSES[*t].name, CLASSES[*p].name)
                    .expect("string write");
            }
            confusions.insert(*pair, top);
        }
        write_file(&dir.join("top_confusions.csv"), &conf_csv)?;

        let report = Report {
            aggregate,
            ttests,
            confusions,
        };
        write_file(&dir.join("summary.md"), report.to_markdown())?;
        Ok(report)
    }
}

fn mean_image(set: &LabeledSet, class: usize) -> Rgb {
    let [_, h, w] = set.sample_shape;
    let plane = h * w;
    let mut acc = vec![0.0f64; 3 * plane];
    let mut n = 0usize;
    for i in (0..set.len()).filter(|&i| set.labels[i] == class) {
        acc.iter_mut().zip(set.sample(i)).for_each(|(a, v)| *a += f64::from(*v));
        n += 1;
    }
    let n = n.max(1) as f64;
    Rgb::from_fn(w, h, |x, y| {
        let i = y * w + x;
        [0, 1, 2].map(|c| (acc[c * plane + i] / n) as f32)
    })
}

/// Everything `report` computes.
#[derive(Debug, Clone)]
pub struct Report {
    pub aggregate: AggregateTable,
    pub ttests: Vec<(EvaluationPair, EvaluationPair, Option<crate::eval::TTestResult>)>,
    pub confusions: BTreeMap<EvaluationPair, Vec<(usize, usize, f64)>>,
}

impl Report {
    pub fn to_markdown(&self) -> String {
        let a = &self.aggregate;
        let mut out = format!("# Cross-design accuracy\n\nMean over {} run(s), percent; [min, max] below.\n\n", a.runs);
        out.push_str("| pair |");
        for s in &a.scopes {
            write!(out, " {s} |").expect("string write");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(a.scopes.len()));
        out.push('\n');
        for p in &a.pairs {
            write!(out, "| {p} |").expect("string write");
            for s in &a.scopes {
                match a.cells.get(&(*p, *s)) {
                    Some(c) if c.runs < a.runs => write!(
                        out,
                        " {:.2} [{:.2}, {:.2}] ({} run) |",
                        100.0 * c.mean,
                        100.0 * c.min,
                        100.0 * c.max,
                        c.runs
                    ),
                    Some(c) => write!(
                        out,
                        " {:.2} [{:.2}, {:.2}] |",
                        100.0 * c.mean,
                        100.0 * c.min,
                        100.0 * c.max
                    ),
                    None => write!(out, " |"),
                }
                .expect("string write");
            }
            out.push('\n');
        }
        out.push_str("\n# Own-design t-tests (all levels)\n\n");
        for (x, y, t) in &self.ttests {
            match t {
                Some(t) => writeln!(out, "- {x} vs {y}: t = {:.4}, df = {:.2}, p = {:.4}", t.t, t.df, t.p),
                None => writeln!(out, "- {x} vs {y}: needs at least two runs"),
            }
            .expect("string write");
        }
        out.push_str("\n# Most frequent confusions (all levels)\n\n");
        for (pair, top) in &self.confusions {
            writeln!(out, "## {pair}\n").expect("string write");
            for (t, p, v) in top {
                writeln!(out, "- {} -> {}: {v:.2}%", CLASSES[*t].name, CLASSES[*p].name).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}
