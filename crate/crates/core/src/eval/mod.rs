//! Accuracy reports, confusion matrices, the cross-design table and its
//! aggregation over runs.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

pub use stats::{inc_beta, ln_gamma, t_two_sided_p, two_sided_t_test, TTestResult};

use crate::catalog::{Design, DesignGroup, NUM_CLASSES};
use crate::corruption::NUM_LEVELS;
use crate::nn::{argmax, forward, softmax, Checkpoint, LabeledSet, NnError, Tensor};
use crate::raster::{RasterError, Rgb};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptySelection,
    #[error("no checkpoint for {0}")]
    MissingCheckpoint(String),
    #[error("no test selection for {0}")]
    MissingSelection(String),
    #[error("tables do not line up: {0}")]
    ShapeMismatch(String),
    #[error("need at least two samples per group, got {0}")]
    TooFewSamples(usize),
    #[error("pair {0} is not evaluated")]
    DisallowedPair(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Counts of (true class, predicted class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix {
            counts: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }
}

impl ConfusionMatrix {
    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// Row percentages; rows without samples stay all zero.
    pub fn percentages(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (r, row) in self.counts.iter().enumerate() {
            let total = self.row_total(r);
            if total == 0 {
                continue;
            }
            for (c, &n) in row.iter().enumerate() {
                out[r][c] = 100.0 * n as f64 / total as f64;
            }
        }
        out
    }

    pub fn empty_rows(&self) -> Vec<usize> {
        (0..NUM_CLASSES).filter(|&r| self.row_total(r) == 0).collect()
    }

    pub fn to_csv(&self) -> String {
        let pct = self.percentages();
        let mut out = String::from("true\\pred");
        for c in 0..NUM_CLASSES {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (r, row) in pct.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }

    /// Raw counts, one row per true class.
    pub fn to_counts_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_counts_csv(text: &str) -> Option<Self> {
        let mut m = ConfusionMatrix::default();
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != NUM_CLASSES {
            return None;
        }
        for (r, line) in rows.iter().enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != NUM_CLASSES {
                return None;
            }
            for (c, v) in cells.iter().enumerate() {
                m.counts[r][c] = v.trim().parse().ok()?;
            }
        }
        Some(m)
    }

    /// Heatmap of row percentages, `cell` pixels per entry, white to dark red.
    pub fn render(&self, cell: usize) -> Rgb {
        let pct = self.percentages();
        let side = NUM_CLASSES * cell;
        Rgb::from_fn(side, side, |x, y| {
            let v = (pct[y / cell][x / cell] / 100.0) as f32;
            let t = v.sqrt();
            [1.0 - 0.45 * t, 1.0 - t, 1.0 - t]
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), EvalError> {
        self.render(8).quantized().save_png(path)?;
        Ok(())
    }
}

/// The `k` largest off-diagonal percentages, largest first, ties broken by
/// (row, column).
pub fn top_confusions(pct: &[[f64; NUM_CLASSES]; NUM_CLASSES], k: usize) -> Vec<(usize, usize, f64)> {
    let mut cells: Vec<(usize, usize, f64)> = (0..NUM_CLASSES)
        .flat_map(|r| (0..NUM_CLASSES).map(move |c| (r, c)))
        .filter(|(r, c)| r != c)
        .map(|(r, c)| (r, c, pct[r][c]))
        .filter(|(_, _, v)| *v > 0.0)
        .collect();
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    cells.truncate(k);
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub total: usize,
    pub correct: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub class_correct: [usize; NUM_CLASSES],
    pub level_counts: [usize; NUM_LEVELS],
    pub level_correct: [usize; NUM_LEVELS],
}

impl AccuracyReport {
    pub fn overall(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// `None` for classes without samples.
    pub fn per_class(&self) -> Vec<Option<f64>> {
        ratio(&self.class_correct, &self.class_counts)
    }

    /// `None` for levels without samples.
    pub fn per_level(&self) -> Vec<Option<f64>> {
        ratio(&self.level_correct, &self.level_counts)
    }
}

fn ratio(num: &[usize], den: &[usize]) -> Vec<Option<f64>> {
    num.iter()
        .zip(den)
        .map(|(&n, &d)| (d > 0).then(|| n as f64 / d as f64))
        .collect()
}

/// Score predictions against ground truth. `levels` are 1-based.
pub fn score(truth: &[usize], predicted: &[usize], levels: &[u8]) -> Result<(AccuracyReport, ConfusionMatrix), EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    if truth.len() != predicted.len() || truth.len() != levels.len() {
        return Err(EvalError::ShapeMismatch("truth, predictions and levels differ in length".into()));
    }
    let mut report = AccuracyReport {
        total: truth.len(),
        correct: 0,
        class_counts: [0; NUM_CLASSES],
        class_correct: [0; NUM_CLASSES],
        level_counts: [0; NUM_LEVELS],
        level_correct: [0; NUM_LEVELS],
    };
    let mut confusion = ConfusionMatrix::default();
    for ((&t, &p), &l) in truth.iter().zip(predicted).zip(levels) {
        let hit = usize::from(t == p);
        let l = usize::from(l) - 1;
        report.correct += hit;
        report.class_counts[t] += 1;
        report.class_correct[t] += hit;
        report.level_counts[l] += 1;
        report.level_correct[l] += hit;
        confusion.counts[t][p] += 1;
    }
    Ok((report, confusion))
}

/// Arg-max class of every sample in the set, lowest class on ties.
pub fn predict_classes(checkpoint: &Checkpoint, set: &LabeledSet) -> Result<Vec<usize>, EvalError> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let parts: Vec<Result<Vec<usize>, NnError>> = idx
        .par_chunks(16)
        .map(|chunk| {
            let (x, _): (Tensor<f32>, _) = set.batch(chunk);
            let trace = forward(&checkpoint.spec, &checkpoint.params, &x)?;
            Ok(softmax(trace.logits()).iter().map(|p| argmax(p)).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(set.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Predict every sample and score against its label.
pub fn evaluate(checkpoint: &Checkpoint, set: &LabeledSet, levels: &[u8]) -> Result<(AccuracyReport, ConfusionMatrix), EvalError> {
    if set.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    let predicted = predict_classes(checkpoint, set)?;
    score(&set.labels, &predicted, levels)
}

/// Which intensity levels a model was trained and is tested on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LevelScope {
    Level(u8),
    All,
}

impl LevelScope {
    pub fn columns() -> Vec<LevelScope> {
        (1..=NUM_LEVELS as u8).map(LevelScope::Level).chain([LevelScope::All]).collect()
    }

    pub fn levels(self) -> Vec<u8> {
        match self {
            LevelScope::Level(l) => vec![l],
            LevelScope::All => (1..=NUM_LEVELS as u8).collect(),
        }
    }
}

impl fmt::Display for LevelScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LevelScope::Level(l) => write!(f, "{l}"),
            LevelScope::All => f.write_str("All"),
        }
    }
}

impl FromStr for LevelScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(LevelScope::All);
        }
        match s.parse::<u8>() {
            Ok(l) if (1..=NUM_LEVELS as u8).contains(&l) => Ok(LevelScope::Level(l)),
            _ => Err(format!("unknown level scope {s:?}")),
        }
    }
}

/// A train design and the design its test set uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EvaluationPair {
    pub train: DesignGroup,
    pub eval: Design,
}

impl EvaluationPair {
    pub fn new(train: DesignGroup, eval: Design) -> Self {
        EvaluationPair { train, eval }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.train.tag(), self.eval.tag())
    }

    pub fn is_own(&self) -> bool {
        self.train == DesignGroup::Base(self.eval)
    }

    /// Models trained on the new Austrian set are never tested on the
    /// current Austrian one.
    pub fn is_allowed(&self) -> bool {
        !(self.train == DesignGroup::Base(Design::ATn) && self.eval == Design::ATc)
    }
}

impl fmt::Display for EvaluationPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for EvaluationPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once('-').ok_or_else(|| format!("pair {s:?} lacks '-'"))?;
        let train = DesignGroup::from_str(a).map_err(|e| e.to_string())?;
        let eval = Design::from_str(b).map_err(|e| e.to_string())?;
        Ok(EvaluationPair { train, eval })
    }
}

/// The eight pairs of the main table, own-design rows first.
pub fn default_pairs() -> Vec<EvaluationPair> {
    use Design::*;
    let b = DesignGroup::Base;
    vec![
        EvaluationPair::new(b(ATc), ATc),
        EvaluationPair::new(b(ATn), ATn),
        EvaluationPair::new(b(DE), DE),
        EvaluationPair::new(b(ATc), ATn),
        EvaluationPair::new(b(ATc), DE),
        EvaluationPair::new(b(ATn), DE),
        EvaluationPair::new(b(DE), ATc),
        EvaluationPair::new(b(DE), ATn),
    ]
}

/// Rows for a composite training group, one per base design.
pub fn composite_pairs(group: DesignGroup) -> Vec<EvaluationPair> {
    Design::ALL.iter().map(|&d| EvaluationPair::new(group, d)).collect()
}

/// Accuracies in [0, 1] keyed by pair and level scope.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub pairs: Vec<EvaluationPair>,
    pub scopes: Vec<LevelScope>,
    pub cells: BTreeMap<(EvaluationPair, LevelScope), f64>,
}

impl AccuracyTable {
    pub fn get(&self, pair: &EvaluationPair, scope: LevelScope) -> Option<f64> {
        self.cells.get(&(*pair, scope)).copied()
    }
}

/// Evaluate each pair at each scope: the checkpoint trained on the pair's
/// train group at that scope, on the eval design's test set of the same
/// scope. Never crosses scopes.
pub fn cross_design_matrix(
    pairs: &[EvaluationPair],
    scopes: &[LevelScope],
    checkpoints: &BTreeMap<(DesignGroup, LevelScope), Checkpoint>,
    tests: &BTreeMap<(Design, LevelScope), (LabeledSet, Vec<u8>)>,
) -> Result<AccuracyTable, EvalError> {
    let mut cells = BTreeMap::new();
    for pair in pairs {
        if !pair.is_allowed() {
            return Err(EvalError::DisallowedPair(pair.label()));
        }
        for &scope in scopes {
            let ck = checkpoints
                .get(&(pair.train, scope))
                .ok_or_else(|| EvalError::MissingCheckpoint(format!("{} at level {scope}", pair.train)))?;
            let (set, levels) = tests
                .get(&(pair.eval, scope))
                .ok_or_else(|| EvalError::MissingSelection(format!("{} at level {scope}", pair.eval)))?;
            let allowed = scope.levels();
            if levels.iter().any(|l| !allowed.contains(l)) {
                return Err(EvalError::ShapeMismatch(format!(
                    "test set for {} at level {scope} holds other levels",
                    pair.eval
                )));
            }
            let (report, _) = evaluate(ck, set, levels)?;
            cells.insert((*pair, scope), report.overall());
        }
    }
    Ok(AccuracyTable {
        pairs: pairs.to_vec(),
        scopes: scopes.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Runs that contributed.
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    pub pairs: Vec<EvaluationPair>,
    pub scopes: Vec<LevelScope>,
    pub runs: usize,
    pub cells: BTreeMap<(EvaluationPair, LevelScope), CellStats>,
}

pub fn aggregate_values(values: &[f64]) -> Option<CellStats> {
    if values.is_empty() {
        return None;
    }
    Some(CellStats {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        runs: values.len(),
    })
}

/// Cell-wise mean, minimum and maximum over the runs that have the cell.
pub fn aggregate_runs(tables: &[AccuracyTable]) -> Result<AggregateTable, EvalError> {
    let first = tables.first().ok_or(EvalError::EmptySelection)?;
    if tables.iter().any(|t| t.pairs != first.pairs) {
        return Err(EvalError::ShapeMismatch("runs cover different pairs".into()));
    }
    let keys: BTreeSet<(EvaluationPair, LevelScope)> = tables.iter().flat_map(|t| t.cells.keys().copied()).collect();
    let cells = keys
        .into_iter()
        .map(|k| {
            let values: Vec<f64> = tables.iter().filter_map(|t| t.cells.get(&k).copied()).collect();
            (k, aggregate_values(&values).expect("at least one run"))
        })
        .collect();
    let scopes: BTreeSet<LevelScope> = tables.iter().flat_map(|t| t.scopes.iter().copied()).collect();
    Ok(AggregateTable {
        pairs: first.pairs.clone(),
        scopes: scopes.into_iter().collect(),
        runs: tables.len(),
        cells,
    })
}

impl AggregateTable {
    /// One CSV in the main-table layout with a chosen statistic, percent.
    pub fn to_csv(&self, stat: fn(&CellStats) -> f64) -> String {
        let mut out = String::from("pair");
        for s in &self.scopes {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
        for p in &self.pairs {
            out.push_str(&p.label());
            for s in &self.scopes {
                match self.cells.get(&(*p, *s)) {
                    Some(c) => out.push_str(&format!(",{:.2}", 100.0 * stat(c))),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_scoring_by_hand() {
        let (r, m) = score(&[0, 1, 1], &[0, 1, 0], &[2, 2, 2]).unwrap();
        assert!((r.overall() - 2.0 / 3.0).abs() < 1e-15);
        let pct = m.percentages();
        assert_eq!(pct[1][0], 50.0);
        assert_eq!(pct[1][1], 50.0);
        assert_eq!(pct[0][0], 100.0);
        let lv = r.per_level();
        assert_eq!(lv[1], Some(2.0 / 3.0));
        assert!(lv.iter().enumerate().all(|(i, v)| i == 1 || v.is_none()));
        assert_eq!(m.empty_rows().len(), 22);
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let truth: Vec<usize> = (0..48).map(|i| i % 24).collect();
        let levels = vec![1; 48];
        let (r, m) = score(&truth, &truth, &levels).unwrap();
        assert_eq!(r.overall(), 1.0);
        let pct = m.percentages();
        for (i, row) in pct.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 100.0 } else { 0.0 });
            }
        }
        assert!(top_confusions(&pct, 5).is_empty());
    }

    #[test]
    fn empty_selection_rejected() {
        assert!(matches!(score(&[], &[], &[]), Err(EvalError::EmptySelection)));
    }

    #[test]
    fn top_confusions_orders_and_truncates() {
        let mut pct = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        pct[3][4] = 5.0;
        pct[1][2] = 5.0;
        pct[0][9] = 7.5;
        pct[2][2] = 90.0;
        let top = top_confusions(&pct, 10);
        assert_eq!(top, vec![(0, 9, 7.5), (1, 2, 5.0), (3, 4, 5.0)]);
        assert_eq!(top_confusions(&pct, 1), vec![(0, 9, 7.5)]);
    }

    #[test]
    fn default_pairs_exclude_new_on_current() {
        let pairs = default_pairs();
        assert_eq!(pairs.len(), 8);
        let labels: Vec<String> = pairs.iter().map(|p| p.label()).collect();
        assert_eq!(
            labels,
            ["ATc-ATc", "ATn-ATn", "DE-DE", "ATc-ATn", "ATc-DE", "ATn-DE", "DE-ATc", "DE-ATn"]
        );
        assert!(pairs.iter().all(|p| p.is_allowed()));
        assert!(!"ATn-ATc".parse::<EvaluationPair>().unwrap().is_allowed());
        assert_eq!("CUR-DE".parse::<EvaluationPair>().unwrap().label(), "CUR-DE");
    }

    #[test]
    fn aggregation_by_hand() {
        let s = aggregate_values(&[0.9, 1.0, 0.8]).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-15);
        assert_eq!((s.min, s.max), (0.8, 1.0));
        let one = aggregate_values(&[0.7]).unwrap();
        assert_eq!((one.mean, one.min, one.max, one.runs), (0.7, 0.7, 0.7, 1));
    }

    #[test]
    fn runs_with_fewer_scopes_still_aggregate() {
        let pair = default_pairs()[0];
        let table = |cells: &[(LevelScope, f64)]| AccuracyTable {
            pairs: vec![pair],
            scopes: cells.iter().map(|c| c.0).collect(),
            cells: cells.iter().map(|&(s, v)| ((pair, s), v)).collect(),
        };
        let agg = aggregate_runs(&[
            table(&[(LevelScope::Level(1), 0.5), (LevelScope::All, 0.9)]),
            table(&[(LevelScope::All, 0.7)]),
        ])
        .unwrap();
        assert_eq!(agg.scopes, vec![LevelScope::Level(1), LevelScope::All]);
        assert_eq!(agg.cells[&(pair, LevelScope::Level(1))].runs, 1);
        let all = agg.cells[&(pair, LevelScope::All)];
        assert_eq!((all.runs, all.min, all.max), (2, 0.7, 0.9));
    }

    #[test]
    fn level_scope_round_trip() {
        for s in LevelScope::columns() {
            assert_eq!(s.to_string().parse::<LevelScope>().unwrap(), s);
        }
        assert!("6".parse::<LevelScope>().is_err());
    }
}
