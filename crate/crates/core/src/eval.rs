//! Ordinal evaluation: a 6x6 misclassification cost matrix, confusion
//! counts, the cost-weighted error E = (100/n) * sum C_ij * N_ij, accuracy,
//! and stratified k-fold splitting.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::level::{Level, NUM_LEVELS};
use crate::pipeline::{predict_pipeline, train_model, FamilyToggles, PipelineConfig};
use crate::seed::derive_seed;

/// Default misclassification costs. Rows are the true level, columns the
/// predicted level; costs grow with ordinal distance and penalize
/// overestimating a low level far less than underestimating a high one.
const DEFAULT_COST: [[f64; NUM_LEVELS]; NUM_LEVELS] = [
    [0.0, 1.0, 2.0, 3.0, 4.0, 6.0],
    [1.0, 0.0, 1.0, 4.0, 5.0, 8.0],
    [3.0, 2.0, 0.0, 3.0, 5.0, 8.0],
    [10.0, 7.0, 5.0, 0.0, 2.0, 7.0],
    [20.0, 16.0, 12.0, 4.0, 0.0, 8.0],
    [44.0, 38.0, 32.0, 19.0, 13.0, 0.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    values: [[f64; NUM_LEVELS]; NUM_LEVELS],
}

impl Default for CostMatrix {
    fn default() -> CostMatrix {
        CostMatrix {
            values: DEFAULT_COST,
        }
    }
}

impl CostMatrix {
    pub fn new(values: [[f64; NUM_LEVELS]; NUM_LEVELS]) -> Result<CostMatrix> {
        for (i, row) in values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data(format!(
                        "cost at row {i}, column {j} must be a non-negative number (got {v})"
                    )));
                }
                if i == j && v != 0.0 {
                    return Err(Error::Data(format!(
                        "diagonal cost at ({i}, {i}) must be zero (got {v})"
                    )));
                }
            }
        }
        Ok(CostMatrix { values })
    }

    /// Six lines of six whitespace-separated numbers, true-level rows.
    pub fn load(path: &Path) -> Result<CostMatrix> {
        let resource = |reason: String| Error::Resource {
            kind: "cost matrix".into(),
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path)?;
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.len() != NUM_LEVELS {
            return Err(resource(format!(
                "expected {NUM_LEVELS} rows, found {}",
                rows.len()
            )));
        }
        let mut values = [[0.0; NUM_LEVELS]; NUM_LEVELS];
        for (i, line) in rows.iter().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != NUM_LEVELS {
                return Err(resource(format!(
                    "row {} has {} entries, expected {NUM_LEVELS}",
                    i + 1,
                    fields.len()
                )));
            }
            for (j, field) in fields.iter().enumerate() {
                values[i][j] = field.parse::<f64>().map_err(|_| {
                    resource(format!("row {}, entry {}: not a number: {field}", i + 1, j + 1))
                })?;
            }
        }
        CostMatrix::new(values).map_err(|e| resource(e.to_string()))
    }

    pub fn get(&self, true_level: Level, predicted: Level) -> f64 {
        self.values[true_level.index()][predicted.index()]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_LEVELS]; NUM_LEVELS],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    pub fn record(&mut self, true_level: Level, predicted: Level) {
        self.counts[true_level.index()][predicted.index()] += 1;
    }

    pub fn count(&self, true_level: Level, predicted: Level) -> u64 {
        self.counts[true_level.index()][predicted.index()]
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..NUM_LEVELS {
            for j in 0..NUM_LEVELS {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_LEVELS).map(|i| self.counts[i][i]).sum()
    }

    pub fn rows(&self) -> &[[u64; NUM_LEVELS]; NUM_LEVELS] {
        &self.counts
    }
}

/// E = (100 / n) * sum over (i, j) of C_ij * N_ij.
pub fn cost_error(confusion: &ConfusionMatrix, cost: &CostMatrix) -> Result<f64> {
    let n = confusion.total();
    if n == 0 {
        return Err(Error::Data("confusion matrix holds no observations".into()));
    }
    let mut mass = 0.0;
    for i in 0..NUM_LEVELS {
        for j in 0..NUM_LEVELS {
            mass += cost.values[i][j] * confusion.counts[i][j] as f64;
        }
    }
    Ok(100.0 * mass / n as f64)
}

pub fn accuracy(confusion: &ConfusionMatrix) -> Result<f64> {
    let n = confusion.total();
    if n == 0 {
        return Err(Error::Data("confusion matrix holds no observations".into()));
    }
    Ok(confusion.trace() as f64 / n as f64)
}

/// Fold assignment per essay index, plus any small-class warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<u32>,
    pub warnings: Vec<String>,
}

impl FoldPlan {
    /// (train, validation) index lists for one fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (i, &f) in self.folds.iter().enumerate() {
            if f as usize == fold {
                validation.push(i);
            } else {
                train.push(i);
            }
        }
        (train, validation)
    }
}

/// Shuffle each class independently (seeded per class) and deal its members
/// round-robin across folds, so per-class fold counts differ by at most one.
pub fn stratified_kfold(labels: &[Level], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds (got {k})")));
    }
    if k > labels.len() {
        return Err(Error::Config(format!(
            "{k} folds for {} essays",
            labels.len()
        )));
    }
    let mut folds = vec![0u32; labels.len()];
    let mut warnings = Vec::new();
    for level in Level::ALL {
        let mut members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == level)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            warnings.push(format!(
                "class {level} has {} essays for {k} folds; some folds will miss it",
                members.len()
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, level.name()));
        members.shuffle(&mut rng);
        for (pos, &essay) in members.iter().enumerate() {
            folds[essay] = (pos % k) as u32;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        folds,
        warnings,
    })
}

impl fmt::Display for ConfusionMatrix {
    /// Aligned table, true levels as rows and predicted levels as columns.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "true\\pred")?;
        for level in Level::ALL {
            write!(f, "{:>8}", level.name())?;
        }
        writeln!(f)?;
        for (i, row) in self.counts.iter().enumerate() {
            write!(f, "{:<9}", Level::ALL[i].name())?;
            for count in row {
                write!(f, "{count:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Outcome of training on one fold's training split and scoring its
/// validation split.
#[derive(Debug, Clone)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub confusion: ConfusionMatrix,
    pub error: f64,
    pub accuracy: f64,
}

/// Cross-validation result: per-fold records, fold means, and the pooled
/// confusion matrix over every essay's single held-out prediction.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub mean_error: f64,
    pub mean_accuracy: f64,
    pub pooled: ConfusionMatrix,
    pub pooled_error: f64,
    pub pooled_accuracy: f64,
    pub folds: Vec<FoldRecord>,
    pub warnings: Vec<String>,
}

fn with_fold_context(err: Error, fold: usize) -> Error {
    match err {
        Error::Data(m) => Error::Data(format!("fold {fold}: {m}")),
        Error::Config(m) => Error::Config(format!("fold {fold}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("fold {fold}: {m}")),
        other => other,
    }
}

/// Stratified k-fold cross-validation of the full pipeline. Every fitted
/// component sees only its fold's training split; folds run in parallel and
/// aggregate in fold order, so results depend only on inputs and seed.
pub fn run_cv(
    dataset: &Dataset,
    config: &PipelineConfig,
    k: usize,
    seed: u64,
    cost: &CostMatrix,
) -> Result<CvReport> {
    let labels: Vec<Level> = dataset
        .essays
        .iter()
        .map(|essay| {
            essay.label.ok_or_else(|| {
                Error::Data(format!("essay {:?} has no label", essay.id))
            })
        })
        .collect::<Result<_>>()?;
    let plan = stratified_kfold(&labels, k, seed)?;

    let folds: Vec<FoldRecord> = (0..k)
        .into_par_iter()
        .map(|fold| -> Result<FoldRecord> {
            let (train_idx, validation_idx) = plan.split(fold);
            let train = Dataset::from_essays(
                train_idx.iter().map(|&i| dataset.essays[i].clone()).collect(),
            )
            .map_err(|e| with_fold_context(e, fold))?;
            let (pipeline, model) =
                train_model(&train, config).map_err(|e| with_fold_context(e, fold))?;

            let validation: Vec<_> = validation_idx
                .iter()
                .map(|&i| dataset.essays[i].clone())
                .collect();
            let predictions = predict_pipeline(&validation, &pipeline, &model)
                .map_err(|e| with_fold_context(e, fold))?;

            let mut confusion = ConfusionMatrix::new();
            for (&i, (predicted, _)) in validation_idx.iter().zip(&predictions) {
                confusion.record(labels[i], *predicted);
            }
            Ok(FoldRecord {
                fold,
                train_size: train_idx.len(),
                validation_size: validation_idx.len(),
                error: cost_error(&confusion, cost)?,
                accuracy: accuracy(&confusion)?,
                confusion,
            })
        })
        .collect::<Result<_>>()?;

    let mut pooled = ConfusionMatrix::new();
    for record in &folds {
        pooled.merge(&record.confusion);
    }
    let n = folds.len() as f64;
    Ok(CvReport {
        k,
        seed,
        mean_error: folds.iter().map(|r| r.error).sum::<f64>() / n,
        mean_accuracy: folds.iter().map(|r| r.accuracy).sum::<f64>() / n,
        pooled_error: cost_error(&pooled, cost)?,
        pooled_accuracy: accuracy(&pooled)?,
        pooled,
        folds,
        warnings: plan.warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// Add families one at a time in the order given.
    Cumulative,
    /// Score the full set, then the full set minus each family in turn.
    LeaveOneOut,
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<AblationMode> {
        match s {
            "cumulative" => Ok(AblationMode::Cumulative),
            "loo" | "leave-one-out" => Ok(AblationMode::LeaveOneOut),
            other => Err(Error::Config(format!(
                "unknown ablation mode {other:?} (expected \"cumulative\" or \"loo\")"
            ))),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Cumulative => "cumulative",
            AblationMode::LeaveOneOut => "leave-one-out",
        })
    }
}

/// One ablation configuration's cross-validation scores.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub families: Vec<String>,
    pub mean_error: f64,
    pub mean_accuracy: f64,
    pub pooled_error: f64,
    pub pooled_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub mode: AblationMode,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

/// Cross-validate a sequence of family subsets. Cumulative mode grows the
/// set in the order given; leave-one-out scores the full set first (labeled
/// "all"), then drops one family at a time. Each subset reuses the same
/// data, fold plan, and seed, so rows differ only in enabled families.
pub fn run_ablation(
    dataset: &Dataset,
    config: &PipelineConfig,
    families: &[String],
    mode: AblationMode,
    k: usize,
    seed: u64,
    cost: &CostMatrix,
) -> Result<AblationReport> {
    if families.is_empty() {
        return Err(Error::Config("ablation needs at least one family".into()));
    }
    let mut seen = BTreeSet::new();
    let mut toggles = FamilyToggles::none();
    for family in families {
        toggles.set(family, true)?;
        if !seen.insert(family.as_str()) {
            return Err(Error::Config(format!(
                "family {family:?} listed twice in ablation set"
            )));
        }
    }

    let mut subsets: Vec<(String, Vec<String>)> = Vec::new();
    match mode {
        AblationMode::Cumulative => {
            for i in 1..=families.len() {
                let label = if i == 1 {
                    families[0].clone()
                } else {
                    format!("+{}", families[i - 1])
                };
                subsets.push((label, families[..i].to_vec()));
            }
        }
        AblationMode::LeaveOneOut => {
            subsets.push(("all".into(), families.to_vec()));
            for dropped in families {
                let kept: Vec<String> = families
                    .iter()
                    .filter(|f| *f != dropped)
                    .cloned()
                    .collect();
                subsets.push((format!("-{dropped}"), kept));
            }
        }
    }

    let mut rows = Vec::with_capacity(subsets.len());
    for (label, subset) in subsets {
        let mut subset_config = config.clone();
        subset_config.families = FamilyToggles::none();
        for family in &subset {
            subset_config.families.set(family, true)?;
        }
        let report = run_cv(dataset, &subset_config, k, seed, cost).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("ablation row {label:?}: {m}")),
            Error::Data(m) => Error::Data(format!("ablation row {label:?}: {m}")),
            other => other,
        })?;
        rows.push(AblationRow {
            label,
            families: subset,
            mean_error: report.mean_error,
            mean_accuracy: report.mean_accuracy,
            pooled_error: report.pooled_error,
            pooled_accuracy: report.pooled_accuracy,
        });
    }
    Ok(AblationReport {
        mode,
        k,
        seed,
        rows,
    })
}

/// Human-readable cross-validation summary: scores, warnings, and the
/// pooled confusion matrix.
pub fn render_cv_summary(report: &CvReport) -> String {
    let mut summary = String::new();
    let _ = writeln!(summary, "stratified {}-fold cross-validation (seed {})", report.k, report.seed);
    let _ = writeln!(summary, "mean   error {:.6}  accuracy {:.6}", report.mean_error, report.mean_accuracy);
    let _ = writeln!(summary, "pooled error {:.6}  accuracy {:.6}", report.pooled_error, report.pooled_accuracy);
    for warning in &report.warnings {
        let _ = writeln!(summary, "warning: {warning}");
    }
    let _ = writeln!(summary, "\npooled confusion matrix:\n{}", report.pooled);
    summary
}

/// Write `cv_summary.txt` (scores plus the pooled confusion matrix) and
/// `cv_folds.csv` into `dir`. Output is deterministic for a given report.
pub fn write_cv_report(dir: impl AsRef<Path>, report: &CvReport) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("cv_summary.txt"), render_cv_summary(report))?;

    let mut csv = String::from("fold,train_size,validation_size,error,accuracy\n");
    for fold in &report.folds {
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6}",
            fold.fold, fold.train_size, fold.validation_size, fold.error, fold.accuracy
        );
    }
    std::fs::write(dir.join("cv_folds.csv"), csv)?;
    Ok(())
}

/// Human-readable ablation table, one row per configuration.
pub fn render_ablation_table(report: &AblationReport) -> String {
    let label_width = report
        .rows
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max("ablation".len());
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} ablation, {}-fold cross-validation (seed {})",
        report.mode, report.k, report.seed
    );
    let _ = writeln!(
        text,
        "{:<label_width$}  {:>10}  {:>10}  families",
        "ablation", "error", "accuracy"
    );
    for row in &report.rows {
        let _ = writeln!(
            text,
            "{:<label_width$}  {:>10.6}  {:>10.6}  {}",
            row.label,
            row.mean_error,
            row.mean_accuracy,
            row.families.join("+")
        );
    }
    text
}

/// Write `ablation.txt`, `ablation.csv`, and `plot_data.csv` into `dir`.
/// The plot file holds one row per configuration: x is the family count
/// (cumulative) or the row label (leave-one-out), y columns are error and
/// accuracy.
pub fn write_ablation_report(dir: impl AsRef<Path>, report: &AblationReport) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ablation.txt"), render_ablation_table(report))?;

    let mut csv = String::from(
        "label,families,mean_error,mean_accuracy,pooled_error,pooled_accuracy\n",
    );
    for row in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            row.label,
            row.families.join("+"),
            row.mean_error,
            row.mean_accuracy,
            row.pooled_error,
            row.pooled_accuracy
        );
    }
    std::fs::write(dir.join("ablation.csv"), csv)?;

    let mut plot = String::from("x,error,accuracy\n");
    for (i, row) in report.rows.iter().enumerate() {
        let x = match report.mode {
            AblationMode::Cumulative => (i + 1).to_string(),
            AblationMode::LeaveOneOut => row.label.clone(),
        };
        let _ = writeln!(plot, "{x},{:.6},{:.6}", row.mean_error, row.mean_accuracy);
    }
    std::fs::write(dir.join("plot_data.csv"), plot)?;
    Ok(())
}
