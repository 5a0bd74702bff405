//! Labeled expression matrices, delimited-text I/O, stratified fold plans
//! and synthetic data generators.
//!
//! Class labels are stored as zero-based indices into `class_names`; the
//! first class (index 0) is the one a linear rule assigns on a positive
//! decision value.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{derive_seed, rng};

/// Name of the label column (or label row, for the transposed layout).
pub const LABEL_COLUMN: &str = "class";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing label column \"{LABEL_COLUMN}\"")]
    MissingLabelColumn,
    #[error("line {line}: non-numeric expression value {value:?}")]
    NonNumeric { line: usize, value: String },
    #[error("line {line}: non-finite or missing expression value {value:?}")]
    NonFinite { line: usize, value: String },
    #[error("line {line}: expected {expected} cells, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("empty input")]
    Empty,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid fold count {k} for {n} samples (need 2 <= K <= n)")]
    InvalidFoldCount { k: usize, n: usize },
    #[error("class sizes sum to {sum}, expected n = {n}")]
    ClassSizeMismatch { sum: usize, n: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// An n × p expression matrix with one class label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    values: Vec<f64>,
    n: usize,
    p: usize,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    /// Builds a dataset from a row-major `n × p` buffer.
    pub fn from_row_major(
        values: Vec<f64>,
        n: usize,
        p: usize,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let invalid = |m: String| Err(DataError::Invalid(m));
        if n < 2 {
            return invalid(format!("need at least 2 samples, got {n}"));
        }
        if p < 1 {
            return invalid("need at least 1 feature".into());
        }
        if values.len() != n * p {
            return invalid(format!("matrix has {} values, expected {n}x{p}", values.len()));
        }
        if labels.len() != n {
            return invalid(format!("{} labels for {n} samples", labels.len()));
        }
        if feature_names.len() != p {
            return invalid(format!("{} feature names for {p} features", feature_names.len()));
        }
        if class_names.is_empty() {
            return invalid("no classes".into());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return invalid(format!("label index {bad} out of range"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("matrix contains non-finite values".into());
        }
        let ds = Self { values, n, p, labels, feature_names, class_names };
        if let Some(empty) = ds.class_counts().iter().position(|&c| c == 0) {
            return invalid(format!("class {:?} has no samples", ds.class_names[empty]));
        }
        Ok(ds)
    }

    /// Builds a dataset from per-sample rows, with generated feature
    /// names `f1..fp` and class names `1..g`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, n_classes: usize) -> Result<Self, DataError> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(DataError::Ragged { line: bad + 1, expected: p, found: rows[bad].len() });
        }
        let values = rows.iter().flatten().copied().collect();
        Self::from_row_major(values, n, p, labels, default_feature_names(p), default_class_names(n_classes))
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.p
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn value(&self, sample: usize, feature: usize) -> f64 {
        self.values[sample * self.p + feature]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the given samples (in the given order) into a new dataset.
    /// Unlike the constructors this allows a class to end up empty, which
    /// is how a collapsed training split shows up downstream.
    pub fn select_rows(&self, rows: &[usize]) -> LabeledDataset {
        let mut values = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        LabeledDataset {
            values,
            n: rows.len(),
            p: self.p,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Writes the dataset as delimited text in the given layout.
    pub fn write_to<W: Write>(&self, mut w: W, layout: Layout, delimiter: char) -> io::Result<()> {
        let d = delimiter;
        match layout {
            Layout::RowsAreSamples => {
                let mut line = String::from(LABEL_COLUMN);
                for name in &self.feature_names {
                    write!(line, "{d}{name}").unwrap();
                }
                writeln!(w, "{line}")?;
                for i in 0..self.n {
                    line.clear();
                    line.push_str(&self.class_names[self.labels[i]]);
                    for v in self.row(i) {
                        write!(line, "{d}{v}").unwrap();
                    }
                    writeln!(w, "{line}")?;
                }
            }
            Layout::RowsAreFeatures => {
                let mut line = String::from("feature");
                for i in 0..self.n {
                    write!(line, "{d}s{}", i + 1).unwrap();
                }
                writeln!(w, "{line}")?;
                line.clear();
                line.push_str(LABEL_COLUMN);
                for &l in &self.labels {
                    write!(line, "{d}{}", self.class_names[l]).unwrap();
                }
                writeln!(w, "{line}")?;
                for (v, name) in self.feature_names.iter().enumerate() {
                    line.clear();
                    line.push_str(name);
                    for i in 0..self.n {
                        write!(line, "{d}{}", self.value(i, v)).unwrap();
                    }
                    writeln!(w, "{line}")?;
                }
            }
        }
        Ok(())
    }

    /// Saves in the rows-are-samples layout, tab-delimited when the path
    /// ends in `.tsv`, comma-delimited otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let delim = if path.extension().is_some_and(|e| e == "tsv") { '\t' } else { ',' };
        let mut buf = Vec::new();
        self.write_to(&mut buf, Layout::RowsAreSamples, delim)?;
        fs::write(path, buf)?;
        Ok(())
    }
}

pub(crate) fn default_feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|v| format!("f{v}")).collect()
}

pub(crate) fn default_class_names(g: usize) -> Vec<String> {
    (1..=g).map(|i| i.to_string()).collect()
}

/// Orientation of a delimited dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// One sample per row; a column named `class` holds the labels.
    #[default]
    RowsAreSamples,
    /// One feature per row, first cell the feature name; a row named
    /// `class` holds the labels. The header row names the samples.
    RowsAreFeatures,
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rows-are-samples" | "samples" => Ok(Layout::RowsAreSamples),
            "rows-are-features" | "features" => Ok(Layout::RowsAreFeatures),
            other => Err(format!("unknown layout {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    pub layout: Layout,
    /// Declared class names, in class order. Labels outside this list are
    /// rejected. When absent, classes are the distinct labels sorted
    /// numerically if they are all integers, lexicographically otherwise.
    pub classes: Option<Vec<String>>,
}

pub fn load_dataset(path: impl AsRef<Path>, layout: Layout) -> Result<LabeledDataset, DataError> {
    load_dataset_with(path, &ReadOptions { layout, classes: None })
}

pub fn load_dataset_with(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, opts)
}

fn split_line(line: &str, delim: char) -> Vec<&str> {
    line.split(delim).map(str::trim).collect()
}

fn parse_value(cell: &str, line: usize) -> Result<f64, DataError> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(DataError::NonFinite { line, value: cell.to_string() }),
        Err(_) if cell.is_empty() || cell.eq_ignore_ascii_case("na") => {
            Err(DataError::NonFinite { line, value: cell.to_string() })
        }
        Err(_) => Err(DataError::NonNumeric { line, value: cell.to_string() }),
    }
}

/// Parses delimited text; the delimiter is a tab if the header contains
/// one, a comma otherwise.
pub fn parse_dataset(text: &str, opts: &ReadOptions) -> Result<LabeledDataset, DataError> {
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(DataError::Empty)?;
    let delim = if header.contains('\t') { '\t' } else { ',' };
    let header = split_line(header, delim);
    let width = header.len();

    let mut raw_labels = Vec::new();
    let mut feature_names = Vec::new();
    let mut values = Vec::new();
    let (n, p);

    match opts.layout {
        Layout::RowsAreSamples => {
            let label_col = header.iter().position(|h| *h == LABEL_COLUMN).ok_or(DataError::MissingLabelColumn)?;
            feature_names =
                header.iter().enumerate().filter(|&(c, _)| c != label_col).map(|(_, h)| h.to_string()).collect();
            for (line_no, line) in lines {
                let cells = split_line(line, delim);
                if cells.len() != width {
                    return Err(DataError::Ragged { line: line_no, expected: width, found: cells.len() });
                }
                for (c, cell) in cells.iter().enumerate() {
                    if c == label_col {
                        raw_labels.push(cell.to_string());
                    } else {
                        values.push(parse_value(cell, line_no)?);
                    }
                }
            }
            n = raw_labels.len();
            p = feature_names.len();
        }
        Layout::RowsAreFeatures => {
            n = width.saturating_sub(1);
            let mut columns: Vec<Vec<f64>> = Vec::new();
            let mut label_row = None;
            for (line_no, line) in lines {
                let cells = split_line(line, delim);
                if cells.len() != width {
                    return Err(DataError::Ragged { line: line_no, expected: width, found: cells.len() });
                }
                if cells[0] == LABEL_COLUMN {
                    label_row = Some(cells[1..].iter().map(|s| s.to_string()).collect::<Vec<_>>());
                    continue;
                }
                feature_names.push(cells[0].to_string());
                columns.push(cells[1..].iter().map(|c| parse_value(c, line_no)).collect::<Result<_, _>>()?);
            }
            raw_labels = label_row.ok_or(DataError::MissingLabelColumn)?;
            p = feature_names.len();
            values.reserve(n * p);
            for i in 0..n {
                values.extend(columns.iter().map(|col| col[i]));
            }
        }
    }

    let class_names = match &opts.classes {
        Some(declared) => declared.clone(),
        None => {
            let mut distinct: Vec<String> = raw_labels.clone();
            distinct.sort();
            distinct.dedup();
            if distinct.iter().all(|s| s.parse::<i64>().is_ok()) {
                distinct.sort_by_key(|s| s.parse::<i64>().unwrap());
            }
            distinct
        }
    };
    let labels = raw_labels
        .iter()
        .map(|l| class_names.iter().position(|c| c == l).ok_or_else(|| DataError::UnknownClass(l.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    LabeledDataset::from_row_major(values, n, p, labels, feature_names, class_names)
}

/// A stratified partition of the samples into K blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    k: usize,
    assignment: Vec<usize>,
    block_sizes: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    /// Builds a plan from an explicit zero-based block assignment.
    pub fn from_assignment(assignment: Vec<usize>, k: usize, seed: u64) -> Result<Self, DataError> {
        let n = assignment.len();
        if k < 2 || k > n {
            return Err(DataError::InvalidFoldCount { k, n });
        }
        let mut block_sizes = vec![0; k];
        for &b in &assignment {
            if b >= k {
                return Err(DataError::Invalid(format!("block index {b} out of range for K = {k}")));
            }
            block_sizes[b] += 1;
        }
        if block_sizes.contains(&0) {
            return Err(DataError::Invalid("empty block".into()));
        }
        Ok(Self { k, assignment, block_sizes, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Zero-based block of every sample.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Samples of block `b`, ascending.
    pub fn block(&self, b: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == b).collect()
    }

    /// Samples outside every block in `held_out`, ascending.
    pub fn training(&self, held_out: &[usize]) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| !held_out.contains(&self.assignment[i])).collect()
    }
}

/// Stratified K-fold plan. Within each class the samples are shuffled
/// with a generator seeded from `(seed, class index)` and then dealt
/// round-robin into the blocks; the dealing cursor carries over from one
/// class to the next so block totals also stay within one of each other.
pub fn make_folds(data: &LabeledDataset, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    let n = data.n_samples();
    if k < 2 || k > n {
        return Err(DataError::InvalidFoldCount { k, n });
    }
    let mut assignment = vec![0; n];
    let mut cursor = 0;
    for class in 0..data.n_classes() {
        let mut members: Vec<usize> = (0..n).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng(derive_seed(seed, class as u64)));
        for i in members {
            assignment[i] = cursor;
            cursor = (cursor + 1) % k;
        }
    }
    FoldPlan::from_assignment(assignment, k, seed)
}

fn check_sizes(n: usize, class_sizes: &[usize]) -> Result<(), DataError> {
    let sum: usize = class_sizes.iter().sum();
    if sum != n {
        return Err(DataError::ClassSizeMismatch { sum, n });
    }
    Ok(())
}

fn block_labels(class_sizes: &[usize]) -> Vec<usize> {
    class_sizes.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect()
}

/// Null benchmark: every entry an independent standard normal draw, labels
/// assigned in class blocks and unrelated to the features.
pub fn synth_null(n: usize, p: usize, class_sizes: &[usize], seed: u64) -> Result<LabeledDataset, DataError> {
    check_sizes(n, class_sizes)?;
    let mut g = rng(seed);
    let values = (0..n * p).map(|_| g.sample(StandardNormal)).collect();
    LabeledDataset::from_row_major(
        values,
        n,
        p,
        block_labels(class_sizes),
        default_feature_names(p),
        default_class_names(class_sizes.len()),
    )
}

/// Homoscedastic Gaussian classes `N(mean_i, variance * I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub means: Vec<Vec<f64>>,
    pub variance: f64,
    pub priors: Vec<f64>,
    pub class_sizes: Vec<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two classes with means `∓separation/2` on the first `informative`
    /// axes and zero elsewhere, equal priors.
    pub fn two_class(
        p: usize,
        informative: usize,
        separation: f64,
        variance: f64,
        class_sizes: [usize; 2],
        seed: u64,
    ) -> Self {
        let half = separation / 2.0 / (informative.max(1) as f64).sqrt();
        let mean = |sign: f64| (0..p).map(|v| if v < informative { sign * half } else { 0.0 }).collect();
        Self {
            means: vec![mean(-1.0), mean(1.0)],
            variance,
            priors: vec![0.5, 0.5],
            class_sizes: class_sizes.to_vec(),
            seed,
        }
    }

    pub fn n_features(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        let g = self.means.len();
        if g < 2 {
            return bad("need at least two classes");
        }
        if self.priors.len() != g || self.class_sizes.len() != g {
            return bad("means, priors and class sizes disagree on the class count");
        }
        let p = self.n_features();
        if p == 0 || self.means.iter().any(|m| m.len() != p) {
            return bad("mean vectors must share a nonzero length");
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return bad("non-finite mean");
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return bad("variance must be positive");
        }
        if self.priors.iter().any(|&pi| pi.is_nan() || pi < 0.0)
            || (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return bad("priors must be nonnegative and sum to 1");
        }
        Ok(())
    }
}

/// Draws `class_sizes[i]` samples from class `i`, class blocks in order.
pub fn synth_gaussian(spec: &SyntheticSpec) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    let p = spec.n_features();
    let n: usize = spec.class_sizes.iter().sum();
    let sd = spec.variance.sqrt();
    let mut g = rng(spec.seed);
    let mut values = Vec::with_capacity(n * p);
    for (mean, &m) in spec.means.iter().zip(&spec.class_sizes) {
        for _ in 0..m {
            values.extend(mean.iter().map(|&mu| mu + sd * g.sample::<f64, _>(StandardNormal)));
        }
    }
    LabeledDataset::from_row_major(
        values,
        n,
        p,
        block_labels(&spec.class_sizes),
        default_feature_names(p),
        default_class_names(spec.n_classes()),
    )
}
