//! Recursive feature elimination around the linear SVM, plus univariate
//! pooled-t prescreening.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{train_svm, ClassifierError, SvmConfig, SvmModel};
use crate::data::LabeledDataset;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("invalid RFE schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule starts at {first} features but only {available} are available")]
    ScheduleTooLarge { first: usize, available: usize },
    #[error("invalid feature subset: {0}")]
    InvalidSubset(String),
    #[error("screen size {g} outside 1..={p}")]
    InvalidScreenSize { g: usize, p: usize },
    #[error("pooled t needs two classes with at least two samples each, got counts {0:?}")]
    ClassTooSmall(Vec<usize>),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// Feature indices (zero-based) in ranking order, best first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GeneSubset {
    indices: Vec<usize>,
}

impl GeneSubset {
    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self, SelectionError> {
        let mut seen = vec![false; p];
        for &v in &indices {
            if v >= p {
                return Err(SelectionError::InvalidSubset(format!("index {v} out of range for {p} features")));
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(SelectionError::InvalidSubset(format!("duplicate index {v}")));
            }
        }
        Ok(Self { indices })
    }

    /// Every feature, in index order.
    pub fn all(p: usize) -> Self {
        Self { indices: (0..p).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.indices.contains(&feature)
    }

    /// The first `d` features of the ranking.
    pub fn top(&self, d: usize) -> Self {
        Self { indices: self.indices[..d.min(self.indices.len())].to_vec() }
    }

    pub fn is_subset_of(&self, other: &GeneSubset) -> bool {
        self.indices.iter().all(|v| other.contains(*v))
    }
}

/// Writes `rank<TAB>feature<TAB>score` lines, one per selected feature.
/// `scores` is aligned with the subset order.
pub fn write_markers<W: Write>(
    mut w: W,
    subset: &GeneSubset,
    feature_names: &[String],
    scores: &[f64],
) -> io::Result<()> {
    writeln!(w, "rank\tfeature\tscore")?;
    for (rank, (&v, s)) in subset.indices().iter().zip(scores).enumerate() {
        writeln!(w, "{}\t{}\t{}", rank + 1, feature_names[v], s)?;
    }
    Ok(())
}

/// Strictly decreasing retained-set sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RfeSchedule {
    sizes: Vec<usize>,
}

impl RfeSchedule {
    pub fn new(sizes: Vec<usize>) -> Result<Self, SelectionError> {
        if sizes.is_empty() {
            return Err(SelectionError::InvalidSchedule("empty".into()));
        }
        if sizes.contains(&0) {
            return Err(SelectionError::InvalidSchedule("sizes must be positive".into()));
        }
        if sizes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(SelectionError::InvalidSchedule(format!("not strictly decreasing: {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    /// Halving down to `floor`, then one feature at a time. A floor of 0
    /// or 1 gives the plain halving schedule.
    pub fn halving_with_floor(p: usize, floor: usize) -> Result<Self, SelectionError> {
        let base = rfe_schedule(p)?;
        let mut sizes = Vec::new();
        for &d in &base.sizes {
            if let Some(&last) = sizes.last() {
                if last <= floor {
                    break;
                }
            }
            sizes.push(d);
        }
        let last = *sizes.last().unwrap();
        if last > 1 && last <= floor {
            sizes.extend((1..last).rev());
        }
        Self::new(sizes)
    }

    /// This schedule cut at `d`: entries above `d`, then `d` itself.
    pub fn stopping_at(&self, d: usize) -> Result<Self, SelectionError> {
        let mut sizes: Vec<usize> = self.sizes.iter().copied().filter(|&s| s > d).collect();
        sizes.push(d);
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn first(&self) -> usize {
        self.sizes[0]
    }

    pub fn contains(&self, d: usize) -> bool {
        self.sizes.contains(&d)
    }
}

/// `[p, largest power of two below p, ..., 2, 1]`; when `p` is itself a
/// power of two, plain halving from `p`.
pub fn rfe_schedule(p: usize) -> Result<RfeSchedule, SelectionError> {
    if p < 1 {
        return Err(SelectionError::InvalidSchedule("need at least one feature".into()));
    }
    let mut sizes = vec![p];
    if p > 1 {
        let mut d = if p.is_power_of_two() { p / 2 } else { 1 << (usize::BITS - 1 - (p - 1).leading_zeros()) };
        loop {
            sizes.push(d);
            if d == 1 {
                break;
            }
            d /= 2;
        }
    }
    RfeSchedule::new(sizes)
}

/// Active features by decreasing |weight|, ties to the lower index.
pub fn rank_by_weight(model: &SvmModel) -> GeneSubset {
    let mut order: Vec<(usize, f64)> =
        model.active_features.iter().copied().zip(model.weights.iter().map(|w| w.abs())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    GeneSubset { indices: order.into_iter().map(|(v, _)| v).collect() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfeStep {
    pub size: usize,
    pub subset: GeneSubset,
    pub model: SvmModel,
}

/// The subsets and models RFE visits, one per schedule size, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RfePath {
    pub steps: Vec<RfeStep>,
}

impl RfePath {
    pub fn step(&self, d: usize) -> Option<&RfeStep> {
        self.steps.iter().find(|s| s.size == d)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.size).collect()
    }
}

/// RFE from all features of `data`.
pub fn rfe_path(data: &LabeledDataset, schedule: &RfeSchedule, config: &SvmConfig) -> Result<RfePath, SelectionError> {
    rfe_path_from(data, &GeneSubset::all(data.n_features()), schedule, config)
}

/// RFE starting from `universe`. If the universe is larger than the first
/// schedule size, one fit-rank-truncate step brings it down first (that
/// step is not recorded).
pub fn rfe_path_from(
    data: &LabeledDataset,
    universe: &GeneSubset,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<RfePath, SelectionError> {
    let first = schedule.first();
    if first > universe.len() {
        return Err(SelectionError::ScheduleTooLarge { first, available: universe.len() });
    }
    let mut current = universe.clone();
    if current.len() > first {
        let model = train_svm(data, &current, config)?;
        current = rank_by_weight(&model).top(first);
    }
    let mut steps = Vec::with_capacity(schedule.sizes().len());
    for (i, &size) in schedule.sizes().iter().enumerate() {
        let model = train_svm(data, &current, config)?;
        let next = schedule.sizes().get(i + 1).map(|&d| rank_by_weight(&model).top(d));
        steps.push(RfeStep { size, subset: current, model });
        match next {
            Some(s) => current = s,
            None => break,
        }
    }
    Ok(RfePath { steps })
}

/// Pooled-variance two-sample t statistic of every feature, first class
/// minus second. A feature with zero pooled variance scores 0 if the class
/// means agree and ±∞ otherwise.
pub fn t_statistics(data: &LabeledDataset) -> Result<Vec<f64>, SelectionError> {
    let counts = data.class_counts();
    if counts.len() != 2 || counts.iter().any(|&c| c < 2) {
        return Err(SelectionError::ClassTooSmall(counts));
    }
    let (n1, n2) = (counts[0] as f64, counts[1] as f64);
    let labels = data.labels();
    Ok(par::map_indexed(data.n_features(), |v| {
        let mut sum = [0.0; 2];
        for (i, &l) in labels.iter().enumerate() {
            sum[l] += data.value(i, v);
        }
        let mean = [sum[0] / n1, sum[1] / n2];
        let mut ss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let d = data.value(i, v) - mean[l];
            ss += d * d;
        }
        let diff = mean[0] - mean[1];
        let sd = (ss / (n1 + n2 - 2.0)).sqrt();
        if sd == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        } else {
            diff / (sd * (1.0 / n1 + 1.0 / n2).sqrt())
        }
    }))
}

/// Top `g` features by |t|, ties to the lower index.
pub fn t_screen(data: &LabeledDataset, g: usize) -> Result<GeneSubset, SelectionError> {
    let p = data.n_features();
    if g < 1 || g > p {
        return Err(SelectionError::InvalidScreenSize { g, p });
    }
    let t = t_statistics(data)?;
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| t[b].abs().total_cmp(&t[a].abs()).then(a.cmp(&b)));
    order.truncate(g);
    Ok(GeneSubset { indices: order })
}
