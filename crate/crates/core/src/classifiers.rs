//! Soft-margin linear SVM and the centroid-correlation rule.
//!
//! The SVM is trained in the dual,
//!
//! ```text
//! min  ½ αᵀQα − Σ α_j    s.t.  0 ≤ α_j ≤ C,  Σ α_j s_j = 0,
//! Q_ij = s_i s_j ⟨x_i, x_j⟩
//! ```
//!
//! with `s_j = +1` for the first class and `−1` for the second. The
//! intercept is not regularized, so the equality constraint is kept and
//! every update moves a pair of coefficients (SMO). Pairs are picked by a
//! deterministic maximal-violation rule; the achieved gap between the
//! largest and smallest KKT violation is reported as `dual_gap`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledDataset;
use crate::selection::GeneSubset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("classifier needs exactly two classes, data has {0}")]
    NotBinary(usize),
    #[error("empty feature subset")]
    EmptySubset,
    #[error("feature index {index} out of range for {p} features")]
    FeatureOutOfRange { index: usize, p: usize },
    #[error("sample has {found} values, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("sample contains non-finite values")]
    NonFiniteSample,
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("invalid SVM configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed model record: {0}")]
    MalformedRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub cost: f64,
    /// Stop once the maximal KKT violation gap is at or below this.
    pub tolerance: f64,
    /// Cap on pair updates; `None` means 500 per training sample.
    pub max_passes: Option<usize>,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { cost: 1.0, tolerance: 1e-6, max_passes: None }
    }
}

impl SvmConfig {
    pub fn with_cost(cost: f64) -> Self {
        Self { cost, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(ClassifierError::InvalidConfig(format!("cost must be positive, got {}", self.cost)));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(ClassifierError::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_passes == Some(0) {
            return Err(ClassifierError::InvalidConfig("max_passes must be at least 1".into()));
        }
        Ok(())
    }

    fn iteration_cap(&self, n: usize) -> usize {
        self.max_passes.unwrap_or(500 * n.max(1))
    }
}

/// Anything that assigns a sample vector to a zero-based class index.
pub trait Classify: Sync {
    fn classify(&self, sample: &[f64]) -> Result<usize, ClassifierError>;
}

/// A fitted hyperplane over a subset of the parent dataset's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub intercept: f64,
    /// One coefficient per entry of `active_features`.
    pub weights: Vec<f64>,
    pub active_features: Vec<usize>,
    /// Dimension of the sample vectors this model accepts.
    pub input_dim: usize,
    pub cost: f64,
    pub converged: bool,
    pub dual_gap: f64,
}

impl SvmModel {
    /// A model with the given coefficients, marked converged.
    pub fn from_parts(intercept: f64, weights: Vec<f64>, active_features: Vec<usize>, input_dim: usize) -> Self {
        assert_eq!(weights.len(), active_features.len());
        Self { intercept, weights, active_features, input_dim, cost: f64::INFINITY, converged: true, dual_gap: 0.0 }
    }

    pub fn decision_value(&self, sample: &[f64]) -> Result<f64, ClassifierError> {
        if sample.len() != self.input_dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.input_dim, found: sample.len() });
        }
        Ok(self.intercept + self.active_features.iter().zip(&self.weights).map(|(&v, &w)| w * sample[v]).sum::<f64>())
    }

    /// First class on a strictly positive decision value, second otherwise.
    pub fn predict(&self, sample: &[f64]) -> Result<usize, ClassifierError> {
        Ok(if self.decision_value(sample)? > 0.0 { 0 } else { 1 })
    }

    /// Plain-text record: a header line, `key value` lines, then one
    /// `feature weight` line per active feature (zero-based indices).
    pub fn to_record(&self) -> String {
        let mut s = String::from("svm-model 1\n");
        writeln!(s, "intercept {}", self.intercept).unwrap();
        writeln!(s, "cost {}", self.cost).unwrap();
        writeln!(s, "converged {}", self.converged).unwrap();
        writeln!(s, "dual_gap {}", self.dual_gap).unwrap();
        writeln!(s, "input_dim {}", self.input_dim).unwrap();
        writeln!(s, "weights {}", self.weights.len()).unwrap();
        for (v, w) in self.active_features.iter().zip(&self.weights) {
            writeln!(s, "{v} {w}").unwrap();
        }
        s
    }

    pub fn from_record(text: &str) -> Result<Self, ClassifierError> {
        let bad = |m: &str| ClassifierError::MalformedRecord(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("svm-model 1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<String, ClassifierError> {
            let line = lines.next().ok_or_else(|| bad(key))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(bad(key)),
            }
        };
        let num = |s: String, key: &str| s.parse::<f64>().map_err(|_| bad(key));
        let intercept = num(field("intercept")?, "intercept")?;
        let cost = num(field("cost")?, "cost")?;
        let converged = field("converged")?.parse::<bool>().map_err(|_| bad("converged"))?;
        let dual_gap = num(field("dual_gap")?, "dual_gap")?;
        let input_dim = field("input_dim")?.parse::<usize>().map_err(|_| bad("input_dim"))?;
        let count = field("weights")?.parse::<usize>().map_err(|_| bad("weights"))?;
        let mut active_features = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for line in lines {
            let (v, w) = line.trim().split_once(' ').ok_or_else(|| bad("weight line"))?;
            active_features.push(v.parse::<usize>().map_err(|_| bad("feature index"))?);
            weights.push(w.trim().parse::<f64>().map_err(|_| bad("weight"))?);
        }
        if weights.len() != count {
            return Err(bad("weight count"));
        }
        Ok(Self { intercept, weights, active_features, input_dim, cost, converged, dual_gap })
    }
}

impl Classify for SvmModel {
    fn classify(&self, sample: &[f64]) -> Result<usize, ClassifierError> {
        self.predict(sample)
    }
}

/// Result of the dual optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = Σ α_j s_j ⟨x_j, x⟩ − rho`.
    pub rho: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

const TAU: f64 = 1e-12;

/// SMO on a precomputed n × n linear kernel (row-major) with label signs
/// `signs[j] ∈ {+1, −1}`.
pub fn solve_dual(gram: &[f64], signs: &[f64], config: &SvmConfig) -> DualSolution {
    let n = signs.len();
    debug_assert_eq!(gram.len(), n * n);
    let c = config.cost;
    let k = |i: usize, j: usize| gram[i * n + j];
    let q = |i: usize, j: usize| signs[i] * signs[j] * gram[i * n + j];
    let at_upper = |a: f64| a >= c;
    let at_lower = |a: f64| a <= 0.0;

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let cap = config.iteration_cap(n);
    let mut iterations = 0;
    let mut gap;
    let converged;

    loop {
        // i: maximal −s_t G_t over the "up" set
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let in_up = if signs[t] > 0.0 { !at_upper(alpha[t]) } else { !at_lower(alpha[t]) };
            if in_up && -signs[t] * grad[t] > gmax {
                gmax = -signs[t] * grad[t];
                i = t;
            }
        }
        // j: second-order choice over the "low" set; gmax2 tracks max s_t G_t there
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let in_low = if signs[t] > 0.0 { !at_lower(alpha[t]) } else { !at_upper(alpha[t]) };
            if !in_low {
                continue;
            }
            let sg = signs[t] * grad[t];
            gmax2 = gmax2.max(sg);
            if i == usize::MAX {
                continue;
            }
            let diff = gmax + sg;
            if diff > 0.0 {
                let quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax + gmax2;
        let within = gap <= config.tolerance;
        if within || j == usize::MAX {
            converged = within;
            break;
        }
        if iterations >= cap {
            converged = false;
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if signs[i] != signs[j] {
            let quad = k(i, i) + k(j, j) + 2.0 * q(i, j);
            let delta = (-grad[i] - grad[j]) / if quad > 0.0 { quad } else { TAU };
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = k(i, i) + k(j, j) - 2.0 * q(i, j);
            let delta = (grad[i] - grad[j]) / if quad > 0.0 { quad } else { TAU };
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // offset from free coefficients, else the midpoint of the feasible range
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let sg = signs[t] * grad[t];
        if at_upper(alpha[t]) {
            if signs[t] < 0.0 {
                ub = ub.min(sg)
            } else {
                lb = lb.max(sg)
            }
        } else if at_lower(alpha[t]) {
            if signs[t] > 0.0 {
                ub = ub.min(sg)
            } else {
                lb = lb.max(sg)
            }
        } else {
            free += 1;
            free_sum += sg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };

    DualSolution { alpha, rho, gap, iterations, converged }
}

/// Linear kernel of the selected samples over `features`, in the given
/// feature order.
fn linear_gram(data: &LabeledDataset, features: &[usize]) -> Vec<f64> {
    let n = data.n_samples();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| features.iter().map(|&v| data.value(i, v)).collect()).collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    gram
}

fn check_training(data: &LabeledDataset, subset: &GeneSubset) -> Result<(), ClassifierError> {
    if data.n_classes() != 2 {
        return Err(ClassifierError::NotBinary(data.n_classes()));
    }
    let counts = data.class_counts();
    if counts.contains(&0) {
        return Err(ClassifierError::SingleClass);
    }
    if subset.is_empty() {
        return Err(ClassifierError::EmptySubset);
    }
    let p = data.n_features();
    if let Some(&index) = subset.indices().iter().find(|&&v| v >= p) {
        return Err(ClassifierError::FeatureOutOfRange { index, p });
    }
    Ok(())
}

/// Fits the soft-margin SVM on `data` restricted to `subset`.
///
/// The kernel is accumulated over the subset's features in ascending index
/// order, so the fitted model does not depend on the order of `subset`.
pub fn train_svm(data: &LabeledDataset, subset: &GeneSubset, config: &SvmConfig) -> Result<SvmModel, ClassifierError> {
    config.validate()?;
    check_training(data, subset)?;
    let mut sorted = subset.indices().to_vec();
    sorted.sort_unstable();

    let signs: Vec<f64> = data.labels().iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    let gram = linear_gram(data, &sorted);
    let sol = solve_dual(&gram, &signs, config);

    let weights = subset
        .indices()
        .iter()
        .map(|&v| {
            (0..data.n_samples())
                .filter(|&j| sol.alpha[j] != 0.0)
                .map(|j| sol.alpha[j] * signs[j] * data.value(j, v))
                .sum()
        })
        .collect();

    Ok(SvmModel {
        intercept: -sol.rho,
        weights,
        active_features: subset.indices().to_vec(),
        input_dim: data.n_features(),
        cost: config.cost,
        converged: sol.converged,
        dual_gap: sol.gap,
    })
}

/// Pearson correlation; errors on length mismatch, fewer than two values
/// or a constant vector.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, ClassifierError> {
    if a.len() != b.len() {
        return Err(ClassifierError::DimensionMismatch { expected: a.len(), found: b.len() });
    }
    if a.len() < 2 {
        return Err(ClassifierError::UndefinedCorrelation("fewer than two values"));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(ClassifierError::UndefinedCorrelation("constant vector"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// First class when corr(y, reference) exceeds `threshold`, second otherwise.
pub fn centroid_corr_rule(reference: &[f64], y: &[f64], threshold: f64) -> Result<usize, ClassifierError> {
    Ok(if pearson(y, reference)? > threshold { 0 } else { 1 })
}

/// Correlation-to-centroid rule with the first-class centroid computed
/// from training data over a fixed feature subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidCorrelationRule {
    pub centroid: Vec<f64>,
    pub features: Vec<usize>,
    pub input_dim: usize,
    pub threshold: f64,
}

impl CentroidCorrelationRule {
    pub fn fit(data: &LabeledDataset, subset: &GeneSubset, threshold: f64) -> Result<Self, ClassifierError> {
        check_training(data, subset)?;
        let members: Vec<usize> = (0..data.n_samples()).filter(|&i| data.label(i) == 0).collect();
        let centroid = subset
            .indices()
            .iter()
            .map(|&v| members.iter().map(|&i| data.value(i, v)).sum::<f64>() / members.len() as f64)
            .collect();
        Ok(Self { centroid, features: subset.indices().to_vec(), input_dim: data.n_features(), threshold })
    }
}

impl Classify for CentroidCorrelationRule {
    fn classify(&self, sample: &[f64]) -> Result<usize, ClassifierError> {
        if sample.len() != self.input_dim {
            return Err(ClassifierError::DimensionMismatch { expected: self.input_dim, found: sample.len() });
        }
        let y: Vec<f64> = self.features.iter().map(|&v| sample[v]).collect();
        centroid_corr_rule(&self.centroid, &y, self.threshold)
    }
}
