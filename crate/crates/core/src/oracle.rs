//! Ground truth for synthetic Gaussian problems: posterior probabilities,
//! the Bayes rule and its error, and Monte-Carlo estimates of the
//! conditional and unconditional allocation rates of a sample rule.

use std::io::{self, Write};

use libm::erfc;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{train_svm, ClassifierError, Classify, SvmConfig, SvmModel};
use crate::data::{synth_gaussian, DataError, LabeledDataset, SyntheticSpec};
use crate::par;
use crate::seed::{derive_seed, rng};
use crate::selection::GeneSubset;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("sample has {found} values, spec has {expected} features")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("all class densities vanish at this point")]
    Underflow,
    #[error("unsupported spec family: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rule assigned class index {0}, outside the spec's classes")]
    ClassOutOfRange(usize),
    #[error("{0} priors for {1} classes")]
    PriorMismatch(usize, usize),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("classifiers: {0}")]
    Classifier(#[from] ClassifierError),
}

/// Standard normal CDF, `Φ(x) = erfc(−x/√2)/2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn log_weights(spec: &SyntheticSpec, y: &[f64]) -> Vec<f64> {
    spec.means
        .iter()
        .zip(&spec.priors)
        .map(|(mean, &prior)| {
            let sq: f64 = mean.iter().zip(y).map(|(m, v)| (v - m) * (v - m)).sum();
            prior.ln() - sq / (2.0 * spec.variance)
        })
        .collect()
}

fn posterior_unchecked(spec: &SyntheticSpec, y: &[f64]) -> Result<Vec<f64>, OracleError> {
    let lw = log_weights(spec, y);
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(OracleError::Underflow);
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

fn check_point(spec: &SyntheticSpec, y: &[f64]) -> Result<(), OracleError> {
    spec.validate()?;
    if y.len() != spec.n_features() {
        return Err(OracleError::DimensionMismatch { expected: spec.n_features(), found: y.len() });
    }
    Ok(())
}

/// Posterior class probabilities `τ_i(y) = π_i f_i(y) / Σ_h π_h f_h(y)`,
/// evaluated in log space.
pub fn posterior(spec: &SyntheticSpec, y: &[f64]) -> Result<Vec<f64>, OracleError> {
    check_point(spec, y)?;
    posterior_unchecked(spec, y)
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class of maximal posterior; ties go to the lower class index.
pub fn bayes_classify(spec: &SyntheticSpec, y: &[f64]) -> Result<usize, OracleError> {
    Ok(argmax_first(&posterior(spec, y)?))
}

/// The Bayes rule of a validated spec, usable wherever a [`Classify`] is.
#[derive(Debug, Clone)]
pub struct BayesRule {
    spec: SyntheticSpec,
}

impl BayesRule {
    pub fn new(spec: &SyntheticSpec) -> Result<Self, OracleError> {
        spec.validate()?;
        Ok(Self { spec: spec.clone() })
    }
}

impl Classify for BayesRule {
    fn classify(&self, sample: &[f64]) -> Result<usize, ClassifierError> {
        if sample.len() != self.spec.n_features() {
            return Err(ClassifierError::DimensionMismatch { expected: self.spec.n_features(), found: sample.len() });
        }
        posterior_unchecked(&self.spec, sample).map(|t| argmax_first(&t)).map_err(|_| ClassifierError::NonFiniteSample)
    }
}

/// Bayes error of two homoscedastic Gaussian classes. With Mahalanobis
/// separation `Δ` and `L = ln(π₁/π₂)`:
///
/// ```text
/// e_o = π₁ Φ(−Δ/2 − L/Δ) + π₂ Φ(−Δ/2 + L/Δ)
/// ```
///
/// which is `Φ(−Δ/2)` for equal priors. At `Δ = 0` every point goes to
/// the more probable class (the first on a tie).
pub fn optimal_error(spec: &SyntheticSpec) -> Result<f64, OracleError> {
    spec.validate()?;
    if spec.n_classes() != 2 {
        return Err(OracleError::Unsupported(format!("{} classes", spec.n_classes())));
    }
    let (p1, p2) = (spec.priors[0], spec.priors[1]);
    if p1 == 0.0 || p2 == 0.0 {
        return Ok(0.0);
    }
    let dist2: f64 = spec.means[0].iter().zip(&spec.means[1]).map(|(a, b)| (a - b) * (a - b)).sum();
    let delta = (dist2 / spec.variance).sqrt();
    if delta == 0.0 {
        return Ok(if p1 >= p2 { p2 } else { p1 });
    }
    let l = (p1 / p2).ln();
    Ok(p1 * normal_cdf(-delta / 2.0 - l / delta) + p2 * normal_cdf(-delta / 2.0 + l / delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    Conditional,
    Unconditional,
}

/// `rates[i][j]`: estimated probability that a class-`i` draw is assigned
/// to class `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    pub rates: Vec<Vec<f64>>,
    pub kind: RateKind,
    pub mc_samples: usize,
    pub seed: u64,
}

impl RateMatrix {
    /// Misallocation probability of class `i`.
    pub fn class_error(&self, i: usize) -> f64 {
        self.rates[i].iter().enumerate().filter(|&(j, _)| j != i).map(|(_, r)| r).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W, class_names: &[String]) -> io::Result<()> {
        write!(w, "true_class")?;
        for name in class_names {
            write!(w, "\t{name}")?;
        }
        writeln!(w)?;
        for (name, row) in class_names.iter().zip(&self.rates) {
            write!(w, "{name}")?;
            for r in row {
                write!(w, "\t{r}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

const CHUNK: usize = 2048;

/// Allocation rates of a fixed rule, estimated from `mc_samples` fresh
/// draws per class. Draws come in chunks whose generators are seeded from
/// `(seed, class, chunk)`, so the estimate does not depend on threading.
pub fn conditional_rates(
    rule: &(impl Classify + ?Sized),
    spec: &SyntheticSpec,
    mc_samples: usize,
    seed: u64,
) -> Result<RateMatrix, OracleError> {
    spec.validate()?;
    if mc_samples < 1000 {
        return Err(OracleError::InvalidParameter(format!("need at least 1000 Monte-Carlo samples, got {mc_samples}")));
    }
    let g = spec.n_classes();
    let sd = spec.variance.sqrt();
    let chunks = mc_samples.div_ceil(CHUNK);
    let tallies = par::try_map_indexed(g * chunks, |job| {
        let (class, chunk) = (job / chunks, job % chunks);
        let mut gen = rng(derive_seed(derive_seed(seed, class as u64), chunk as u64));
        let count = CHUNK.min(mc_samples - chunk * CHUNK);
        let mean = &spec.means[class];
        let mut y = vec![0.0; mean.len()];
        let mut tally = vec![0usize; g];
        for _ in 0..count {
            for (v, &mu) in y.iter_mut().zip(mean) {
                *v = mu + sd * gen.sample::<f64, _>(StandardNormal);
            }
            let j = rule.classify(&y)?;
            if j >= g {
                return Err(OracleError::ClassOutOfRange(j));
            }
            tally[j] += 1;
        }
        Ok(tally)
    })?;
    let mut counts = vec![vec![0usize; g]; g];
    for (job, tally) in tallies.iter().enumerate() {
        for (c, t) in counts[job / chunks].iter_mut().zip(tally) {
            *c += t;
        }
    }
    let rates = counts.into_iter().map(|row| row.into_iter().map(|c| c as f64 / mc_samples as f64).collect()).collect();
    Ok(RateMatrix { rates, kind: RateKind::Conditional, mc_samples, seed })
}

/// Produces a rule from a training set.
pub trait Trainer: Sync {
    type Rule: Classify;
    fn train(&self, data: &LabeledDataset) -> Result<Self::Rule, ClassifierError>;
}

impl<F, R> Trainer for F
where
    F: Fn(&LabeledDataset) -> Result<R, ClassifierError> + Sync,
    R: Classify,
{
    type Rule = R;
    fn train(&self, data: &LabeledDataset) -> Result<R, ClassifierError> {
        self(data)
    }
}

/// Linear SVM on all features.
#[derive(Debug, Clone, Copy, Default)]
pub struct SvmTrainer(pub SvmConfig);

impl Trainer for SvmTrainer {
    type Rule = SvmModel;
    fn train(&self, data: &LabeledDataset) -> Result<SvmModel, ClassifierError> {
        train_svm(data, &GeneSubset::all(data.n_features()), &self.0)
    }
}

/// Training-set and Monte-Carlo seeds of replicate `r`.
pub fn replicate_seeds(seed: u64, r: usize) -> (u64, u64) {
    (derive_seed(seed, 2 * r as u64), derive_seed(seed, 2 * r as u64 + 1))
}

/// Class sizes of a training set of `n` split by the spec's priors.
pub fn class_sizes_for(spec: &SyntheticSpec, n: usize) -> Vec<usize> {
    let g = spec.n_classes();
    let mut sizes: Vec<usize> = spec.priors[..g - 1].iter().map(|p| (p * n as f64).round() as usize).collect();
    let used: usize = sizes.iter().sum();
    sizes.push(n.saturating_sub(used));
    sizes
}

/// Expected allocation rates over training sets of size `n`: the mean of
/// [`conditional_rates`] over `reps` independently drawn training sets.
pub fn unconditional_rates<T: Trainer>(
    trainer: &T,
    spec: &SyntheticSpec,
    n: usize,
    reps: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<RateMatrix, OracleError> {
    spec.validate()?;
    if reps < 1 {
        return Err(OracleError::InvalidParameter("need at least one replicate".into()));
    }
    let sizes = class_sizes_for(spec, n);
    let per_rep = par::try_map_indexed(reps, |r| {
        let (train_seed, mc_seed) = replicate_seeds(seed, r);
        let train_spec = SyntheticSpec { class_sizes: sizes.clone(), seed: train_seed, ..spec.clone() };
        let data = synth_gaussian(&train_spec)?;
        let rule = trainer.train(&data)?;
        conditional_rates(&rule, spec, mc_samples, mc_seed)
    })?;
    let g = spec.n_classes();
    let mut rates = vec![vec![0.0; g]; g];
    for m in &per_rep {
        for (row, mrow) in rates.iter_mut().zip(&m.rates) {
            for (r, x) in row.iter_mut().zip(mrow) {
                *r += x;
            }
        }
    }
    for row in &mut rates {
        for r in row.iter_mut() {
            *r /= reps as f64;
        }
    }
    Ok(RateMatrix { rates, kind: RateKind::Unconditional, mc_samples, seed })
}

/// `Σ_i π_i Σ_{j≠i} rates[i][j]`.
pub fn overall_error(rates: &RateMatrix, priors: &[f64]) -> Result<f64, OracleError> {
    if priors.len() != rates.rates.len() {
        return Err(OracleError::PriorMismatch(priors.len(), rates.rates.len()));
    }
    if priors.iter().any(|&p| p.is_nan() || p < 0.0) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(OracleError::InvalidParameter("priors must be nonnegative and sum to 1".into()));
    }
    Ok(priors.iter().enumerate().map(|(i, p)| p * rates.class_error(i)).sum())
}
