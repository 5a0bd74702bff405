//! Frozen toy fixture and literal-loop estimators, written against the
//! estimator formulas without going through `cv` or `selection`.

#![allow(dead_code)]

pub mod invariants;

use rfecv::classifiers::{train_svm, SvmConfig, SvmModel};
use rfecv::data::{FoldPlan, LabeledDataset};
use rfecv::selection::GeneSubset;

pub const SCHEDULE: [usize; 3] = [4, 2, 1];
pub const K: usize = 3;
pub const SEED: u64 = 7;

pub fn toy() -> LabeledDataset {
    let rows = vec![
        vec![1.76, 1.85, -0.53, -0.88],
        vec![0.72, 1.49, -0.65, -2.39],
        vec![-0.31, 0.7, 1.52, 0.53],
        vec![1.43, -0.4, 0.14, -1.43],
        vec![0.97, 0.93, 0.88, -0.71],
        vec![-1.36, -0.57, 0.9, -0.28],
        vec![-0.4, 0.31, -0.6, -0.7],
        vec![-0.73, 0.0, -0.31, -1.09],
        vec![-0.81, -0.3, 0.1, -1.7],
    ];
    LabeledDataset::from_rows(&rows, vec![0, 0, 0, 0, 0, 1, 1, 1, 1], 2).unwrap()
}

/// Three blocks of three, each holding both classes.
pub fn toy_folds() -> FoldPlan {
    FoldPlan::from_assignment(vec![0, 1, 2, 0, 1, 2, 0, 1, 2], K, SEED).unwrap()
}

pub fn loo_folds() -> FoldPlan {
    FoldPlan::from_assignment((0..9).collect(), 9, SEED).unwrap()
}

fn rows_where(data: &LabeledDataset, keep: impl Fn(usize) -> bool) -> LabeledDataset {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for j in 0..data.n_samples() {
        if keep(j) {
            rows.push(data.row(j).to_vec());
            labels.push(data.label(j));
        }
    }
    LabeledDataset::from_rows(&rows, labels, data.n_classes()).unwrap()
}

fn fit(data: &LabeledDataset, features: &[usize], cfg: &SvmConfig) -> SvmModel {
    train_svm(data, &GeneSubset::new(features.to_vec(), data.n_features()).unwrap(), cfg).unwrap()
}

/// Backward elimination: fit, order by |w| (ties to the lower index),
/// keep the next size. Returns the subset for each size in `sizes`.
pub fn literal_rfe(data: &LabeledDataset, universe: Vec<usize>, sizes: &[usize], cfg: &SvmConfig) -> Vec<Vec<usize>> {
    let mut current = universe;
    let mut out = Vec::new();
    let shrink = |current: &[usize], d: usize| -> Vec<usize> {
        let m = fit(data, current, cfg);
        let mut scored: Vec<(usize, f64)> =
            m.active_features.iter().zip(&m.weights).map(|(&v, &w)| (v, w.abs())).collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.into_iter().take(d).map(|(v, _)| v).collect()
    };
    if current.len() > sizes[0] {
        current = shrink(&current, sizes[0]);
    }
    for (i, &d) in sizes.iter().enumerate() {
        assert_eq!(current.len(), d);
        out.push(current.clone());
        if let Some(&next) = sizes.get(i + 1) {
            current = shrink(&current, next);
        }
    }
    out
}

fn wrong(model: &SvmModel, data: &LabeledDataset, j: usize) -> usize {
    let y = data.row(j);
    let f = model.intercept + model.active_features.iter().zip(&model.weights).map(|(&v, &w)| w * y[v]).sum::<f64>();
    let predicted = if f > 0.0 { 0 } else { 1 };
    usize::from(predicted != data.label(j))
}

fn all(p: usize) -> Vec<usize> {
    (0..p).collect()
}

pub fn apparent(data: &LabeledDataset, sizes: &[usize], cfg: &SvmConfig) -> Vec<f64> {
    let n = data.n_samples();
    literal_rfe(data, all(data.n_features()), sizes, cfg)
        .iter()
        .map(|s| {
            let m = fit(data, s, cfg);
            (0..n).map(|j| wrong(&m, data, j)).sum::<usize>() as f64 / n as f64
        })
        .collect()
}

pub fn internal(data: &LabeledDataset, fold_of: &[usize], k: usize, sizes: &[usize], cfg: &SvmConfig) -> Vec<f64> {
    let n = data.n_samples();
    let subsets = literal_rfe(data, all(data.n_features()), sizes, cfg);
    subsets
        .iter()
        .map(|s| {
            let mut e = 0;
            for b in 0..k {
                let train = rows_where(data, |j| fold_of[j] != b);
                let m = fit(&train, s, cfg);
                e += (0..n).filter(|&j| fold_of[j] == b).map(|j| wrong(&m, data, j)).sum::<usize>();
            }
            e as f64 / n as f64
        })
        .collect()
}

/// Fold-wise selection from the universe returned by `universe(train)`.
pub fn external_from(
    data: &LabeledDataset,
    fold_of: &[usize],
    k: usize,
    sizes: &[usize],
    cfg: &SvmConfig,
    universe: impl Fn(&LabeledDataset) -> Vec<usize>,
) -> Vec<f64> {
    let n = data.n_samples();
    let mut e = vec![0usize; sizes.len()];
    for b in 0..k {
        let train = rows_where(data, |j| fold_of[j] != b);
        let subsets = literal_rfe(&train, universe(&train), sizes, cfg);
        for (i, s) in subsets.iter().enumerate() {
            let m = fit(&train, s, cfg);
            e[i] += (0..n).filter(|&j| fold_of[j] == b).map(|j| wrong(&m, data, j)).sum::<usize>();
        }
    }
    e.into_iter().map(|c| c as f64 / n as f64).collect()
}

pub fn external(data: &LabeledDataset, fold_of: &[usize], k: usize, sizes: &[usize], cfg: &SvmConfig) -> Vec<f64> {
    external_from(data, fold_of, k, sizes, cfg, |t| all(t.n_features()))
}

pub fn pooled_t(data: &LabeledDataset, v: usize) -> f64 {
    let (mut s, mut c) = ([0.0; 2], [0.0; 2]);
    for j in 0..data.n_samples() {
        s[data.label(j)] += data.value(j, v);
        c[data.label(j)] += 1.0;
    }
    let m = [s[0] / c[0], s[1] / c[1]];
    let ss: f64 = (0..data.n_samples()).map(|j| (data.value(j, v) - m[data.label(j)]).powi(2)).sum();
    let sp = (ss / (c[0] + c[1] - 2.0)).sqrt();
    (m[0] - m[1]) / (sp * (1.0 / c[0] + 1.0 / c[1]).sqrt())
}

pub fn top_by_t(data: &LabeledDataset, g: usize) -> Vec<usize> {
    let t: Vec<f64> = (0..data.n_features()).map(|v| pooled_t(data, v).abs()).collect();
    let mut idx = all(data.n_features());
    idx.sort_by(|&a, &b| t[b].partial_cmp(&t[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(g);
    idx
}

pub fn screened_internal(
    data: &LabeledDataset,
    g: usize,
    fold_of: &[usize],
    k: usize,
    sizes: &[usize],
    cfg: &SvmConfig,
) -> Vec<f64> {
    let fixed = top_by_t(data, g);
    external_from(data, fold_of, k, sizes, cfg, |_| fixed.clone())
}

pub fn screened_external(
    data: &LabeledDataset,
    g: usize,
    fold_of: &[usize],
    k: usize,
    sizes: &[usize],
    cfg: &SvmConfig,
) -> Vec<f64> {
    external_from(data, fold_of, k, sizes, cfg, |t| top_by_t(t, g))
}

/// Outer estimate plus the inner choice per outer block.
pub fn double(
    data: &LabeledDataset,
    fold_of: &[usize],
    k: usize,
    sizes: &[usize],
    cfg: &SvmConfig,
) -> (f64, Vec<usize>) {
    let n = data.n_samples();
    let mut outer_errors = 0;
    let mut choices = Vec::new();
    for b in 0..k {
        let n_b = fold_of.iter().filter(|&&f| f == b).count();
        let mut inner = vec![0usize; sizes.len()];
        for c in (0..k).filter(|&c| c != b) {
            let train = rows_where(data, |j| fold_of[j] != b && fold_of[j] != c);
            let subsets = literal_rfe(&train, all(data.n_features()), sizes, cfg);
            for (i, s) in subsets.iter().enumerate() {
                let m = fit(&train, s, cfg);
                inner[i] += (0..n).filter(|&j| fold_of[j] == c).map(|j| wrong(&m, data, j)).sum::<usize>();
            }
        }
        let rates: Vec<f64> = inner.iter().map(|&e| e as f64 / (n - n_b) as f64).collect();
        let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let h = sizes.iter().zip(&rates).filter(|(_, &r)| r == min).map(|(&d, _)| d).min().unwrap();
        choices.push(h);

        let train = rows_where(data, |j| fold_of[j] != b);
        let subsets = literal_rfe(&train, all(data.n_features()), sizes, cfg);
        let s = &subsets[sizes.iter().position(|&d| d == h).unwrap()];
        let m = fit(&train, s, cfg);
        outer_errors += (0..n).filter(|&j| fold_of[j] == b).map(|j| wrong(&m, data, j)).sum::<usize>();
    }
    (outer_errors as f64 / n as f64, choices)
}

/// Misallocation counts out of 9 on the toy fixture, schedule order, under
/// the default SVM config.
pub const FROZEN_APPARENT: [usize; 3] = [0, 0, 1];
pub const FROZEN_INTERNAL: [usize; 3] = [1, 1, 1];
pub const FROZEN_EXTERNAL: [usize; 3] = [1, 1, 2];
pub const FROZEN_LOO: [usize; 3] = [1, 2, 2];
pub const FROZEN_SCREENED: [usize; 2] = [1, 2];
pub const FROZEN_DOUBLE: usize = 3;
pub const FROZEN_DOUBLE_CHOICES: [usize; 3] = [2, 4, 1];
/// Mean of three fold plans: 5/27, 6/27, 7/27.
pub const FROZEN_REPEATED: [f64; 3] = [0.1851851851851852, 0.2222222222222222, 0.25925925925925924];

pub fn ninths(counts: &[usize]) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / 9.0).collect()
}

/// Each library estimator against its literal counterpart on the toy
/// fixture: `(name, library value, literal value, frozen value)`.
/// `(name, library value, literal value, frozen value)`.
pub type Case = (&'static str, Vec<f64>, Vec<f64>, Vec<f64>);

pub fn equivalence_cases() -> Vec<Case> {
    use rfecv::cv::*;
    use rfecv::data::make_folds;
    use rfecv::derive_seed;
    use rfecv::selection::RfeSchedule;

    let data = toy();
    let cfg = SvmConfig::default();
    let folds = toy_folds();
    let loo = loo_folds();
    let full = RfeSchedule::new(SCHEDULE.to_vec()).unwrap();
    let screened = RfeSchedule::new(vec![2, 1]).unwrap();
    let ordered = |t: ErrorTable| -> Vec<f64> { t.rows.iter().rev().map(|r| r.rate).collect() };
    let mut cases: Vec<Case> = vec![(
        "apparent",
        ordered(apparent_table(&data, &full, &cfg).unwrap()),
        apparent(&data, &SCHEDULE, &cfg),
        ninths(&FROZEN_APPARENT),
    )];
    cases.push((
        "leave-one-out external",
        ordered(external_cv(&data, &loo, &full, &cfg).unwrap()),
        external(&data, loo.assignment(), 9, &SCHEDULE, &cfg),
        ninths(&FROZEN_LOO),
    ));
    cases.push((
        "internal",
        ordered(internal_cv_table(&data, &folds, &full, &cfg).unwrap()),
        internal(&data, folds.assignment(), K, &SCHEDULE, &cfg),
        ninths(&FROZEN_INTERNAL),
    ));
    cases.push((
        "K-fold external",
        ordered(external_cv(&data, &folds, &full, &cfg).unwrap()),
        external(&data, folds.assignment(), K, &SCHEDULE, &cfg),
        ninths(&FROZEN_EXTERNAL),
    ));

    let lib = double_cv(&data, K, &full, &cfg, SEED).unwrap();
    let plan = make_folds(&data, K, SEED).unwrap();
    let (est, choices) = double(&data, plan.assignment(), K, &SCHEDULE, &cfg);
    let as_f = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    cases.push(("double", vec![lib.estimate], vec![est], ninths(&[FROZEN_DOUBLE])));
    cases.push(("double inner sizes", as_f(&lib.inner_choices), as_f(&choices), as_f(&FROZEN_DOUBLE_CHOICES)));

    cases.push((
        "screened internal",
        ordered(screened_internal_cv(&data, 2, &folds, &screened, &cfg).unwrap()),
        screened_internal(&data, 2, folds.assignment(), K, &[2, 1], &cfg),
        ninths(&FROZEN_SCREENED),
    ));
    cases.push((
        "screened external",
        ordered(screened_external_cv(&data, 2, &folds, &screened, &cfg).unwrap()),
        screened_external(&data, 2, folds.assignment(), K, &[2, 1], &cfg),
        ninths(&FROZEN_SCREENED),
    ));

    let reps = 3;
    let lib = ordered(repeated_cv(&data, K, &full, &cfg, reps, SEED).unwrap());
    let mut lit = vec![0.0; SCHEDULE.len()];
    for r in 0..reps {
        let plan = make_folds(&data, K, derive_seed(SEED, r as u64)).unwrap();
        for (acc, e) in lit.iter_mut().zip(external(&data, plan.assignment(), K, &SCHEDULE, &cfg)) {
            *acc += e;
        }
    }
    let lit: Vec<f64> = lit.into_iter().map(|s| s / reps as f64).collect();
    cases.push(("repeated (R = 3)", lib, lit, FROZEN_REPEATED.to_vec()));
    cases
}
