//! Property checks shared by the proptest suite and the acceptance runner.
//! Each returns `Err` with a description when the property fails.

use proptest::prelude::*;
use rfecv::classifiers::{solve_dual, train_svm, SvmConfig, SvmModel};
use rfecv::cv::external_cv;
use rfecv::data::{make_folds, synth_null, LabeledDataset, SyntheticSpec};
use rfecv::oracle::{bayes_classify, conditional_rates, optimal_error, overall_error, posterior, BayesRule};
use rfecv::runner::{run_experiment, InputSource, RunConfig};
use rfecv::selection::{rfe_path, rfe_schedule, t_screen, GeneSubset};
use rfecv::{par, Protocol};

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn labels_from_sizes(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect()
}

/// Dataset with the given class sizes and values drawn from `values`.
pub fn dataset(sizes: &[usize], p: usize, values: &[f64]) -> LabeledDataset {
    let labels = labels_from_sizes(sizes);
    let rows: Vec<Vec<f64>> =
        (0..labels.len()).map(|i| (0..p).map(|v| values[(i * p + v) % values.len()]).collect()).collect();
    LabeledDataset::from_rows(&rows, labels, sizes.len()).unwrap()
}

pub fn fold_stratification(sizes: &[usize], k: usize, seed: u64) -> Check {
    let n: usize = sizes.iter().sum();
    let data = dataset(sizes, 1, &[0.0]);
    let plan = make_folds(&data, k, seed).map_err(|e| e.to_string())?;
    ensure(plan == make_folds(&data, k, seed).unwrap(), || "fold plan not deterministic".into())?;
    ensure(plan.assignment().len() == n, || "assignment length".into())?;
    ensure(plan.block_sizes().iter().all(|&b| b > 0), || format!("empty block in {:?}", plan.block_sizes()))?;
    for class in 0..sizes.len() {
        let per_block: Vec<usize> =
            (0..k).map(|b| plan.block(b).iter().filter(|&&j| data.label(j) == class).count()).collect();
        let spread = per_block.iter().max().unwrap() - per_block.iter().min().unwrap();
        ensure(spread <= 1, || format!("class {class} spread {spread} across blocks {per_block:?}"))?;
    }
    Ok(())
}

pub fn rfe_nesting(data: &LabeledDataset) -> Check {
    let schedule = rfe_schedule(data.n_features()).unwrap();
    let path = rfe_path(data, &schedule, &SvmConfig::default()).map_err(|e| e.to_string())?;
    ensure(path.sizes() == schedule.sizes(), || "path sizes differ from schedule".into())?;
    for pair in path.steps.windows(2) {
        ensure(pair[1].subset.is_subset_of(&pair[0].subset), || {
            format!("subset at {} not inside subset at {}", pair[1].size, pair[0].size)
        })?;
        ensure(pair[1].subset.len() == pair[1].size, || "subset size".into())?;
    }
    Ok(())
}

pub fn t_location_invariance(data: &LabeledDataset, feature: usize, shift: f64, g: usize) -> Check {
    let mut rows: Vec<Vec<f64>> = (0..data.n_samples()).map(|i| data.row(i).to_vec()).collect();
    for r in &mut rows {
        r[feature] += shift;
    }
    let shifted = LabeledDataset::from_rows(&rows, data.labels().to_vec(), data.n_classes()).unwrap();
    let t0 = rfecv::selection::t_statistics(data).map_err(|e| e.to_string())?;
    let t1 = rfecv::selection::t_statistics(&shifted).map_err(|e| e.to_string())?;
    for (a, b) in t0.iter().zip(&t1) {
        ensure(a == b || (a - b).abs() <= 1e-9 * (1.0 + a.abs()), || format!("t moved {a} -> {b}"))?;
    }
    // Rankings can only be compared away from near ties.
    let mut mags: Vec<f64> = t0.iter().map(|t| t.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let separated = mags.windows(2).all(|w| w[0] - w[1] > 1e-6);
    if separated {
        ensure(t_screen(data, g).unwrap() == t_screen(&shifted, g).unwrap(), || "screen changed".into())?;
    }
    Ok(())
}

pub fn dual_feasibility(data: &LabeledDataset, cost: f64) -> Check {
    let n = data.n_samples();
    let gram: Vec<f64> =
        (0..n * n).map(|ij| data.row(ij / n).iter().zip(data.row(ij % n)).map(|(a, b)| a * b).sum()).collect();
    let signs: Vec<f64> = data.labels().iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
    let sol = solve_dual(&gram, &signs, &SvmConfig { cost, ..SvmConfig::default() });
    for &a in &sol.alpha {
        ensure((0.0..=cost).contains(&a), || format!("alpha {a} outside [0, {cost}]"))?;
    }
    let balance: f64 = sol.alpha.iter().zip(&signs).map(|(a, s)| a * s).sum();
    ensure(balance.abs() <= 1e-9 * cost.max(1.0) * n as f64, || format!("sum alpha*s = {balance}"))
}

pub fn training_determinism(data: &LabeledDataset) -> Check {
    let all = GeneSubset::all(data.n_features());
    let a = train_svm(data, &all, &SvmConfig::default()).map_err(|e| e.to_string())?;
    let b = train_svm(data, &all, &SvmConfig::default()).unwrap();
    ensure(a == b, || "two fits differ".into())
}

pub fn prediction_scale_invariance(intercept: f64, weights: &[f64], scale: f64, y: &[f64]) -> Check {
    let p = weights.len();
    let m = SvmModel::from_parts(intercept, weights.to_vec(), (0..p).collect(), p);
    let s = SvmModel::from_parts(intercept * scale, weights.iter().map(|w| w * scale).collect(), (0..p).collect(), p);
    let f = m.decision_value(y).unwrap();
    if f.abs() < 1e-9 {
        return Ok(());
    }
    ensure(m.predict(y).unwrap() == s.predict(y).unwrap(), || format!("scale {scale} flips f = {f}"))
}

pub fn spec_strategy() -> impl Strategy<Value = SyntheticSpec> {
    (2usize..=3, 1usize..=3).prop_flat_map(|(g, p)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, p), g),
            0.2f64..4.0,
            prop::collection::vec(0.05f64..1.0, g),
        )
            .prop_map(move |(means, variance, w)| {
                let total: f64 = w.iter().sum();
                let mut priors: Vec<f64> = w.iter().map(|x| x / total).collect();
                let rest: f64 = priors[1..].iter().sum();
                priors[0] = 1.0 - rest;
                SyntheticSpec { means, variance, priors, class_sizes: vec![1; g], seed: 0 }
            })
    })
}

pub fn posterior_normalization(spec: &SyntheticSpec, y: &[f64]) -> Check {
    let t = posterior(spec, y).map_err(|e| e.to_string())?;
    let sum: f64 = t.iter().sum();
    ensure((sum - 1.0).abs() <= 1e-12, || format!("posterior sums to {sum}"))?;
    ensure(t.iter().all(|&x| (0.0..=1.0).contains(&x)), || format!("{t:?}"))
}

/// Log-density scores computed directly; returns the best class and the
/// margin to the runner-up.
fn direct_scores(spec: &SyntheticSpec, y: &[f64]) -> (usize, f64) {
    let scores: Vec<f64> = spec
        .means
        .iter()
        .zip(&spec.priors)
        .map(|(mu, &pi)| pi.ln() - mu.iter().zip(y).map(|(m, v)| (v - m).powi(2)).sum::<f64>() / (2.0 * spec.variance))
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    (order[0], scores[order[0]] - scores[order[1]])
}

pub fn bayes_argmax(spec: &SyntheticSpec, y: &[f64]) -> Check {
    let got = bayes_classify(spec, y).map_err(|e| e.to_string())?;
    let t = posterior(spec, y).unwrap();
    let best = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ensure(t[got] == best && t[..got].iter().all(|&x| x < best), || format!("{got} is not the first argmax of {t:?}"))?;
    let (direct, margin) = direct_scores(spec, y);
    ensure(margin < 1e-9 || direct == got, || format!("direct argmax {direct}, bayes_classify {got}"))
}

pub fn prior_scaling(spec: &SyntheticSpec, y: &[f64], c: f64) -> Check {
    let scaled: Vec<f64> = spec.priors.iter().map(|p| p * c).collect();
    let total: f64 = scaled.iter().sum();
    let mut priors: Vec<f64> = scaled.iter().map(|p| p / total).collect();
    let rest: f64 = priors[1..].iter().sum();
    priors[0] = 1.0 - rest;
    let other = SyntheticSpec { priors, ..spec.clone() };
    if direct_scores(spec, y).1 < 1e-9 {
        return Ok(());
    }
    let (a, b) = (bayes_classify(spec, y).unwrap(), bayes_classify(&other, y).unwrap());
    ensure(a == b, || format!("scaling priors by {c} moved the class {a} -> {b}"))
}

pub fn rate_rows_sum_to_one(spec: &SyntheticSpec, seed: u64) -> Check {
    let rule = BayesRule::new(spec).map_err(|e| e.to_string())?;
    let m = conditional_rates(&rule, spec, 1000, seed).map_err(|e| e.to_string())?;
    for row in &m.rates {
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() <= 1e-12, || format!("row sums to {s}"))?;
    }
    Ok(())
}

pub fn bayes_rates_near_optimum(spec: &SyntheticSpec, mc: usize, seed: u64) -> Check {
    let rule = BayesRule::new(spec).unwrap();
    let m = conditional_rates(&rule, spec, mc, seed).unwrap();
    let e = overall_error(&m, &spec.priors).unwrap();
    let opt = optimal_error(spec).unwrap();
    ensure((e - opt).abs() <= 3.0 / (mc as f64).sqrt(), || format!("MC {e} vs closed form {opt}"))
}

pub fn end_to_end_determinism(seed: u64, protocol: Protocol) -> Check {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outputs: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let config = RunConfig {
                input: InputSource::SynthNull { n: 16, p: 12, class_sizes: vec![8, 8] },
                protocol,
                folds: 4,
                size: Some(2),
                screen: Some(6),
                reps: 2,
                holdout_fraction: 0.5,
                schedule_floor: None,
                svm: SvmConfig::default(),
                seed,
                out_dir: d.path().to_path_buf(),
            };
            run_experiment(&config).map_err(|e| e.to_string())?;
            let name = match protocol {
                Protocol::Double => "double_cv.tsv",
                Protocol::LeakyHoldout => "holdout.tsv",
                _ => "table.tsv",
            };
            std::fs::read(d.path().join(name)).map_err(|e| e.to_string())
        })
        .collect::<Result<_, String>>()?;
    ensure(outputs[0] == outputs[1], || format!("{protocol} outputs differ between runs"))
}

pub fn parallel_matches_sequential(seed: u64) -> Check {
    let data = synth_null(20, 16, &[10, 10], seed).unwrap();
    let folds = make_folds(&data, 5, seed).unwrap();
    let schedule = rfe_schedule(16).unwrap();
    let cfg = SvmConfig::default();
    let a = external_cv(&data, &folds, &schedule, &cfg).map_err(|e| e.to_string())?;
    let b = par::sequential(|| external_cv(&data, &folds, &schedule, &cfg)).unwrap();
    ensure(a == b, || "parallel and sequential tables differ".into())
}
