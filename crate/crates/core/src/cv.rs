//! Error-rate estimators: apparent, internal and external cross-validation,
//! best-size selection, double cross-validation, prescreened variants,
//! repeated cross-validation and the holdout comparison.
//!
//! Every estimator pools misallocations over folds before dividing by the
//! sample count, so unrepeated rates are exact multiples of `1/n`. Folds
//! (and repetitions) run through [`crate::par`], and their results are
//! combined in fold order, which keeps parallel runs bit-identical to
//! sequential ones.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{train_svm, ClassifierError, Classify, SvmConfig};
use crate::data::{make_folds, DataError, FoldPlan, LabeledDataset};
use crate::par;
use crate::seed::{derive_seed, rng};
use crate::selection::{rfe_path, rfe_path_from, rfe_schedule, t_screen, GeneSubset, RfeSchedule, SelectionError};

#[derive(Debug, Error)]
pub enum CvError {
    #[error("training split for fold {fold} contains a single class")]
    FoldCollapse { fold: usize },
    #[error("degenerate holdout split: {0}")]
    DegenerateSplit(String),
    #[error("size {0} is not in the RFE schedule")]
    SizeNotInSchedule(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("selection: {0}")]
    Selection(#[from] SelectionError),
    #[error("classifiers: {0}")]
    Classifier(#[from] ClassifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Apparent,
    Internal,
    External,
    Double,
    ScreenedInternal,
    ScreenedExternal,
    LeakyHoldout,
    Repeated,
}

impl Protocol {
    pub const ALL: [Protocol; 8] = [
        Protocol::Apparent,
        Protocol::Internal,
        Protocol::External,
        Protocol::Double,
        Protocol::ScreenedInternal,
        Protocol::ScreenedExternal,
        Protocol::LeakyHoldout,
        Protocol::Repeated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Apparent => "apparent",
            Protocol::Internal => "internal",
            Protocol::External => "external",
            Protocol::Double => "double",
            Protocol::ScreenedInternal => "screened-internal",
            Protocol::ScreenedExternal => "screened-external",
            Protocol::LeakyHoldout => "leaky-holdout",
            Protocol::Repeated => "repeated",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL.into_iter().find(|p| p.as_str() == s).ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub size: usize,
    pub rate: f64,
}

/// Estimated error rate per retained size, ascending in size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub protocol: Protocol,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    fn from_counts(
        protocol: Protocol,
        k: usize,
        seed: u64,
        schedule: &RfeSchedule,
        counts: &[usize],
        denom: usize,
    ) -> Self {
        let mut rows: Vec<ErrorRow> = schedule
            .sizes()
            .iter()
            .zip(counts)
            .map(|(&size, &c)| ErrorRow { size, rate: c as f64 / denom as f64 })
            .collect();
        rows.sort_by_key(|r| r.size);
        Self { protocol, k, seed, rows }
    }

    pub fn rate(&self, d: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.size == d).map(|r| r.rate)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.size).collect()
    }

    /// Rate at [`select_best_size`].
    pub fn best_rate(&self) -> Option<f64> {
        select_best_size(self).and_then(|d| self.rate(d))
    }

    pub const HEADER: &'static str = "protocol\tK\tseed\td\terror_rate";

    /// Tab-delimited rows `protocol, K, seed, d, error_rate`.
    pub fn write_to<W: Write>(&self, mut w: W, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "{}", Self::HEADER)?;
        }
        for r in &self.rows {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", self.protocol, self.k, self.seed, r.size, r.rate)?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf, true).expect("writing to a Vec");
        String::from_utf8(buf).expect("utf-8")
    }
}

/// Smallest size attaining the minimum estimate.
pub fn select_best_size(table: &ErrorTable) -> Option<usize> {
    let min = table.rows.iter().map(|r| r.rate).min_by(f64::total_cmp)?;
    table.rows.iter().filter(|r| r.rate == min).map(|r| r.size).min()
}

/// Feature subset chosen inside one training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSelection {
    pub repetition: usize,
    pub fold: usize,
    pub size: usize,
    pub subset: GeneSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub table: ErrorTable,
    pub selections: Vec<FoldSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleCvResult {
    pub estimate: f64,
    pub misallocated: usize,
    /// Inner best size per outer fold.
    pub inner_choices: Vec<usize>,
    /// Inner (K−1)-fold tables, rates normalized by `n − n_k`.
    pub inner_tables: Vec<ErrorTable>,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutParams {
    pub fraction: f64,
    /// Size of the final subset.
    pub size: usize,
    /// Prescreen to this many features before RFE; equal to `p` disables it.
    pub screen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub leaky_rate: f64,
    pub clean_rate: f64,
    pub n_test: usize,
    pub leaky_subset: GeneSubset,
    pub clean_subset: GeneSubset,
    pub seed: u64,
}

fn check_plan(data: &LabeledDataset, folds: &FoldPlan) -> Result<(), CvError> {
    if folds.assignment().len() != data.n_samples() {
        return Err(CvError::InvalidParameter(format!(
            "fold plan covers {} samples, data has {}",
            folds.assignment().len(),
            data.n_samples()
        )));
    }
    Ok(())
}

fn training_split(data: &LabeledDataset, rows: &[usize], fold: usize) -> Result<LabeledDataset, CvError> {
    let split = data.select_rows(rows);
    if split.class_counts().contains(&0) {
        return Err(CvError::FoldCollapse { fold });
    }
    Ok(split)
}

fn misallocated(rule: &impl Classify, data: &LabeledDataset, rows: &[usize]) -> Result<usize, CvError> {
    let mut errors = 0;
    for &j in rows {
        if rule.classify(data.row(j))? != data.label(j) {
            errors += 1;
        }
    }
    Ok(errors)
}

fn add_counts(total: &mut [usize], part: &[usize]) {
    for (t, p) in total.iter_mut().zip(part) {
        *t += p;
    }
}

/// Proportion of the training samples misallocated by the rule fitted on
/// all of them.
pub fn apparent_error(data: &LabeledDataset, subset: &GeneSubset, config: &SvmConfig) -> Result<f64, CvError> {
    let model = train_svm(data, subset, config)?;
    let all: Vec<usize> = (0..data.n_samples()).collect();
    Ok(misallocated(&model, data, &all)? as f64 / data.n_samples() as f64)
}

/// Apparent error of every subset on the full-data RFE path.
pub fn apparent_table(
    data: &LabeledDataset,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<ErrorTable, CvError> {
    let path = rfe_path(data, schedule, config)?;
    let all: Vec<usize> = (0..data.n_samples()).collect();
    let counts = path.steps.iter().map(|s| misallocated(&s.model, data, &all)).collect::<Result<Vec<_>, _>>()?;
    Ok(ErrorTable::from_counts(Protocol::Apparent, 1, 0, schedule, &counts, data.n_samples()))
}

/// Internal CV at every schedule size: RFE once on the full data, then each
/// fold refits on its training samples restricted to that same subset.
pub fn internal_cv_table(
    data: &LabeledDataset,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<ErrorTable, CvError> {
    check_plan(data, folds)?;
    let path = rfe_path(data, schedule, config)?;
    let per_fold = par::try_map_indexed(folds.k(), |k| {
        let train = training_split(data, &folds.training(&[k]), k)?;
        let test = folds.block(k);
        path.steps
            .iter()
            .map(|step| {
                let model = train_svm(&train, &step.subset, config)?;
                misallocated(&model, data, &test)
            })
            .collect::<Result<Vec<_>, CvError>>()
    })?;
    let mut counts = vec![0; schedule.sizes().len()];
    for c in &per_fold {
        add_counts(&mut counts, c);
    }
    Ok(ErrorTable::from_counts(Protocol::Internal, folds.k(), folds.seed(), schedule, &counts, data.n_samples()))
}

/// Internal CV rate at size `d`.
pub fn internal_cv(
    data: &LabeledDataset,
    folds: &FoldPlan,
    d: usize,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<f64, CvError> {
    if !schedule.contains(d) {
        return Err(CvError::SizeNotInSchedule(d));
    }
    Ok(internal_cv_table(data, folds, schedule, config)?.rate(d).expect("size in schedule"))
}

/// Runs RFE inside every training split, starting from the universe
/// `universe(train)`, and counts held-out misallocations per size.
fn fold_wise<U>(
    data: &LabeledDataset,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
    universe: U,
) -> Result<(Vec<usize>, Vec<FoldSelection>), CvError>
where
    U: Fn(&LabeledDataset) -> Result<GeneSubset, CvError> + Sync,
{
    check_plan(data, folds)?;
    let per_fold = par::try_map_indexed(folds.k(), |k| {
        let train = training_split(data, &folds.training(&[k]), k)?;
        let path = rfe_path_from(&train, &universe(&train)?, schedule, config)?;
        let test = folds.block(k);
        let mut counts = Vec::with_capacity(path.steps.len());
        let mut selections = Vec::with_capacity(path.steps.len());
        for step in path.steps {
            counts.push(misallocated(&step.model, data, &test)?);
            selections.push(FoldSelection { repetition: 0, fold: k, size: step.size, subset: step.subset });
        }
        Ok::<_, CvError>((counts, selections))
    })?;
    let mut counts = vec![0; schedule.sizes().len()];
    let mut selections = Vec::new();
    for (c, s) in per_fold {
        add_counts(&mut counts, &c);
        selections.extend(s);
    }
    Ok((counts, selections))
}

/// External CV with the per-fold selected subsets.
pub fn external_cv_detailed(
    data: &LabeledDataset,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<CvOutcome, CvError> {
    let p = data.n_features();
    let (counts, selections) = fold_wise(data, folds, schedule, config, |_| Ok(GeneSubset::all(p)))?;
    let table =
        ErrorTable::from_counts(Protocol::External, folds.k(), folds.seed(), schedule, &counts, data.n_samples());
    Ok(CvOutcome { table, selections })
}

/// External CV: the full RFE is rerun from all features inside every
/// training split. With `K = n` this is leave-one-out.
pub fn external_cv(
    data: &LabeledDataset,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<ErrorTable, CvError> {
    Ok(external_cv_detailed(data, folds, schedule, config)?.table)
}

fn check_screen(data: &LabeledDataset, g: usize, schedule: &RfeSchedule) -> Result<(), CvError> {
    if g < 1 || g > data.n_features() {
        return Err(SelectionError::InvalidScreenSize { g, p: data.n_features() }.into());
    }
    if schedule.first() > g {
        return Err(SelectionError::ScheduleTooLarge { first: schedule.first(), available: g }.into());
    }
    Ok(())
}

/// The top `g` features by |t| are fixed once on the full data; RFE is
/// then cross-validated inside that universe.
pub fn screened_internal_cv_detailed(
    data: &LabeledDataset,
    g: usize,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<CvOutcome, CvError> {
    check_screen(data, g, schedule)?;
    let universe = t_screen(data, g)?;
    let (counts, selections) = fold_wise(data, folds, schedule, config, |_| Ok(universe.clone()))?;
    let table = ErrorTable::from_counts(
        Protocol::ScreenedInternal,
        folds.k(),
        folds.seed(),
        schedule,
        &counts,
        data.n_samples(),
    );
    Ok(CvOutcome { table, selections })
}

pub fn screened_internal_cv(
    data: &LabeledDataset,
    g: usize,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<ErrorTable, CvError> {
    Ok(screened_internal_cv_detailed(data, g, folds, schedule, config)?.table)
}

/// The screen is redone on each training split from all features, then
/// RFE runs inside that per-fold universe.
pub fn screened_external_cv_detailed(
    data: &LabeledDataset,
    g: usize,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<CvOutcome, CvError> {
    check_screen(data, g, schedule)?;
    let (counts, selections) = fold_wise(data, folds, schedule, config, |train| Ok(t_screen(train, g)?))?;
    let table = ErrorTable::from_counts(
        Protocol::ScreenedExternal,
        folds.k(),
        folds.seed(),
        schedule,
        &counts,
        data.n_samples(),
    );
    Ok(CvOutcome { table, selections })
}

pub fn screened_external_cv(
    data: &LabeledDataset,
    g: usize,
    folds: &FoldPlan,
    schedule: &RfeSchedule,
    config: &SvmConfig,
) -> Result<ErrorTable, CvError> {
    Ok(screened_external_cv_detailed(data, g, folds, schedule, config)?.table)
}

/// Two-layer CV. For each outer block `B_k`, the best size `h_k` is chosen
/// by a (K−1)-fold external CV over the remaining blocks (each inner trial
/// drops `B_k` and one `B_k'`, tests on `B_k'`); RFE is then rerun on all
/// blocks but `B_k` and its size-`h_k` rule tested on `B_k`.
pub fn double_cv(
    data: &LabeledDataset,
    k: usize,
    schedule: &RfeSchedule,
    config: &SvmConfig,
    seed: u64,
) -> Result<DoubleCvResult, CvError> {
    if k < 3 {
        return Err(CvError::InvalidParameter(format!("double CV needs K >= 3, got {k}")));
    }
    let plan = make_folds(data, k, seed)?;
    let n = data.n_samples();
    let sizes = schedule.sizes().len();

    let outer = par::try_map_indexed(k, |ko| {
        let inner_blocks: Vec<usize> = (0..k).filter(|&b| b != ko).collect();
        let inner = par::try_map_indexed(inner_blocks.len(), |ii| {
            let kp = inner_blocks[ii];
            let train = training_split(data, &plan.training(&[ko, kp]), ko)?;
            let path = rfe_path(&train, schedule, config)?;
            let test = plan.block(kp);
            path.steps.iter().map(|s| misallocated(&s.model, data, &test)).collect::<Result<Vec<_>, CvError>>()
        })?;
        let mut counts = vec![0; sizes];
        for c in &inner {
            add_counts(&mut counts, c);
        }
        let inner_table =
            ErrorTable::from_counts(Protocol::External, k - 1, seed, schedule, &counts, n - plan.block_sizes()[ko]);
        let h = select_best_size(&inner_table).expect("nonempty schedule");

        let train = training_split(data, &plan.training(&[ko]), ko)?;
        let path = rfe_path(&train, schedule, config)?;
        let step = path.step(h).expect("chosen size is on the path");
        let errors = misallocated(&step.model, data, &plan.block(ko))?;
        Ok::<_, CvError>((errors, h, inner_table))
    })?;

    let misallocated: usize = outer.iter().map(|o| o.0).sum();
    Ok(DoubleCvResult {
        estimate: misallocated as f64 / n as f64,
        misallocated,
        inner_choices: outer.iter().map(|o| o.1).collect(),
        inner_tables: outer.into_iter().map(|o| o.2).collect(),
        k,
        seed,
    })
}

/// Seed of repetition `r` under master seed `seed`.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, r as u64)
}

/// External CV averaged over `reps` fold plans seeded by [`repetition_seed`].
pub fn repeated_cv_detailed(
    data: &LabeledDataset,
    k: usize,
    schedule: &RfeSchedule,
    config: &SvmConfig,
    reps: usize,
    seed: u64,
) -> Result<CvOutcome, CvError> {
    if reps < 1 {
        return Err(CvError::InvalidParameter("need at least one repetition".into()));
    }
    let runs = par::try_map_indexed(reps, |r| {
        let plan = make_folds(data, k, repetition_seed(seed, r))?;
        external_cv_detailed(data, &plan, schedule, config)
    })?;
    let mut rows = runs[0].table.rows.clone();
    for row in &mut rows {
        row.rate = runs.iter().map(|o| o.table.rate(row.size).expect("same schedule")).sum::<f64>() / reps as f64;
    }
    let mut selections = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        selections.extend(run.selections.into_iter().map(|s| FoldSelection { repetition: r, ..s }));
    }
    Ok(CvOutcome { table: ErrorTable { protocol: Protocol::Repeated, k, seed, rows }, selections })
}

pub fn repeated_cv(
    data: &LabeledDataset,
    k: usize,
    schedule: &RfeSchedule,
    config: &SvmConfig,
    reps: usize,
    seed: u64,
) -> Result<ErrorTable, CvError> {
    Ok(repeated_cv_detailed(data, k, schedule, config, reps, seed)?.table)
}

/// Stratified holdout: `round(fraction · n_i)` samples of each class go to
/// the test side, after a shuffle seeded from `(seed, class)`.
pub fn holdout_split(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), CvError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CvError::InvalidParameter(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..data.n_classes() {
        let mut members: Vec<usize> = (0..data.n_samples()).filter(|&i| data.label(i) == class).collect();
        members.shuffle(&mut rng(derive_seed(seed, class as u64)));
        let m = (fraction * members.len() as f64).round() as usize;
        if m == 0 || m == members.len() {
            return Err(CvError::DegenerateSplit(format!(
                "class {:?} would be missing from one side",
                data.class_names()[class]
            )));
        }
        test.extend_from_slice(&members[..m]);
        train.extend_from_slice(&members[m..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn select_for_holdout(
    data: &LabeledDataset,
    params: &HoldoutParams,
    config: &SvmConfig,
) -> Result<GeneSubset, CvError> {
    let universe = if params.screen < data.n_features() {
        t_screen(data, params.screen)?
    } else {
        GeneSubset::all(data.n_features())
    };
    let schedule = rfe_schedule(params.screen)?.stopping_at(params.size)?;
    let path = rfe_path_from(data, &universe, &schedule, config)?;
    Ok(path.steps.last().expect("nonempty path").subset.clone())
}

/// Holdout error when selection (screen to `G`, then RFE to `d`) sees all
/// samples, versus when it sees only the training side. The classifier is
/// always trained on the training side and scored on the test side.
pub fn leaky_holdout(
    data: &LabeledDataset,
    params: &HoldoutParams,
    config: &SvmConfig,
    seed: u64,
) -> Result<HoldoutResult, CvError> {
    let p = data.n_features();
    if params.screen < 1 || params.screen > p {
        return Err(SelectionError::InvalidScreenSize { g: params.screen, p }.into());
    }
    if params.size < 1 || params.size > params.screen {
        return Err(CvError::InvalidParameter(format!("size {} outside 1..={}", params.size, params.screen)));
    }
    let (train_rows, test_rows) = holdout_split(data, params.fraction, seed)?;
    let train = training_split(data, &train_rows, 0)?;

    let leaky_subset = select_for_holdout(data, params, config)?;
    let clean_subset = select_for_holdout(&train, params, config)?;
    let rate = |subset: &GeneSubset| -> Result<f64, CvError> {
        let model = train_svm(&train, subset, config)?;
        Ok(misallocated(&model, data, &test_rows)? as f64 / test_rows.len() as f64)
    };
    Ok(HoldoutResult {
        leaky_rate: rate(&leaky_subset)?,
        clean_rate: rate(&clean_subset)?,
        n_test: test_rows.len(),
        leaky_subset,
        clean_subset,
        seed,
    })
}
