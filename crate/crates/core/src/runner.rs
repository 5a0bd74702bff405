//! Experiment configuration, orchestration and result files.
//!
//! A run is described by a [`RunConfig`], which can be read from a plain
//! `key = value` file (see [`CONFIG_KEYS`]) and overridden key by key.
//! [`run_experiment`] produces a [`RunReport`], written as `report.json`
//! next to flat tab-delimited tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::{ClassifierError, SvmConfig};
use crate::cv::{
    apparent_table, double_cv, external_cv_detailed, internal_cv_table, leaky_holdout, repeated_cv_detailed,
    screened_external_cv_detailed, screened_internal_cv_detailed, select_best_size, CvError, DoubleCvResult,
    ErrorTable, FoldSelection, HoldoutParams, HoldoutResult, Protocol,
};
use crate::data::{
    load_dataset, make_folds, synth_gaussian, synth_null, DataError, LabeledDataset, Layout, SyntheticSpec,
};
use crate::seed::derive_seed;
use crate::selection::{rfe_schedule, RfeSchedule, SelectionError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("classifiers: {0}")]
    Classifier(#[from] ClassifierError),
    #[error("selection: {0}")]
    Selection(#[from] SelectionError),
    #[error("cv_engine: {0}")]
    Cv(#[from] CvError),
    #[error("report: {0}")]
    Report(#[from] serde_json::Error),
    #[error("size {0} is absent from the report's fold selections")]
    SizeAbsent(usize),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, RunError> {
    Err(RunError::Config(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InputSource {
    File { path: PathBuf, layout: Layout },
    SynthNull { n: usize, p: usize, class_sizes: Vec<usize> },
    SynthGaussian { p: usize, informative: usize, separation: f64, variance: f64, class_sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: InputSource,
    pub protocol: Protocol,
    pub folds: usize,
    pub size: Option<usize>,
    pub screen: Option<usize>,
    pub reps: usize,
    pub holdout_fraction: f64,
    /// Switch from halving to single-feature steps at this size.
    pub schedule_floor: Option<usize>,
    pub svm: SvmConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// Keys accepted in a config file, with their meaning.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("input", "path of a delimited dataset file"),
    ("layout", "rows-are-samples (default) or rows-are-features"),
    ("synth", "null or gaussian, instead of input"),
    ("n", "synthetic sample count"),
    ("p", "synthetic feature count"),
    ("class_sizes", "comma-separated synthetic class sizes (default: n split in half)"),
    ("separation", "gaussian: distance between the class means (default 2)"),
    ("informative", "gaussian: number of axes carrying the separation (default 1)"),
    ("variance", "gaussian: common per-feature variance (default 1)"),
    ("protocol", "apparent, internal, external, double, screened-internal, screened-external, leaky-holdout, repeated"),
    ("folds", "fold count K (default 10)"),
    ("size", "retained size d (leaky-holdout)"),
    ("screen", "prescreen size G (screened protocols, leaky-holdout)"),
    ("reps", "repetitions R (repeated, default 10)"),
    ("holdout_fraction", "test share of the holdout split (default 0.5)"),
    ("schedule_floor", "single-step RFE below this size (default off)"),
    ("cost", "SVM cost C (default 1)"),
    ("tolerance", "SVM dual gap tolerance (default 1e-6)"),
    ("max_passes", "SVM pair-update cap"),
    ("seed", "master seed (default 0)"),
    ("out", "output directory"),
];

pub const DEFAULT_OUT_DIR: &str = "rfecv-out";

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, RunError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return config_err(format!("line {}: expected key = value", i + 1));
        };
        let key = k.trim().to_string();
        if !CONFIG_KEYS.iter().any(|(name, _)| *name == key) {
            return config_err(format!("line {}: unknown key {key:?}", i + 1));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, RunError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.parse::<T>().map(Some).or_else(|_| config_err(format!("{key}: cannot parse {v:?}"))),
    }
}

fn get_or<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, RunError> {
    Ok(get(map, key)?.unwrap_or(default))
}

impl RunConfig {
    /// Builds and validates a config from key-value pairs.
    pub fn from_pairs(map: &BTreeMap<String, String>) -> Result<Self, RunError> {
        if let Some(key) = map.keys().find(|k| !CONFIG_KEYS.iter().any(|(name, _)| name == k)) {
            return config_err(format!("unknown key {key:?}"));
        }
        let class_sizes = |n: usize| -> Result<Vec<usize>, RunError> {
            match map.get("class_sizes") {
                None => Ok(vec![n / 2, n - n / 2]),
                Some(v) => v
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .or_else(|_| config_err(format!("class_sizes: cannot parse {v:?}"))),
            }
        };
        let input = match (map.get("input"), map.get("synth").map(String::as_str)) {
            (Some(_), Some(_)) => return config_err("give either input or synth, not both"),
            (None, None) => return config_err("no input: set input or synth"),
            (Some(path), None) => InputSource::File {
                path: PathBuf::from(path),
                layout: get_or(map, "layout", Layout::RowsAreSamples).or_else(|_| config_err("bad layout"))?,
            },
            (None, Some(kind)) => {
                let n: usize = get(map, "n")?.ok_or_else(|| RunError::Config("synth needs n".into()))?;
                let p: usize = get(map, "p")?.ok_or_else(|| RunError::Config("synth needs p".into()))?;
                match kind {
                    "null" => InputSource::SynthNull { n, p, class_sizes: class_sizes(n)? },
                    "gaussian" => InputSource::SynthGaussian {
                        p,
                        informative: get_or(map, "informative", 1)?,
                        separation: get_or(map, "separation", 2.0)?,
                        variance: get_or(map, "variance", 1.0)?,
                        class_sizes: class_sizes(n)?,
                    },
                    other => return config_err(format!("unknown synth kind {other:?}")),
                }
            }
        };
        let defaults = SvmConfig::default();
        let config = RunConfig {
            input,
            protocol: get_or(map, "protocol", Protocol::External)?,
            folds: get_or(map, "folds", 10)?,
            size: get(map, "size")?,
            screen: get(map, "screen")?,
            reps: get_or(map, "reps", 10)?,
            holdout_fraction: get_or(map, "holdout_fraction", 0.5)?,
            schedule_floor: get(map, "schedule_floor")?,
            svm: SvmConfig {
                cost: get_or(map, "cost", defaults.cost)?,
                tolerance: get_or(map, "tolerance", defaults.tolerance)?,
                max_passes: get(map, "max_passes")?,
            },
            seed: get_or(map, "seed", 0)?,
            out_dir: PathBuf::from(map.get("out").map_or(DEFAULT_OUT_DIR, String::as_str)),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_kv_text(text: &str) -> Result<Self, RunError> {
        Self::from_pairs(&parse_kv(text)?)
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<(), RunError> {
        self.svm.validate()?;
        match &self.input {
            InputSource::File { .. } => {}
            InputSource::SynthNull { n, p, class_sizes } => {
                if *p < 1 || *n < 2 {
                    return config_err("synthetic data needs n >= 2 and p >= 1");
                }
                if class_sizes.iter().sum::<usize>() != *n {
                    return config_err("class_sizes must sum to n");
                }
            }
            InputSource::SynthGaussian { p, informative, variance, class_sizes, .. } => {
                if *p < 1 || class_sizes.iter().sum::<usize>() < 2 || class_sizes.len() != 2 {
                    return config_err("gaussian data needs p >= 1 and two class sizes totalling at least 2");
                }
                if *informative > *p {
                    return config_err("informative exceeds p");
                }
                if variance.is_nan() || *variance <= 0.0 {
                    return config_err("variance must be positive");
                }
            }
        }
        let needs_folds = !matches!(self.protocol, Protocol::Apparent | Protocol::LeakyHoldout);
        if needs_folds && self.folds < 2 {
            return config_err(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.protocol == Protocol::Double && self.folds < 3 {
            return config_err("double CV needs at least 3 folds");
        }
        if matches!(self.protocol, Protocol::ScreenedInternal | Protocol::ScreenedExternal) && self.screen.is_none() {
            return config_err("screened protocols need screen (G)");
        }
        if self.protocol == Protocol::LeakyHoldout {
            if self.size.is_none() {
                return config_err("leaky-holdout needs size (d)");
            }
            if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
                return config_err("holdout_fraction must lie in (0, 1)");
            }
        }
        if self.protocol == Protocol::Repeated && self.reps < 1 {
            return config_err("reps must be at least 1");
        }
        if self.size == Some(0) || self.screen == Some(0) {
            return config_err("size and screen must be positive");
        }
        Ok(())
    }

    /// Seed of the synthetic data generator.
    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, u64::MAX)
    }

    pub fn load_data(&self) -> Result<LabeledDataset, RunError> {
        Ok(match &self.input {
            InputSource::File { path, layout } => load_dataset(path, *layout)?,
            InputSource::SynthNull { n, p, class_sizes } => synth_null(*n, *p, class_sizes, self.data_seed())?,
            InputSource::SynthGaussian { p, informative, separation, variance, class_sizes } => {
                synth_gaussian(&SyntheticSpec::two_class(
                    *p,
                    *informative,
                    *separation,
                    *variance,
                    [class_sizes[0], class_sizes[1]],
                    self.data_seed(),
                ))?
            }
        })
    }

    fn schedule(&self, start: usize) -> Result<RfeSchedule, RunError> {
        Ok(match self.schedule_floor {
            Some(floor) => RfeSchedule::halving_with_floor(start, floor)?,
            None => rfe_schedule(start)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: RunConfig,
    pub n_samples: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub tables: Vec<ErrorTable>,
    pub selections: Vec<FoldSelection>,
    pub double_cv: Option<DoubleCvResult>,
    pub holdout: Option<HoldoutResult>,
    pub duration_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String, RunError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RunError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// All error tables under one header.
    pub fn tables_tsv(&self) -> String {
        let mut buf = Vec::new();
        writeln!(buf, "{}", ErrorTable::HEADER).unwrap();
        for t in &self.tables {
            t.write_to(&mut buf, false).unwrap();
        }
        String::from_utf8(buf).unwrap()
    }

    /// Writes `table.tsv` and, when present, `double_cv.tsv`,
    /// `holdout.tsv` and `markers.tsv` (selection counts at the best size
    /// of the first table).
    pub fn write_tables(&self, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: &str, body: String| -> Result<(), RunError> {
            let path = dir.join(name);
            fs::write(&path, body)?;
            written.push(path);
            Ok(())
        };
        if !self.tables.is_empty() {
            put("table.tsv", self.tables_tsv())?;
        }
        if let Some(d) = &self.double_cv {
            let mut s = String::from("fold\tchosen_d\n");
            for (k, h) in d.inner_choices.iter().enumerate() {
                s.push_str(&format!("{}\t{h}\n", k + 1));
            }
            s.push_str(&format!("# estimate\t{}\n", d.estimate));
            put("double_cv.tsv", s)?;
        }
        if let Some(h) = &self.holdout {
            put(
                "holdout.tsv",
                format!(
                    "seed\tn_test\tleaky_rate\tclean_rate\n{}\t{}\t{}\t{}\n",
                    h.seed, h.n_test, h.leaky_rate, h.clean_rate
                ),
            )?;
        }
        if let Some(d) = self.tables.first().and_then(select_best_size) {
            if let Ok(counts) = marker_frequency(self, d) {
                let mut s = String::from("feature\tcount\n");
                let mut ranked: Vec<&MarkerCount> = counts.iter().filter(|c| c.count > 0).collect();
                ranked.sort_by(|a, b| b.count.cmp(&a.count).then(a.feature.cmp(&b.feature)));
                for c in ranked {
                    s.push_str(&format!("{}\t{}\n", c.name, c.count));
                }
                put("markers.tsv", s)?;
            }
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerCount {
    pub feature: usize,
    pub name: String,
    pub count: usize,
}

/// For every feature, the number of training splits whose size-`d`
/// subset contains it.
pub fn marker_frequency(report: &RunReport, d: usize) -> Result<Vec<MarkerCount>, RunError> {
    let mut counts = vec![0usize; report.feature_names.len()];
    let mut found = false;
    for sel in report.selections.iter().filter(|s| s.size == d) {
        found = true;
        for &v in sel.subset.indices() {
            counts[v] += 1;
        }
    }
    if !found {
        return Err(RunError::SizeAbsent(d));
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(feature, count)| MarkerCount { feature, name: report.feature_names[feature].clone(), count })
        .collect())
}

/// Loads or synthesizes the data, runs the configured protocol, writes
/// the report and tables to `config.out_dir` and returns the report.
pub fn run_experiment(config: &RunConfig) -> Result<RunReport, RunError> {
    config.validate()?;
    let started = Instant::now();
    let data = config.load_data()?;
    let p = data.n_features();
    let svm = &config.svm;
    let seed = config.seed;

    let mut tables = Vec::new();
    let mut selections = Vec::new();
    let mut double = None;
    let mut holdout = None;

    match config.protocol {
        Protocol::Apparent => tables.push(apparent_table(&data, &config.schedule(p)?, svm)?),
        Protocol::Internal => {
            let folds = make_folds(&data, config.folds, seed)?;
            tables.push(internal_cv_table(&data, &folds, &config.schedule(p)?, svm)?);
        }
        Protocol::External => {
            let folds = make_folds(&data, config.folds, seed)?;
            let out = external_cv_detailed(&data, &folds, &config.schedule(p)?, svm)?;
            tables.push(out.table);
            selections = out.selections;
        }
        Protocol::Double => {
            double = Some(double_cv(&data, config.folds, &config.schedule(p)?, svm, seed)?);
        }
        Protocol::ScreenedInternal | Protocol::ScreenedExternal => {
            let g = config.screen.expect("validated");
            let folds = make_folds(&data, config.folds, seed)?;
            let schedule = config.schedule(g)?;
            let out = if config.protocol == Protocol::ScreenedInternal {
                screened_internal_cv_detailed(&data, g, &folds, &schedule, svm)?
            } else {
                screened_external_cv_detailed(&data, g, &folds, &schedule, svm)?
            };
            tables.push(out.table);
            selections = out.selections;
        }
        Protocol::LeakyHoldout => {
            let params = HoldoutParams {
                fraction: config.holdout_fraction,
                size: config.size.expect("validated"),
                screen: config.screen.unwrap_or(p),
            };
            holdout = Some(leaky_holdout(&data, &params, svm, seed)?);
        }
        Protocol::Repeated => {
            let out = repeated_cv_detailed(&data, config.folds, &config.schedule(p)?, svm, config.reps, seed)?;
            tables.push(out.table);
            selections = out.selections;
        }
    }

    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        n_samples: data.n_samples(),
        feature_names: data.feature_names().to_vec(),
        class_names: data.class_names().to_vec(),
        tables,
        selections,
        double_cv: double,
        holdout,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    report.write_tables(&config.out_dir)?;
    fs::write(config.out_dir.join("report.json"), report.to_json()?)?;
    Ok(report)
}
