//! Error-rate estimation for gene-selection classifiers.
//!
//! Linear SVMs trained on recursively eliminated gene subsets, evaluated
//! with cross-validation protocols that either repeat the selection inside
//! every fold or leak it from the full data. A Gaussian Bayes oracle gives
//! ground-truth error rates for synthetic populations.

pub mod classifiers;
pub mod cv;
pub mod data;
pub mod oracle;
pub mod par;
pub mod runner;
mod seed;
pub mod selection;

pub use classifiers::{train_svm, ClassifierError, Classify, SvmConfig, SvmModel};
pub use cv::{select_best_size, CvError, ErrorTable, Protocol};
pub use data::{load_dataset, make_folds, DataError, FoldPlan, LabeledDataset, Layout};
pub use runner::{run_experiment, RunConfig, RunError, RunReport};
pub use seed::derive_seed;
pub use selection::{rfe_path, rfe_schedule, GeneSubset, RfeSchedule};
