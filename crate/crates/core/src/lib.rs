//! Sentence-level section labeling for radiology reports.
//!
//! Every sentence of a report is assigned one of seven section labels by a
//! stacking ensemble over three classifiers: a focus-sentence Bi-LSTM, a
//! surrounding-context Bi-LSTM and a formatting/layout network. A
//! keyword-driven weak labeler bootstraps training data and doubles as the
//! rule-based baseline.

pub mod baselines;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod stacking;
pub mod types;
pub mod weak;

pub use error::{Error, Result};
pub use types::{
    split_dataset, DatasetSplit, LabelSource, LabeledReport, LabeledSentence, ProbVector, Report,
    ScoreVector, SectionLabel, Sentence, NUM_LABELS,
};
