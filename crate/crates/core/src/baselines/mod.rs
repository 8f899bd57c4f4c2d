//! Non-neural comparison systems: TF-IDF features with a linear SVM. The
//! rule-based baselines are the weak labeler's shipped rule sets.

pub mod svm;
pub mod tfidf;

pub use svm::{balanced_class_weights, fit_svm, select_svm, LinearSvm, SvmConfig};
pub use tfidf::{SparseVector, TfidfVectorizer};
