//! End-to-end workflow: split, vocabulary, base-model training, stacking,
//! baselines, prediction, fine-tuning and the persisted [`ModelBundle`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{select_svm, LinearSvm, SparseVector, SvmConfig, TfidfVectorizer};
use crate::embeddings::{load_embeddings, EmbeddingTable, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::evaluation::{score, MetricsReport};
use crate::models::{
    FocusArch, FocusModel, Featurizer, LayoutArch, LayoutConfig, LayoutModel, MergedModel,
    SentenceExample, SurroundingArch, SurroundingModel, FEATURE_VERSION,
};
use crate::nn::serialize::{decode, encode, export_params, import_params};
use crate::nn::{train, History, Network, ParamSet, Real, Tensor, TrainConfig};
use crate::preprocess::build_vocab;
use crate::stacking::{
    finetune_stacker, fit_stacker, predict_stacker, StackerConfig, StackerModel, StackingInput,
};
use crate::types::{split_dataset, DatasetSplit, LabeledReport, ProbVector, Report, SectionLabel};
use crate::weak::{weak_labels, RuleSet};

const BUNDLE_FORMAT: &str = "radsec-bundle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream (splits, initialization, shuffling, dropout).
    pub seed: u64,
    /// Train / stacking-holdout / test proportions.
    pub split: [f64; 3],
    /// Fraction of the training reports held out for early stopping.
    pub validation_fraction: f64,
    pub min_count: usize,
    pub embedding_dim: usize,
    /// Pretrained vectors; random initialization when absent.
    pub embeddings: Option<PathBuf>,
    /// Defaults to true for random embeddings and false for pretrained ones.
    pub embeddings_trainable: Option<bool>,
    /// Rule set used for header detection in the layout features.
    pub rules: String,
    pub layout_features: LayoutConfig,
    pub focus: FocusArch,
    pub surrounding: SurroundingArch,
    pub layout: LayoutArch,
    pub context_training: TrainConfig,
    pub layout_training: TrainConfig,
    pub merged_training: TrainConfig,
    pub stacker: StackerConfig,
    pub svm: SvmConfig,
    pub train_merged: bool,
    pub train_svm: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            split: [0.8, 0.1, 0.1],
            validation_fraction: 0.1,
            min_count: 1,
            embedding_dim: DEFAULT_DIM,
            embeddings: None,
            embeddings_trainable: None,
            rules: "mgb-style".into(),
            layout_features: LayoutConfig::default(),
            focus: FocusArch::default(),
            surrounding: SurroundingArch::default(),
            layout: LayoutArch::default(),
            context_training: TrainConfig::default(),
            layout_training: TrainConfig::layout_default(),
            merged_training: TrainConfig::default(),
            stacker: StackerConfig::default(),
            svm: SvmConfig::default(),
            train_merged: true,
            train_svm: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.split.iter().any(|r| *r < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRatios(self.split));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        if self.min_count == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("min_count and embedding_dim must be positive".into()));
        }
        RuleSet::load(&self.rules)?;
        for t in [&self.context_training, &self.layout_training, &self.merged_training] {
            t.validate()?;
        }
        let archs = [
            (&self.focus.hidden, &self.focus.dropout),
            (&self.surrounding.hidden, &self.surrounding.dropout),
            (&self.layout.hidden, &self.layout.dropout),
        ];
        for (h, d) in archs {
            if h.is_empty() || h.len() != d.len() || h.contains(&0) {
                return Err(Error::Config("each hidden layer needs a positive size and a dropout rate".into()));
            }
            if d.iter().any(|r| !(0.0..1.0).contains(r)) {
                return Err(Error::Config("dropout rates must be in [0, 1)".into()));
            }
        }
        if self.focus.lstm_units == 0 || self.surrounding.focus_units == 0 || self.surrounding.context_units == 0 {
            return Err(Error::Config("LSTM units must be positive".into()));
        }
        Ok(())
    }

    fn seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    fn training(&self, base: &TrainConfig, offset: u64) -> TrainConfig {
        TrainConfig {
            seed: self.seed(offset),
            ..*base
        }
    }
}

/// Every system `evaluate` and `label` can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum System {
    Stacking,
    Merged,
    Focus,
    Surrounding,
    Layout,
    Svm,
    RulesMgb,
    RulesMimic,
}

impl System {
    pub const ALL: [System; 8] = [
        System::Stacking,
        System::Merged,
        System::Focus,
        System::Surrounding,
        System::Layout,
        System::Svm,
        System::RulesMgb,
        System::RulesMimic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            System::Stacking => "stacking",
            System::Merged => "merged",
            System::Focus => "focus",
            System::Surrounding => "surrounding",
            System::Layout => "layout",
            System::Svm => "svm",
            System::RulesMgb => "rules-mgb",
            System::RulesMimic => "rules-mimic",
        }
    }

    /// Rule-based systems need no trained bundle.
    pub fn rules(self) -> Option<RuleSet> {
        match self {
            System::RulesMgb => Some(RuleSet::mgb_style()),
            System::RulesMimic => Some(RuleSet::mimic_style()),
            _ => None,
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown system `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SvmBaseline {
    tfidf: TfidfVectorizer,
    svm: LinearSvm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub focus: History,
    pub surrounding: History,
    pub layout: History,
    pub merged: Option<History>,
    pub train_reports: usize,
    pub validation_reports: usize,
    pub holdout_reports: usize,
}

/// The trained system: featurizer, three base models, stacker and the
/// optional merged and SVM baselines.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: PipelineConfig,
    pub featurizer: Featurizer,
    pub focus: FocusModel,
    pub surrounding: SurroundingModel,
    pub layout: LayoutModel,
    pub stacker: StackerModel,
    pub merged: Option<MergedModel>,
    svm: Option<SvmBaseline>,
    embeddings_trainable: bool,
}

fn label_of(p: &[f64]) -> SectionLabel {
    SectionLabel::from_code(crate::types::argmax(p)).expect("argmax < 7")
}

fn to_prob(p: Vec<f64>) -> ProbVector {
    let mut a = [0.0; crate::types::NUM_LABELS];
    a.copy_from_slice(&p);
    ProbVector(a)
}

fn params_hash<T: Real>(params: &ParamSet<T>) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update(name.as_bytes());
        h.update((t.rows as u32).to_le_bytes());
        h.update((t.cols as u32).to_le_bytes());
        for v in &t.data {
            h.update((v.f64() as f32).to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

fn vocab_hash(words: &[String]) -> String {
    let mut h = Sha256::new();
    for w in words {
        h.update(w.as_bytes());
        h.update([0u8]);
    }
    format!("{:x}", h.finalize())
}

fn svm_vectors(tfidf: &TfidfVectorizer, reports: &[LabeledReport]) -> (Vec<SparseVector>, Vec<SectionLabel>) {
    reports
        .iter()
        .flat_map(|r| r.report.sentences.iter().zip(&r.labels))
        .map(|(s, &l)| (tfidf.transform(&s.text), l))
        .unzip()
}

/// Splits the corpus, trains on the train part, fits the stacker on the
/// holdout part and returns the bundle together with the split.
pub fn train_pipeline(
    corpus: &[LabeledReport],
    cfg: &PipelineConfig,
) -> Result<(ModelBundle, DatasetSplit<LabeledReport>, TrainingReport)> {
    cfg.validate()?;
    let split = split_dataset(corpus, cfg.split, cfg.seed)?;
    let (bundle, report) = fit_system(&split.train, &split.stacking_holdout, cfg)?;
    Ok((bundle, split, report))
}

/// Trains the base models on `train` (minus an early-stopping validation
/// slice) and the stacker on `holdout`.
pub fn fit_system(
    train_reports: &[LabeledReport],
    holdout: &[LabeledReport],
    cfg: &PipelineConfig,
) -> Result<(ModelBundle, TrainingReport)> {
    cfg.validate()?;
    if train_reports.iter().all(|r| r.report.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    if holdout.iter().all(|r| r.report.is_empty()) {
        return Err(Error::DegenerateStackingSet("empty stacking holdout".into()));
    }
    let reports: Vec<Report> = train_reports.iter().map(|r| r.report.clone()).collect();
    let vocab = build_vocab(&reports, cfg.min_count);
    let mut table = match &cfg.embeddings {
        Some(p) => load_embeddings(p, &vocab, cfg.seed(2))?,
        None => EmbeddingTable::random(vocab.len(), cfg.embedding_dim, cfg.seed(2)),
    };
    if let Some(t) = cfg.embeddings_trainable {
        table.trainable = t;
    }
    let featurizer = Featurizer::new(vocab, RuleSet::load(&cfg.rules)?, cfg.layout_features);

    let v = cfg.validation_fraction;
    let inner = split_dataset(train_reports, [1.0 - v, v, 0.0], cfg.seed(1))?;
    let (fit_part, val_part) = if inner.train.is_empty() {
        (inner.stacking_holdout, Vec::new())
    } else {
        (inner.train, inner.stacking_holdout)
    };
    let train_x = featurizer.labeled_examples(&fit_part);
    let val_x = featurizer.labeled_examples(&val_part);
    info!(
        "training on {} sentences ({} reports), validating on {} sentences",
        train_x.len(),
        fit_part.len(),
        val_x.len()
    );

    let mut focus = FocusModel::new(&table, &cfg.focus, cfg.seed(3));
    let mut surrounding = SurroundingModel::new(&table, &cfg.surrounding, cfg.seed(4));
    let mut layout = LayoutModel::new(&cfg.layout, cfg.seed(5));
    let (hf, hs, hl) = std::thread::scope(|s| {
        let f = s.spawn(|| train(&mut focus, &train_x, &val_x, &cfg.training(&cfg.context_training, 13)));
        let su = s.spawn(|| train(&mut surrounding, &train_x, &val_x, &cfg.training(&cfg.context_training, 14)));
        let l = s.spawn(|| train(&mut layout, &train_x, &val_x, &cfg.training(&cfg.layout_training, 15)));
        (
            f.join().expect("focus training thread"),
            su.join().expect("surrounding training thread"),
            l.join().expect("layout training thread"),
        )
    });
    let (hf, hs, hl) = (hf?, hs?, hl?);
    info!(
        "base models: focus {} epochs, surrounding {} epochs, layout {} epochs",
        hf.epochs_run, hs.epochs_run, hl.epochs_run
    );

    let merged = if cfg.train_merged {
        let mut m = MergedModel::new(&table, &cfg.focus, &cfg.surrounding, &cfg.layout, cfg.seed(6));
        let h = train(&mut m, &train_x, &val_x, &cfg.training(&cfg.merged_training, 16))?;
        Some((m, h))
    } else {
        None
    };

    let svm = if cfg.train_svm {
        let texts: Vec<&str> = fit_part
            .iter()
            .flat_map(|r| r.report.sentences.iter().map(|s| s.text.as_str()))
            .collect();
        let tfidf = TfidfVectorizer::fit(&texts)?;
        let (tx, ty) = svm_vectors(&tfidf, &fit_part);
        let (vx, vy) = svm_vectors(&tfidf, &val_part);
        let svm_cfg = SvmConfig {
            seed: cfg.seed(20),
            ..cfg.svm.clone()
        };
        let svm = select_svm((&tx, &ty), (&vx, &vy), tfidf.dim(), &svm_cfg)?;
        Some(SvmBaseline { tfidf, svm })
    } else {
        None
    };

    let mut bundle = ModelBundle {
        config: cfg.clone(),
        featurizer,
        focus,
        surrounding,
        layout,
        stacker: StackerModel::default(),
        merged: merged.as_ref().map(|(m, _)| m.clone()),
        svm,
        embeddings_trainable: table.trainable,
    };
    let (inputs, labels) = bundle.stacking_set(holdout);
    bundle.stacker = fit_stacker(&inputs, &labels, &cfg.stacker)?;
    let report = TrainingReport {
        focus: hf,
        surrounding: hs,
        layout: hl,
        merged: merged.map(|(_, h)| h),
        train_reports: fit_part.len(),
        validation_reports: val_part.len(),
        holdout_reports: holdout.len(),
    };
    Ok((bundle, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleMeta {
    format: String,
    feature_version: u32,
    vocab_hash: String,
    vocab: Vec<String>,
    rules_name: String,
    rules: String,
    config: PipelineConfig,
    embedding_dim: usize,
    embeddings_trainable: bool,
    stacker: StackerModel,
    svm: Option<SvmBaseline>,
    has_merged: bool,
    base_hashes: [String; 3],
}

impl ModelBundle {
    pub fn examples(&self, report: &Report) -> Vec<SentenceExample> {
        self.featurizer.examples(report, None)
    }

    /// Base-model probability triples for every sentence.
    pub fn base_probabilities(&self, examples: &[SentenceExample]) -> Vec<[ProbVector; 3]> {
        examples
            .iter()
            .map(|x| {
                [
                    to_prob(self.focus.predict(x)),
                    to_prob(self.surrounding.predict(x)),
                    to_prob(self.layout.predict(x)),
                ]
            })
            .collect()
    }

    pub fn stacking_inputs(&self, examples: &[SentenceExample]) -> Vec<StackingInput> {
        self.base_probabilities(examples)
            .iter()
            .map(|[f, s, l]| StackingInput::new(f, s, l))
            .collect()
    }

    fn stacking_set(&self, reports: &[LabeledReport]) -> (Vec<StackingInput>, Vec<SectionLabel>) {
        let ex = self.featurizer.labeled_examples(reports);
        let labels = ex.iter().map(|e| e.label).collect();
        (self.stacking_inputs(&ex), labels)
    }

    pub fn has_system(&self, system: System) -> bool {
        match system {
            System::Merged => self.merged.is_some(),
            System::Svm => self.svm.is_some(),
            _ => true,
        }
    }

    /// One label per sentence of `report`.
    pub fn predict(&self, report: &Report, system: System) -> Result<Vec<SectionLabel>> {
        if let Some(rules) = system.rules() {
            return Ok(weak_labels(report, &rules));
        }
        if !self.has_system(system) {
            return Err(Error::Config(format!("bundle has no trained {system} model")));
        }
        let ex = self.examples(report);
        let labels = match system {
            System::Stacking => self
                .stacking_inputs(&ex)
                .iter()
                .map(|x| predict_stacker(&self.stacker, x).0)
                .collect(),
            System::Focus => ex.iter().map(|x| label_of(&self.focus.predict(x))).collect(),
            System::Surrounding => ex.iter().map(|x| label_of(&self.surrounding.predict(x))).collect(),
            System::Layout => ex.iter().map(|x| label_of(&self.layout.predict(x))).collect(),
            System::Merged => {
                let m = self.merged.as_ref().expect("checked");
                ex.iter().map(|x| label_of(&m.predict(x))).collect()
            }
            System::Svm => {
                let b = self.svm.as_ref().expect("checked");
                report
                    .sentences
                    .iter()
                    .map(|s| b.svm.predict(&b.tfidf.transform(&s.text)))
                    .collect()
            }
            System::RulesMgb | System::RulesMimic => unreachable!("handled above"),
        };
        Ok(labels)
    }

    pub fn evaluate(&self, reports: &[LabeledReport], system: System) -> Result<MetricsReport> {
        evaluate_with(reports, |r| self.predict(r, system))
    }

    /// SHA-256 of the focus, surrounding and layout parameters.
    pub fn base_hashes(&self) -> [String; 3] {
        [
            params_hash(self.focus.params()),
            params_hash(self.surrounding.params()),
            params_hash(self.layout.params()),
        ]
    }

    /// Re-fits only the stacker, continuing from its current weights.
    pub fn finetune(&mut self, reports: &[LabeledReport], dataset_id: &str) -> Result<()> {
        let before = self.base_hashes();
        let (inputs, labels) = self.stacking_set(reports);
        self.stacker = finetune_stacker(&self.stacker, &inputs, &labels, &self.config.stacker, dataset_id)?;
        debug_assert_eq!(before, self.base_hashes());
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = BundleMeta {
            format: BUNDLE_FORMAT.into(),
            feature_version: FEATURE_VERSION,
            vocab_hash: vocab_hash(self.featurizer.vocab.words()),
            vocab: self.featurizer.vocab.words().to_vec(),
            rules_name: self.featurizer.rules.name.clone(),
            rules: self.featurizer.rules.to_string(),
            config: self.config.clone(),
            embedding_dim: self.focus.params().by_name("focus.emb").map_or(0, |t| t.cols),
            embeddings_trainable: self.embeddings_trainable,
            stacker: self.stacker.clone(),
            svm: self.svm.clone(),
            has_merged: self.merged.is_some(),
            base_hashes: self.base_hashes(),
        };
        let mut tensors = export_params("focus", self.focus.params());
        tensors.extend(export_params("surrounding", self.surrounding.params()));
        tensors.extend(export_params("layout", self.layout.params()));
        if let Some(m) = &self.merged {
            tensors.extend(export_params("merged", m.params()));
        }
        encode(&serde_json::to_value(&meta)?, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, tensors) = decode(bytes)?;
        if meta.get("format").and_then(|f| f.as_str()) != Some(BUNDLE_FORMAT) {
            return Err(Error::Bundle("not a model bundle".into()));
        }
        let found = meta
            .get("feature_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Bundle("missing feature version".into()))? as u32;
        if found != FEATURE_VERSION {
            return Err(Error::FeatureVersion {
                expected: FEATURE_VERSION,
                found,
            });
        }
        let mut meta: BundleMeta = serde_json::from_value(meta)?;
        if vocab_hash(&meta.vocab) != meta.vocab_hash {
            return Err(Error::Bundle("vocabulary hash mismatch".into()));
        }
        let vocab = crate::preprocess::Vocabulary::from_tokens(meta.vocab.iter().cloned());
        let rules = RuleSet::parse(&meta.rules_name, &meta.rules)?;
        let cfg = meta.config.clone();
        let table = EmbeddingTable {
            dim: meta.embedding_dim,
            vectors: Tensor::zeros(vocab.len(), meta.embedding_dim),
            trainable: meta.embeddings_trainable,
        };
        let mut focus = FocusModel::new(&table, &cfg.focus, 0);
        import_params("focus", focus.params_mut(), &tensors)?;
        let mut surrounding = SurroundingModel::new(&table, &cfg.surrounding, 0);
        import_params("surrounding", surrounding.params_mut(), &tensors)?;
        let mut layout = LayoutModel::new(&cfg.layout, 0);
        import_params("layout", layout.params_mut(), &tensors)?;
        let merged = if meta.has_merged {
            let mut m = MergedModel::new(&table, &cfg.focus, &cfg.surrounding, &cfg.layout, 0);
            import_params("merged", m.params_mut(), &tensors)?;
            Some(m)
        } else {
            None
        };
        if let Some(s) = &mut meta.svm {
            s.tfidf.rebuild_index();
        }
        let bundle = ModelBundle {
            config: cfg,
            featurizer: Featurizer::new(vocab, rules, meta.config.layout_features),
            focus,
            surrounding,
            layout,
            stacker: meta.stacker,
            merged,
            svm: meta.svm,
            embeddings_trainable: meta.embeddings_trainable,
        };
        if bundle.base_hashes() != meta.base_hashes {
            return Err(Error::Bundle("base model parameters do not match their recorded hashes".into()));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Scores `predict` over every sentence of `reports`.
pub fn evaluate_with<F>(reports: &[LabeledReport], mut predict: F) -> Result<MetricsReport>
where
    F: FnMut(&Report) -> Result<Vec<SectionLabel>>,
{
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for r in reports {
        pred.extend(predict(&r.report)?);
        gold.extend_from_slice(&r.labels);
    }
    if gold.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    score(&pred, &gold)
}

/// Rule-based prediction and scoring without a trained bundle.
pub fn evaluate_rules(reports: &[LabeledReport], rules: &RuleSet) -> Result<MetricsReport> {
    evaluate_with(reports, |r| Ok(weak_labels(r, rules)))
}

/// k-fold CV of the full pipeline: each fold's training reports are split
/// into base-model and stacking parts in the configured train:holdout ratio.
pub fn cross_validate_pipeline(
    corpus: &[LabeledReport],
    cfg: &PipelineConfig,
    k: usize,
    system: System,
) -> Result<crate::evaluation::CvSummary> {
    cfg.validate()?;
    let [a, b, _] = cfg.split;
    if a + b <= 0.0 {
        return Err(Error::InvalidRatios(cfg.split));
    }
    crate::evaluation::cross_validate(corpus, k, cfg.seed, |fold, train_part, test| {
        let fold_cfg = PipelineConfig {
            seed: cfg.seed.wrapping_add(1000 * (fold as u64 + 1)),
            ..cfg.clone()
        };
        if let Some(rules) = system.rules() {
            return evaluate_rules(test, &rules);
        }
        let inner = split_dataset(train_part, [a / (a + b), b / (a + b), 0.0], fold_cfg.seed)?;
        let (bundle, _) = fit_system(&inner.train, &inner.stacking_holdout, &fold_cfg)?;
        info!("fold {} trained", fold + 1);
        bundle.evaluate(test, system)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SyntheticTemplate};

    fn tiny_config() -> PipelineConfig {
        let quick = TrainConfig {
            max_epochs: 3,
            patience: 2,
            ..TrainConfig::default()
        };
        PipelineConfig {
            embedding_dim: 8,
            focus: FocusArch {
                lstm_units: 6,
                ..FocusArch::default()
            },
            surrounding: SurroundingArch {
                focus_units: 6,
                context_units: 3,
                ..SurroundingArch::default()
            },
            context_training: quick,
            layout_training: quick,
            merged_training: quick,
            svm: SvmConfig {
                epochs: 5,
                ..SvmConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_toml_roundtrip_and_validation() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = PipelineConfig::from_toml("seed = 7\n[layout_training]\nmax_epochs = 10\npatience = 3\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.layout_training.max_epochs, 10);
        assert_eq!(partial.context_training.max_epochs, 30);
        assert!(PipelineConfig::from_toml("split = [0.5, 0.2, 0.2]").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1").is_err());
        assert!(PipelineConfig::from_toml("rules = \"/no/such/rules\"").is_err());
    }

    #[test]
    fn system_names_roundtrip() {
        for s in System::ALL {
            assert_eq!(s.as_str().parse::<System>().unwrap(), s);
        }
        assert!("ensemble".parse::<System>().is_err());
    }

    #[test]
    fn train_save_load_predict() {
        let corpus = generate_synthetic_corpus(&[SyntheticTemplate::default_benchmark()], 40, 2);
        let cfg = tiny_config();
        let (bundle, split, _) = train_pipeline(&corpus, &cfg).unwrap();
        assert_eq!(split.train.len() + split.stacking_holdout.len() + split.test.len(), 40);
        let bytes = bundle.to_bytes().unwrap();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for sys in System::ALL {
            let a = bundle.evaluate(&split.test, sys).unwrap();
            let b = back.evaluate(&split.test, sys).unwrap();
            assert_eq!(a, b, "{sys}");
        }
        // identical training gives an identical bundle
        let (again, _, _) = train_pipeline(&corpus, &cfg).unwrap();
        assert_eq!(again.to_bytes().unwrap(), bytes);

        let mut tuned = back.clone();
        tuned.finetune(&split.test, "test-part").unwrap();
        assert_eq!(tuned.base_hashes(), back.base_hashes());
        assert_eq!(tuned.stacker.finetuned_on.as_deref(), Some("test-part"));
        assert!(tuned.finetune(&[], "none").is_err());
    }

    #[test]
    fn feature_version_mismatch_is_refused() {
        let meta = serde_json::json!({ "format": BUNDLE_FORMAT, "feature_version": FEATURE_VERSION + 1 });
        let bytes = encode(&meta, &[]).unwrap();
        assert!(matches!(
            ModelBundle::from_bytes(&bytes),
            Err(Error::FeatureVersion { found, .. }) if found == FEATURE_VERSION + 1
        ));
        let bytes = encode(&serde_json::json!({ "format": "other" }), &[]).unwrap();
        assert!(matches!(ModelBundle::from_bytes(&bytes), Err(Error::Bundle(_))));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(train_pipeline(&[], &tiny_config()), Err(Error::EmptyCorpus)));
        assert!(evaluate_rules(&[], &RuleSet::mgb_style()).is_err());
    }
}
