use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use radsec_core::corpus::{
    generate_synthetic_corpus, load_labeled_corpus, load_text_dir, weak_label_dir, write_jsonl,
    LabelMap, NoiseConfig, SyntheticTemplate,
};
use radsec_core::models::{FocusArch, FocusModel, LayoutArch, LayoutModel, MergedModel, SurroundingArch, SurroundingModel};
use radsec_core::models::{LayoutFeatures, SentenceExample};
use radsec_core::nn::{grad_check_report, GradCheckReport, Network, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radsec_core::pipeline::{cross_validate_pipeline, evaluate_rules, train_pipeline, ModelBundle, PipelineConfig, System};
use radsec_core::stacking::{ensemble_weight_report, format_weight_report};
use radsec_core::weak::RuleSet;
use radsec_core::{Error, Report, SectionLabel};

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_MODEL: u8 = 3;
const EXIT_BAD_CONFIG: u8 = 4;
const EXIT_EMPTY_CORPUS: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "radsec", version, about = "Sentence-level section labeling for radiology reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Label a directory of plain-text reports with header rules.
    WeakLabel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Builtin rule set (mgb-style, mimic-style) or a rules file.
        #[arg(long, default_value = "mgb-style")]
        rules: String,
    },
    /// Train the base models, stacker and baselines on a labeled corpus.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the model bundle.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Label map overrides (TOML) for BRAT input.
        #[arg(long)]
        label_map: Option<PathBuf>,
    },
    /// Score a system on a labeled corpus.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Required for every system except the rule baselines.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "stacking")]
        system: String,
        /// Also write the metrics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label_map: Option<PathBuf>,
        /// Print the stacker's per-block weight table.
        #[arg(long)]
        weights: bool,
    },
    /// Print every sentence prefixed by its predicted label.
    Label {
        /// A report file or a directory of `.txt` reports.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "stacking")]
        system: String,
        /// Output file (single report) or directory (one file per report).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validation of the full pipeline.
    CrossValidate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "stacking")]
        system: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        label_map: Option<PathBuf>,
    },
    /// Re-fit only the stacker on a new labeled corpus.
    Finetune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the bundle; defaults to the input file name.
        #[arg(long)]
        dataset_id: Option<String>,
        #[arg(long)]
        label_map: Option<PathBuf>,
    },
    /// Write a synthetic labeled corpus (JSONL), or plain reports with `--text`.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Template TOML; the shipped benchmark template otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Apply the template's domain shift.
        #[arg(long)]
        shift: bool,
        #[arg(long)]
        header_dropout: Option<f64>,
        /// Write `.txt` reports into the `--out` directory instead of JSONL.
        #[arg(long)]
        text: bool,
    },
    /// Finite-difference gradient checks on small random models.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        configs: usize,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::EmptyCorpus | Error::EmptyTrainingSet => EXIT_EMPTY_CORPUS,
            Error::Config(_) | Error::InvalidRatios(_) => EXIT_BAD_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn parse_system(s: &str) -> CliResult<System> {
    s.parse::<System>().map_err(|_| {
        let names: Vec<&str> = System::ALL.iter().map(|s| s.as_str()).collect();
        fail(EXIT_BAD_CONFIG, format!("unknown system `{s}`; expected one of {}", names.join(", ")))
    })
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| fail(EXIT_BAD_CONFIG, e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_model(path: &Path) -> CliResult<ModelBundle> {
    if !path.is_file() {
        return Err(fail(EXIT_MISSING_MODEL, format!("model file not found: {}", path.display())));
    }
    Ok(ModelBundle::load(path)?)
}

fn label_map(path: Option<&Path>) -> CliResult<LabelMap> {
    let mut map = LabelMap::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| fail(EXIT_BAD_CONFIG, format!("{}: {e}", p.display())))?;
        map.extend_from_toml(&text)
            .map_err(|e| fail(EXIT_BAD_CONFIG, format!("{}: {e}", p.display())))?;
    }
    Ok(map)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", path.display())))
}

fn render_labels(report: &Report, labels: &[SectionLabel]) -> String {
    report
        .sentences
        .iter()
        .zip(labels)
        .map(|(s, l)| format!("[{l}] {}\n", s.text))
        .collect()
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::WeakLabel { input, out, rules } => {
            let rules = RuleSet::load(&rules).map_err(|e| fail(EXIT_BAD_CONFIG, e.to_string()))?;
            let labeled = weak_label_dir(&input, &rules)?;
            write_jsonl(&out, &labeled)?;
            let n: usize = labeled.iter().map(|r| r.labels.len()).sum();
            println!("weak-labeled {} sentences in {} reports with {}", n, labeled.len(), rules.name);
        }
        Command::Train {
            input,
            out,
            config,
            seed,
            label_map: lm,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let corpus = load_labeled_corpus(&input, &label_map(lm.as_deref())?)?;
            let (bundle, split, report) = train_pipeline(&corpus, &cfg)?;
            bundle.save(&out)?;
            println!(
                "split: {} train / {} stacking holdout / {} test reports",
                split.train.len(),
                split.stacking_holdout.len(),
                split.test.len()
            );
            println!(
                "epochs: focus {} (best {}), surrounding {} (best {}), layout {} (best {})",
                report.focus.epochs_run,
                report.focus.best_epoch,
                report.surrounding.epochs_run,
                report.surrounding.best_epoch,
                report.layout.epochs_run,
                report.layout.best_epoch
            );
            if !split.test.is_empty() {
                for sys in System::ALL.into_iter().filter(|s| bundle.has_system(*s)) {
                    let m = bundle.evaluate(&split.test, sys)?;
                    println!(
                        "test {:<12} accuracy {:6.2}%  macro-F1 {:6.2}",
                        sys.as_str(),
                        100.0 * m.accuracy,
                        100.0 * m.macro_f1
                    );
                }
            }
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            input,
            model,
            system,
            out,
            label_map: lm,
            weights,
        } => {
            let system = parse_system(&system)?;
            let corpus = load_labeled_corpus(&input, &label_map(lm.as_deref())?)?;
            let (metrics, bundle) = match (system.rules(), &model) {
                (Some(rules), None) => (evaluate_rules(&corpus, &rules)?, None),
                (_, Some(p)) => {
                    let b = load_model(p)?;
                    (b.evaluate(&corpus, system)?, Some(b))
                }
                (None, None) => {
                    return Err(fail(EXIT_MISSING_MODEL, format!("--model is required for system {system}")));
                }
            };
            println!("system {system}");
            print!("{metrics}");
            if weights {
                if let Some(b) = &bundle {
                    print!("{}", format_weight_report(&ensemble_weight_report(&b.stacker)));
                }
            }
            if let Some(o) = out {
                write_text(&o, &serde_json::to_string_pretty(&metrics).expect("metrics serialize"))?;
            }
        }
        Command::Label {
            input,
            model,
            system,
            out,
        } => {
            let system = parse_system(&system)?;
            let bundle = match (&model, system.rules()) {
                (Some(p), _) => Some(load_model(p)?),
                (None, Some(_)) => None,
                (None, None) => {
                    return Err(fail(EXIT_MISSING_MODEL, format!("--model is required for system {system}")));
                }
            };
            let predict = |r: &Report| -> CliResult<Vec<SectionLabel>> {
                match &bundle {
                    Some(b) => Ok(b.predict(r, system)?),
                    None => Ok(radsec_core::weak::weak_labels(r, &system.rules().expect("rules"))),
                }
            };
            if input.is_dir() {
                let reports = load_text_dir(&input)?;
                if reports.is_empty() {
                    return Err(Error::EmptyCorpus.into());
                }
                if let Some(dir) = &out {
                    fs::create_dir_all(dir).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", dir.display())))?;
                }
                for r in &reports {
                    let text = render_labels(r, &predict(r)?);
                    match &out {
                        Some(dir) => write_text(&dir.join(format!("{}.txt", r.id)), &text)?,
                        None => print!("## {}\n{text}", r.id),
                    }
                }
            } else {
                let raw = fs::read_to_string(&input).map_err(|e| Failure::from(Error::Io { path: input.clone(), source: e }))?;
                let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let r = Report::from_text(id, raw.replace("\r\n", "\n"));
                if r.is_empty() {
                    return Err(Error::EmptyCorpus.into());
                }
                let text = render_labels(&r, &predict(&r)?);
                match &out {
                    Some(p) => write_text(p, &text)?,
                    None => print!("{text}"),
                }
            }
        }
        Command::CrossValidate {
            input,
            folds,
            config,
            seed,
            system,
            out,
            label_map: lm,
        } => {
            let system = parse_system(&system)?;
            let cfg = load_config(config.as_deref(), seed)?;
            let corpus = load_labeled_corpus(&input, &label_map(lm.as_deref())?)?;
            let summary = cross_validate_pipeline(&corpus, &cfg, folds, system)
                .map_err(|e| match e {
                    Error::InvalidFolds { .. } => fail(EXIT_BAD_CONFIG, e.to_string()),
                    other => other.into(),
                })?;
            println!("system {system}");
            println!("{summary}");
            if let Some(o) = out {
                write_text(&o, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
            }
        }
        Command::Finetune {
            input,
            model,
            out,
            dataset_id,
            label_map: lm,
        } => {
            let mut bundle = load_model(&model)?;
            let corpus = load_labeled_corpus(&input, &label_map(lm.as_deref())?)?;
            let id = dataset_id.unwrap_or_else(|| {
                input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            });
            let before = bundle.base_hashes();
            bundle.finetune(&corpus, &id)?;
            if bundle.base_hashes() != before {
                return Err(fail(EXIT_FAILURE, "base model parameters changed during fine-tuning"));
            }
            bundle.save(&out)?;
            println!("fine-tuned stacker on {} reports ({id}); wrote {}", corpus.len(), out.display());
        }
        Command::GenSynthetic {
            out,
            n,
            seed,
            template,
            shift,
            header_dropout,
            text,
        } => {
            if n == 0 {
                return Err(Error::EmptyCorpus.into());
            }
            let mut t = match &template {
                Some(p) => SyntheticTemplate::load(p).map_err(|e| fail(EXIT_BAD_CONFIG, e.to_string()))?,
                None => SyntheticTemplate::default_benchmark(),
            };
            if shift {
                t = t.domain_shift().map_err(|e| fail(EXIT_BAD_CONFIG, e.to_string()))?;
            }
            if let Some(d) = header_dropout {
                if !(0.0..=1.0).contains(&d) {
                    return Err(fail(EXIT_BAD_CONFIG, "--header-dropout must be in [0, 1]"));
                }
                let noise = NoiseConfig { header_dropout: d, ..t.noise };
                t = t.with_noise(noise);
            }
            let corpus = generate_synthetic_corpus(&[t], n, seed);
            if text {
                fs::create_dir_all(&out).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", out.display())))?;
                for r in &corpus {
                    write_text(&out.join(format!("{}.txt", r.report.id)), &r.report.raw_text)?;
                }
            } else {
                write_jsonl(&out, &corpus)?;
            }
            println!("wrote {n} synthetic reports to {}", out.display());
        }
        Command::GradCheck { seed, configs } => grad_check_cmd(seed, configs)?,
    }
    Ok(())
}

/// Zero-initialised biases can sit exactly on a ReLU kink, where finite
/// differences and the subgradient disagree by construction.
fn jitter_biases(p: &mut ParamSet<f64>, rng: &mut ChaCha8Rng) {
    for k in 0..p.len() {
        if p.names()[k].ends_with(".b") {
            p.tensors_mut()[k].data.iter_mut().for_each(|b| *b += rng.gen_range(-0.1..0.1));
        }
    }
}

fn grad_check_cmd(seed: u64, configs: usize) -> CliResult {
    use radsec_core::embeddings::EmbeddingTable;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense: Vec<GradCheckReport> = Vec::new();
    let mut lstm: Vec<GradCheckReport> = Vec::new();
    for c in 0..configs as u64 {
        let s = seed.wrapping_mul(7919).wrapping_add(c);
        // unit-scale rows keep most gradients above finite-difference resolution
        let table = EmbeddingTable::uniform(15, rng.gen_range(3..7), 1.0, s);
        let mut ids = |n: usize| (0..n).map(|_| rng.gen_range(1..15u32)).collect::<Vec<_>>();
        let x = SentenceExample {
            focus: ids(4),
            prev: ids(2),
            next: ids(2),
            layout: LayoutFeatures(std::array::from_fn(|i| ((i as f32 + s as f32) * 0.61).sin())),
            label: SectionLabel::ALL[(s % 7) as usize],
        };
        let focus = FocusArch { lstm_units: 3 + (s % 3) as usize, hidden: vec![6, 4], dropout: vec![0.5, 0.3] };
        let sur = SurroundingArch { focus_units: 3, context_units: 2 + (s % 2) as usize, hidden: vec![5, 4], dropout: vec![0.5, 0.3] };
        let lay = LayoutArch { hidden: vec![8 + (s % 5) as usize, 5], dropout: vec![0.5, 0.5] };
        let mut l = LayoutModel::<f64>::new(&lay, s);
        let mut f = FocusModel::<f64>::new(&table, &focus, s);
        let mut su = SurroundingModel::<f64>::new(&table, &sur, s);
        let mut m = MergedModel::<f64>::new(&table, &focus, &sur, &lay, s);
        jitter_biases(l.params_mut(), &mut rng);
        jitter_biases(f.params_mut(), &mut rng);
        jitter_biases(su.params_mut(), &mut rng);
        jitter_biases(m.params_mut(), &mut rng);
        dense.push(grad_check_report(&mut l, &x, 1e-5, 100, s));
        lstm.push(grad_check_report(&mut f, &x, 1e-5, 100, s));
        lstm.push(grad_check_report(&mut su, &x, 1e-5, 100, s));
        lstm.push(grad_check_report(&mut m, &x, 1e-5, 100, s));
    }
    let summarize = |name: &str, reports: &[GradCheckReport], threshold: f64| {
        let worst = reports.iter().max_by(|a, b| a.max_relative.total_cmp(&b.max_relative));
        let abs = reports.iter().map(|r| r.max_absolute).fold(0.0, f64::max);
        let rel = worst.map_or(0.0, |r| r.max_relative);
        print!("{name}: max relative error {rel:.3e} (threshold {threshold:e}), max absolute {abs:.1e}");
        if let Some((p, a, n)) = worst.and_then(|r| r.worst.as_ref()) {
            print!(" at {p} (analytic {a:.3e}, numeric {n:.3e})");
        }
        println!();
        rel < threshold
    };
    let ok_dense = summarize("dense stacks", &dense, 1e-4);
    let ok_lstm = summarize("bi-lstm stacks", &lstm, 1e-3);
    if ok_dense && ok_lstm {
        Ok(())
    } else {
        Err(fail(EXIT_FAILURE, "gradient check failed"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    info!("{:?}", cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
