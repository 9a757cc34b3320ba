//! `ecgx`: command-line surface over the ECG biometric pipeline.
//!
//! One verb per pipeline stage: synthesize data, preprocess, train the
//! autoencoder, extract features, train/fine-tune the Siamese verifier,
//! train the identification head, evaluate, and export pair manifests and
//! ROC tables. All randomness flows from `--seed`; identical invocations
//! produce byte-identical artifacts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ecgx_core::dataset::bundle::{load_bundle, save_bundle};
use ecgx_core::dataset::features::{
    cache_features, load_feature_store, save_feature_store, FeatureDataset,
};
use ecgx_core::dataset::synth::{synthesize_dataset, SyntheticDatasetSpec, STANDARD_LEADS};
use ecgx_core::dataset::{load_dataset, save_dataset, Dataset, RecordingMode};
use ecgx_core::error::Error;
use ecgx_core::metrics::{aggregate_runs, compute_accuracy, compute_eer, roc_points, EvalReport};
use ecgx_core::models::{
    train_autoencoder, train_ident_head, train_siamese, Autoencoder, IdentModel, PairExample,
    Siamese,
};
use ecgx_core::nn::{LossKind, TrainConfig, TrainingLog};
use ecgx_core::protocol::{
    make_finetune_pairs, pair_manifest, split_identification, ComparisonPair, IdentQuotas,
    IdentScenario, PairLabel, ProtocolConfig, Scenario,
};
use ecgx_core::segmentation::{detect_r_peaks, extract_single_segments};
use ecgx_core::signal::{
    apply_filters, design_filters, normalize_amplitude, resample_record, FilterSpec, TARGET_RATE,
};

#[derive(Parser)]
#[command(
    name = "ecgx",
    version,
    about = "ECG biometric verification and identification pipeline"
)]
struct Cli {
    /// Worker thread cap (falls back to the ECGX_THREADS env var).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject dataset
    Synth(SynthArgs),
    /// Resample to 500 Hz and apply the band-pass + notch cascade
    Preprocess(PreprocessArgs),
    /// Train the autoencoder feature extractor on single segments
    TrainAe(TrainAeArgs),
    /// Cache template/summary/single features for a dataset
    Extract(ExtractArgs),
    /// Train the Siamese verifier on template-vs-single pairs
    TrainSiamese(TrainSiameseArgs),
    /// Fine-tune a trained verifier on another dataset's single segments
    FinetuneSiamese(FinetuneArgs),
    /// Train the identification head on summary segments
    TrainIdent(TrainIdentArgs),
    /// Multi-run verification evaluation (EER)
    EvalVerify(EvalVerifyArgs),
    /// Identification evaluation (top-1 accuracy)
    EvalIdent(EvalIdentArgs),
    /// Export a comparison-pair manifest
    ExportPairs(ExportPairsArgs),
    /// Export a threshold,far,frr ROC table
    Roc(RocArgs),
}

#[derive(Args, serde::Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    subjects: usize,
    #[arg(long, default_value_t = 2)]
    sessions: usize,
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long, default_value_t = 60.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 500)]
    fs: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct TrainAeArgs {
    /// Pre-processed dataset manifest (500 Hz)
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Single segments taken from each record
    #[arg(long, default_value_t = 3)]
    singles_per_record: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
}

#[derive(Args, serde::Serialize)]
struct ExtractArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    ae: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct TrainSiameseArgs {
    #[arg(long)]
    features: PathBuf,
    /// 1 or 12: selects the 1L or 12L pathway
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of subjects held out to monitor validation loss
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
}

#[derive(Args, serde::Serialize)]
struct FinetuneArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    siamese: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subject ids to exclude
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    /// File with one excluded subject id per line
    #[arg(long)]
    exclude_file: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
}

#[derive(Args, serde::Serialize)]
struct TrainIdentArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    siamese: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    scenario: IdentScenarioArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 1 or 12: selects the branch pathway
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long)]
    train_quota: Option<usize>,
    #[arg(long)]
    val_quota: Option<usize>,
    #[arg(long)]
    test_quota: Option<usize>,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
}

#[derive(Args, serde::Serialize)]
struct EvalVerifyArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    siamese: PathBuf,
    #[arg(long, value_enum)]
    scenario: VerifyScenarioArg,
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct EvalIdentArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    ident: PathBuf,
    #[arg(long, value_enum)]
    scenario: IdentScenarioArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long)]
    train_quota: Option<usize>,
    #[arg(long)]
    val_quota: Option<usize>,
    #[arg(long)]
    test_quota: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct ExportPairsArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum)]
    scenario: PairScenarioArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, serde::Serialize)]
struct RocArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    siamese: PathBuf,
    #[arg(long, value_enum)]
    scenario: VerifyScenarioArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    leads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum VerifyScenarioArg {
    SingleSession,
    MultiSession,
}

impl From<VerifyScenarioArg> for Scenario {
    fn from(v: VerifyScenarioArg) -> Scenario {
        match v {
            VerifyScenarioArg::SingleSession => Scenario::SingleSessionEval,
            VerifyScenarioArg::MultiSession => Scenario::MultiSessionEval,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum PairScenarioArg {
    Training,
    SingleSession,
    MultiSession,
}

impl From<PairScenarioArg> for Scenario {
    fn from(v: PairScenarioArg) -> Scenario {
        match v {
            PairScenarioArg::Training => Scenario::Training,
            PairScenarioArg::SingleSession => Scenario::SingleSessionEval,
            PairScenarioArg::MultiSession => Scenario::MultiSessionEval,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
enum IdentScenarioArg {
    Single,
    Multi,
    Mixed,
}

impl From<IdentScenarioArg> for IdentScenario {
    fn from(v: IdentScenarioArg) -> IdentScenario {
        match v {
            IdentScenarioArg::Single => IdentScenario::SingleSession,
            IdentScenarioArg::Multi => IdentScenario::MultiSession,
            IdentScenarioArg::Mixed => IdentScenario::MixedSession,
        }
    }
}

const EXIT_DATA: i32 = 3;
const EXIT_MODEL: i32 = 4;

fn error_class(e: &Error) -> (&'static str, i32) {
    match e {
        Error::ShapeMismatch(_)
        | Error::DimensionMismatch(_)
        | Error::LeadCountMismatch { .. }
        | Error::BatchTooSmall(_)
        | Error::ChecksumMismatch(_)
        | Error::VersionUnsupported { .. } => ("model", EXIT_MODEL),
        Error::Context { source, .. } => error_class(source),
        _ => ("data", EXIT_DATA),
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("ECGX_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    if let Err(e) = run(cli.command) {
        let (class, code) = error_class(&e);
        eprintln!("error: {class}: {e}");
        std::process::exit(code);
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::TrainAe(args) => cmd_train_ae(args),
        Command::Extract(args) => cmd_extract(args),
        Command::TrainSiamese(args) => cmd_train_siamese(args),
        Command::FinetuneSiamese(args) => cmd_finetune(args),
        Command::TrainIdent(args) => cmd_train_ident(args),
        Command::EvalVerify(args) => cmd_eval_verify(args),
        Command::EvalIdent(args) => cmd_eval_ident(args),
        Command::ExportPairs(args) => cmd_export_pairs(args),
        Command::Roc(args) => cmd_roc(args),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn config_value<T: serde::Serialize>(command: &str, args: &T) -> serde_json::Value {
    serde_json::json!({ "command": command, "args": args })
}

/// Training log plus the resolved invocation, written next to each bundle.
#[derive(serde::Serialize)]
struct TrainReport {
    config: serde_json::Value,
    log: TrainingLog,
}

fn load_features_for_leads(path: &Path, leads: usize) -> Result<FeatureDataset, Error> {
    let fd = load_feature_store(path)?;
    if fd.leads == leads {
        Ok(fd)
    } else if leads == 1 {
        // Lead I sits first in every multi-lead store
        fd.select_lead(0)
    } else {
        Err(Error::LeadCountMismatch {
            expected: leads,
            actual: fd.leads,
        })
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let spec = SyntheticDatasetSpec {
        subjects: args.subjects,
        sessions_per_subject: args.sessions,
        leads: args.leads,
        duration_s: args.duration_s,
        sampling_rate: args.fs,
        seed: args.seed,
    };
    let records = synthesize_dataset(&spec)?;
    let dataset = Dataset {
        name: format!("synthetic-{}", args.seed),
        sampling_rate: args.fs,
        lead_labels: STANDARD_LEADS[..args.leads]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        recording_mode: RecordingMode::OnThePerson,
        records: records.into_iter().map(|r| r.record).collect(),
    };
    let manifest = save_dataset(&args.out, &dataset)?;
    println!(
        "wrote {} records ({} subjects x {} sessions) to {}",
        dataset.records.len(),
        args.subjects,
        args.sessions,
        manifest.display()
    );
    Ok(())
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.dataset)?;
    let filters = design_filters(&FilterSpec::default(), TARGET_RATE)?;
    let mut out = Dataset {
        name: format!("{}-preprocessed", dataset.name),
        sampling_rate: TARGET_RATE,
        lead_labels: dataset.lead_labels.clone(),
        recording_mode: dataset.recording_mode,
        records: Vec::with_capacity(dataset.records.len()),
    };
    for record in &dataset.records {
        let resampled = resample_record(record)?;
        out.records.push(apply_filters(&resampled, &filters)?);
    }
    let manifest = save_dataset(&args.out, &out)?;
    println!(
        "preprocessed {} records to 500 Hz at {}",
        out.records.len(),
        manifest.display()
    );
    Ok(())
}

fn cmd_train_ae(args: TrainAeArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.dataset)?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for record in &dataset.records {
        let peaks = detect_r_peaks(record)?;
        let singles = extract_single_segments(record, &peaks);
        for seg in singles.iter().take(args.singles_per_record) {
            let normalized = normalize_amplitude(seg)?;
            for lead in &normalized.samples {
                rows.push(lead.iter().map(|&v| v as f32).collect());
            }
        }
    }
    if rows.len() < 2 {
        return Err(Error::EmptyDataset("single segments for training"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    rows.shuffle(&mut rng);
    let n_val = ((rows.len() as f64 * args.val_fraction).round() as usize)
        .clamp(1, rows.len() - 1);
    let (val, train) = rows.split_at(n_val);

    let mut ae = Autoencoder::new(args.seed);
    let mut cfg = TrainConfig::new(LossKind::Mse, args.seed);
    cfg.batch_size = args.batch_size;
    cfg.max_epochs = args.max_epochs;
    cfg.initial_lr = args.lr;
    let log = train_autoencoder(&mut ae, train, val, &cfg)?;
    save_bundle(&ae.to_bundle(), &args.out)?;
    let report = TrainReport {
        config: config_value("train-ae", &args),
        log,
    };
    write_json(&args.out.with_extension("train.json"), &report)?;
    println!(
        "trained autoencoder on {} rows, best val mse {:.6} (epoch {}), saved to {}",
        train.len(),
        report.log.best_val_loss,
        report.log.best_epoch,
        args.out.display()
    );
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.dataset)?;
    let ae = Autoencoder::from_bundle(&load_bundle(&args.ae)?)?;
    let (store, warnings) = cache_features(&dataset, &ae)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    save_feature_store(&store, &args.out)?;
    let sessions: usize = store.subjects.iter().map(|s| s.sessions.len()).sum();
    println!(
        "cached features for {} subjects / {} sessions to {}",
        store.n_subjects(),
        sessions,
        args.out.display()
    );
    Ok(())
}

/// Pair generation needs six subjects per side (five distinct impostor
/// sources), so both splits are clamped to at least six.
fn split_subjects_for_validation(
    fd: &FeatureDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(FeatureDataset, FeatureDataset), Error> {
    let mut ids: Vec<String> = fd.subjects.iter().map(|s| s.subject_id.clone()).collect();
    if ids.len() < 12 {
        return Err(Error::TooFewSubjects {
            have: ids.len(),
            need: 12,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5741_4c53);
    ids.shuffle(&mut rng);
    let n_val = ((ids.len() as f64 * val_fraction).round() as usize).clamp(6, ids.len() - 6);
    let (val_ids, train_ids) = ids.split_at(n_val);
    Ok((fd.filter_by_ids(train_ids), fd.filter_by_ids(val_ids)))
}

fn cmd_train_siamese(args: TrainSiameseArgs) -> Result<(), Error> {
    let fd = load_features_for_leads(&args.features, args.leads)?;
    let (train_fd, val_fd) = split_subjects_for_validation(&fd, args.val_fraction, args.seed)?;
    let train_pairs: Vec<PairExample> = ProtocolConfig::new(Scenario::Training, args.seed)
        .generate(&train_fd)?
        .iter()
        .map(ComparisonPair::to_example)
        .collect();
    let val_pairs: Vec<PairExample> =
        ProtocolConfig::new(Scenario::Training, args.seed.wrapping_add(1))
            .generate(&val_fd)?
            .iter()
            .map(ComparisonPair::to_example)
            .collect();

    let mut model = Siamese::new(args.leads, args.seed)?;
    let mut cfg = TrainConfig::new(LossKind::BinaryCrossEntropy, args.seed);
    cfg.batch_size = args.batch_size;
    cfg.max_epochs = args.max_epochs;
    cfg.initial_lr = args.lr;
    let log = train_siamese(&mut model, &train_pairs, &val_pairs, &cfg)?;
    save_bundle(&model.to_bundle(), &args.out)?;
    let report = TrainReport {
        config: config_value("train-siamese", &args),
        log,
    };
    write_json(&args.out.with_extension("train.json"), &report)?;
    println!(
        "trained {}L siamese on {} pairs (val {}), best val bce {:.6}, saved to {}",
        args.leads,
        train_pairs.len(),
        val_pairs.len(),
        report.log.best_val_loss,
        args.out.display()
    );
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<(), Error> {
    let fd = load_feature_store(&args.features)?;
    let mut exclusion = args.exclude.clone();
    if let Some(path) = &args.exclude_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        exclusion.extend(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()));
    }
    let mut model = Siamese::from_bundle(&load_bundle(&args.siamese)?)?;
    let fd = if fd.leads == model.leads {
        fd
    } else if model.leads == 1 {
        fd.select_lead(0)?
    } else {
        return Err(Error::LeadCountMismatch {
            expected: model.leads,
            actual: fd.leads,
        });
    };
    let (train, val) = make_finetune_pairs(&fd, &exclusion, args.seed)?;
    let train: Vec<PairExample> = train.iter().map(ComparisonPair::to_example).collect();
    let val: Vec<PairExample> = val.iter().map(ComparisonPair::to_example).collect();
    let mut cfg = TrainConfig::new(LossKind::BinaryCrossEntropy, args.seed);
    cfg.batch_size = args.batch_size;
    cfg.max_epochs = args.max_epochs;
    cfg.initial_lr = args.lr;
    let log = train_siamese(&mut model, &train, &val, &cfg)?;
    save_bundle(&model.to_bundle(), &args.out)?;
    let report = TrainReport {
        config: config_value("finetune-siamese", &args),
        log,
    };
    write_json(&args.out.with_extension("train.json"), &report)?;
    println!(
        "fine-tuned on {} train / {} val pairs, best val bce {:.6}, saved to {}",
        train.len(),
        val.len(),
        report.log.best_val_loss,
        args.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct IdentReport {
    scenario: String,
    n_subjects: usize,
    train_samples: usize,
    val_samples: usize,
    test_samples: usize,
    test_accuracy: f64,
    config: serde_json::Value,
}

fn cmd_train_ident(args: TrainIdentArgs) -> Result<(), Error> {
    let fd = load_features_for_leads(&args.features, args.leads)?;
    let quotas = IdentQuotas {
        train_per_subject: args.train_quota,
        val_per_subject: args.val_quota,
        test_per_subject: args.test_quota,
    };
    let split = split_identification(&fd, args.scenario.into(), args.seed, quotas)?;
    let siamese = Siamese::from_bundle(&load_bundle(&args.siamese)?)?;
    let mut model = IdentModel::from_siamese(&siamese, split.subject_ids.len(), args.seed)?;
    let mut cfg = TrainConfig::new(LossKind::CategoricalCrossEntropy, args.seed);
    cfg.batch_size = args.batch_size;
    cfg.max_epochs = args.max_epochs;
    cfg.initial_lr = args.lr;
    train_ident_head(&mut model, &split.train, &split.val, &cfg)?;

    let refs: Vec<&ecgx_core::models::FeatureVector> =
        split.test.iter().map(|(f, _)| f).collect();
    let truth: Vec<usize> = split.test.iter().map(|(_, l)| *l).collect();
    let predicted = model.predict(&refs)?;
    let accuracy = compute_accuracy(&predicted, &truth)?;

    save_bundle(&model.to_bundle(), &args.out)?;
    let report = IdentReport {
        scenario: format!("{:?}", IdentScenario::from(args.scenario)),
        n_subjects: split.subject_ids.len(),
        train_samples: split.train.len(),
        val_samples: split.val.len(),
        test_samples: split.test.len(),
        test_accuracy: accuracy,
        config: config_value("train-ident", &args),
    };
    write_json(&args.out.with_extension("report.json"), &report)?;
    println!(
        "identification over {} subjects: test accuracy {:.4}, saved to {}",
        report.n_subjects,
        accuracy,
        args.out.display()
    );
    Ok(())
}

fn score_pair_set(
    model: &mut Siamese,
    pairs: &[ComparisonPair],
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let refs: Vec<(&ecgx_core::models::FeatureVector, &ecgx_core::models::FeatureVector)> =
        pairs.iter().map(|p| (&p.enrol, &p.probe)).collect();
    let scores = model.score_pairs(&refs)?;
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (pair, score) in pairs.iter().zip(scores) {
        match pair.label {
            PairLabel::Genuine => genuine.push(score),
            PairLabel::Impostor => impostor.push(score),
        }
    }
    Ok((genuine, impostor))
}

fn cmd_eval_verify(args: EvalVerifyArgs) -> Result<(), Error> {
    let fd = load_features_for_leads(&args.features, args.leads)?;
    let mut model = Siamese::from_bundle(&load_bundle(&args.siamese)?)?;
    if model.leads != args.leads {
        return Err(Error::LeadCountMismatch {
            expected: args.leads,
            actual: model.leads,
        });
    }
    let scenario: Scenario = args.scenario.into();
    let mut per_run_eer = Vec::with_capacity(args.runs);
    let mut per_run_threshold = Vec::with_capacity(args.runs);
    let mut genuine_count = 0;
    let mut impostor_count = 0;
    for run in 0..args.runs {
        let pairs =
            ProtocolConfig::new(scenario, args.seed.wrapping_add(run as u64)).generate(&fd)?;
        let (genuine, impostor) = score_pair_set(&mut model, &pairs)?;
        if run == 0 {
            genuine_count = genuine.len();
            impostor_count = impostor.len();
        }
        let (eer, threshold) = compute_eer(&genuine, &impostor)?;
        per_run_eer.push(eer);
        per_run_threshold.push(threshold);
    }
    let (mean_eer, std_eer) = aggregate_runs(&per_run_eer)?;
    let report = EvalReport {
        scenario: format!("{scenario:?}"),
        leads: args.leads,
        runs: args.runs,
        genuine_count,
        impostor_count,
        per_run_eer,
        per_run_threshold,
        mean_eer,
        std_eer,
        config: config_value("eval-verify", &args),
    };
    write_json(&args.out, &report)?;
    println!(
        "{} ({}L): mean EER {:.4} +/- {:.4} over {} runs ({} genuine / {} impostor pairs)",
        report.scenario,
        args.leads,
        mean_eer,
        std_eer,
        args.runs,
        genuine_count,
        impostor_count
    );
    Ok(())
}

fn cmd_eval_ident(args: EvalIdentArgs) -> Result<(), Error> {
    let fd = load_features_for_leads(&args.features, args.leads)?;
    let quotas = IdentQuotas {
        train_per_subject: args.train_quota,
        val_per_subject: args.val_quota,
        test_per_subject: args.test_quota,
    };
    let split = split_identification(&fd, args.scenario.into(), args.seed, quotas)?;
    let mut model = IdentModel::from_bundle(&load_bundle(&args.ident)?, args.leads)?;
    if model.n_subjects != split.subject_ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "ident head sized for {} subjects, dataset has {}",
            model.n_subjects,
            split.subject_ids.len()
        )));
    }
    let refs: Vec<&ecgx_core::models::FeatureVector> =
        split.test.iter().map(|(f, _)| f).collect();
    let truth: Vec<usize> = split.test.iter().map(|(_, l)| *l).collect();
    let predicted = model.predict(&refs)?;
    let accuracy = compute_accuracy(&predicted, &truth)?;
    let report = IdentReport {
        scenario: format!("{:?}", IdentScenario::from(args.scenario)),
        n_subjects: split.subject_ids.len(),
        train_samples: split.train.len(),
        val_samples: split.val.len(),
        test_samples: split.test.len(),
        test_accuracy: accuracy,
        config: config_value("eval-ident", &args),
    };
    write_json(&args.out, &report)?;
    println!(
        "identification accuracy {:.4} on {} held-out summaries",
        accuracy,
        report.test_samples
    );
    Ok(())
}

fn cmd_export_pairs(args: ExportPairsArgs) -> Result<(), Error> {
    let fd = load_features_for_leads(&args.features, args.leads)?;
    let pairs = ProtocolConfig::new(args.scenario.into(), args.seed).generate(&fd)?;
    write_text(&args.out, &pair_manifest(&pairs))?;
    println!("exported {} pairs to {}", pairs.len(), args.out.display());
    Ok(())
}

fn cmd_roc(args: RocArgs) -> Result<(), Error> {
    let fd = load_features_for_leads(&args.features, args.leads)?;
    let mut model = Siamese::from_bundle(&load_bundle(&args.siamese)?)?;
    let pairs = ProtocolConfig::new(args.scenario.into(), args.seed).generate(&fd)?;
    let (genuine, impostor) = score_pair_set(&mut model, &pairs)?;
    let points = roc_points(&genuine, &impostor)?;
    let mut out = String::from("threshold,far,frr\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
    }
    write_text(&args.out, &out)?;
    println!("wrote ROC table to {}", args.out.display());
    Ok(())
}
