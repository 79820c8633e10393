use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ktlab_core::dataio::{
    filter_short_sequences, generate_synthetic, parse_interaction_log, parse_with_vocabulary,
    split_by_student, Dataset, DatasetManifest, SkillVocabulary, SplitRatios,
};
use ktlab_core::trainer::{
    compare_variants, evaluate, load_checkpoint, save_checkpoint, tiny_gradient_check, train,
    Hyperparameters, MetricsReport, VariantId,
};
use ktlab_core::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_STEP: f64 = 1e-4;

/// Knowledge-tracing laboratory: synthesize or prepare interaction logs,
/// train and evaluate DKT-STDRL, its baselines and ablations.
#[derive(Parser, Debug)]
#[command(name = "ktlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic interaction log from a logistic ability model.
    Synth(SynthArgs),
    /// Drop students with two or fewer records.
    Prepare(PrepareArgs),
    /// Split students 55/15/30 into train.csv, val.csv and test.csv.
    Split(SplitArgs),
    /// Train one model variant and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a test log and write a metrics report.
    Eval(EvalArgs),
    /// Full-model gradient check on the tiny configuration.
    Gradcheck(GradcheckArgs),
    /// Train and test several variants over several seeds; write mean metrics as CSV.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of students.
    #[arg(long)]
    students: usize,
    /// Number of distinct skills M.
    #[arg(long)]
    skills: usize,
    /// Records per student.
    #[arg(long = "len")]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Input CSV (student_id,skill_id,correct).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Input CSV (student_id,skill_id,correct).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving train.csv, val.csv and test.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct HpArgs {
    /// Hyperparameter override `key=value`; repeatable.
    #[arg(long = "hp", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// One of dkt-stdrl, dkt, ckt, dkt-tdrl, dkt-sdrl1, dkt-stdrrp, dkt-stdrrj.
    #[arg(long)]
    variant: String,
    /// Training CSV.
    #[arg(long)]
    train: PathBuf,
    /// Validation CSV (model selection by validation AUC).
    #[arg(long)]
    val: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out_model: PathBuf,
    #[command(flatten)]
    hp: HpArgs,
    /// Optional JSON file receiving the per-epoch history.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Test CSV.
    #[arg(long)]
    test: PathBuf,
    /// JSON metrics report output path.
    #[arg(long)]
    report: PathBuf,
    /// Disable the backward LSTM direction at inference.
    #[arg(long)]
    strict_causal: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Variant to check.
    #[arg(long, default_value = "dkt-stdrl")]
    variant: String,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// `all` or a comma-separated list of variant ids.
    #[arg(long, default_value = "all")]
    variants: String,
    /// Directory holding train.csv, val.csv and test.csv (as written by `split`).
    #[arg(long)]
    data_dir: PathBuf,
    /// Number of repetitions; run i uses seed `seed + i`.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hp: HpArgs,
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::UnknownVariant(_) => 1,
            Error::Parse { .. }
            | Error::EmptyDataset
            | Error::Split { .. }
            | Error::IndexOutOfRange { .. }
            | Error::Dimension { .. }
            | Error::Checkpoint(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::NonFiniteGradient(_)
            | Error::EmptyPredictions
            | Error::Diverged { .. }
            | Error::SingleClassTargets => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes `ds` as CSV plus its manifest sidecar.
fn write_dataset(path: &Path, ds: &Dataset) -> CliResult {
    let csv = ds.to_csv();
    fs::write(path, &csv).map_err(|e| io_failure(path, e))?;
    let manifest =
        serde_json::to_string_pretty(&ds.manifest(csv.as_bytes())).map_err(Error::from)?;
    let side = sidecar(path);
    fs::write(&side, manifest + "\n").map_err(|e| io_failure(&side, e))
}

/// Vocabulary from the sidecar of `path`, if one exists; its checksum must
/// match the CSV bytes.
fn sidecar_vocabulary(path: &Path, csv: &[u8]) -> Result<Option<SkillVocabulary>, Failure> {
    let side = sidecar(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read(&side).map_err(|e| io_failure(&side, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&text).map_err(Error::from)?;
    if manifest.sha256 != ktlab_core::dataio::sha256_hex(csv) {
        return Err(Failure {
            code: 2,
            message: format!("{} does not match {}", side.display(), path.display()),
        });
    }
    Ok(Some(manifest.vocabulary()?))
}

/// Reads a CSV; the vocabulary is `vocabulary`, else the sidecar's, else
/// built from the file.
fn read_dataset(path: &Path, vocabulary: Option<&SkillVocabulary>) -> Result<Dataset, Failure> {
    let csv = fs::read(path).map_err(|e| io_failure(path, e))?;
    let located = |e: Error| Failure {
        message: format!("{}: {}", path.display(), e),
        ..Failure::from(e)
    };
    let ds = match vocabulary {
        Some(v) => parse_with_vocabulary(csv.as_slice(), v),
        None => match sidecar_vocabulary(path, &csv)? {
            Some(v) => parse_with_vocabulary(csv.as_slice(), &v),
            None => parse_interaction_log(csv.as_slice()),
        },
    };
    ds.map_err(located)
}

fn hyperparameters(args: &HpArgs) -> Result<Hyperparameters, Failure> {
    let mut hp = Hyperparameters::default();
    hp.apply_overrides(&args.overrides)?;
    Ok(hp)
}

fn report_json(m: &MetricsReport) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize") + "\n"
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

fn synth(a: SynthArgs) -> CliResult {
    let ds = generate_synthetic(a.students, a.skills, a.length, a.seed)?;
    write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} students, {} records to {}",
        ds.student_count(),
        ds.record_count(),
        a.out.display()
    );
    Ok(())
}

fn prepare(a: PrepareArgs) -> CliResult {
    let ds = read_dataset(&a.input, None)?;
    let before = ds.student_count();
    let kept = filter_short_sequences(ds);
    if kept.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    write_dataset(&a.out, &kept)?;
    println!("kept {} of {} students", kept.student_count(), before);
    Ok(())
}

fn split(a: SplitArgs) -> CliResult {
    let ds = read_dataset(&a.input, None)?;
    let s = split_by_student(&ds, SplitRatios::default(), a.seed)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_failure(&a.out_dir, e))?;
    for (name, part) in [
        ("train.csv", &s.train),
        ("val.csv", &s.val),
        ("test.csv", &s.test),
    ] {
        write_dataset(&a.out_dir.join(name), part)?;
    }
    println!(
        "train {} / val {} / test {} students",
        s.train.student_count(),
        s.val.student_count(),
        s.test.student_count()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let variant: VariantId = a.variant.parse()?;
    let hp = hyperparameters(&a.hp)?;
    let train_ds = read_dataset(&a.train, None)?;
    let val_ds = read_dataset(&a.val, Some(&train_ds.vocabulary))?;
    let outcome = train::<f64>(variant, &hp, &train_ds, &val_ds)?;
    for h in &outcome.history {
        let auc = h.val.as_ref().and_then(|v| v.auc);
        eprintln!(
            "epoch {:>3}  lr {:.6}  train_loss {:.6}  val_auc {}",
            h.epoch + 1,
            h.learning_rate,
            h.train_loss,
            fmt_metric(auc)
        );
    }
    save_checkpoint(
        &a.out_model,
        &outcome.model,
        train_ds.vocabulary.raw_ids(),
        &outcome.history,
        outcome.best_epoch,
    )?;
    if let Some(path) = &a.history {
        let json = serde_json::to_string_pretty(&outcome.history).map_err(Error::from)?;
        fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?;
    }
    println!(
        "{variant}: kept epoch {} of {}, checkpoint {}",
        outcome.best_epoch + 1,
        outcome.history.len(),
        a.out_model.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> CliResult {
    let ckpt = load_checkpoint::<f64>(&a.model)?;
    let vocabulary = SkillVocabulary::from_raw_ids(ckpt.skills.clone())?;
    let test = read_dataset(&a.test, Some(&vocabulary))?;
    ckpt.expect_skill_count(test.skill_count())?;
    let report = evaluate(&ckpt.model, &test, a.strict_causal)?;
    fs::write(&a.report, report_json(&report)).map_err(|e| io_failure(&a.report, e))?;
    println!(
        "rmse {:.6}  auc {}  acc {:.6}  r2 {}  n {}",
        report.rmse,
        fmt_metric(report.auc),
        report.acc,
        fmt_metric(report.r2),
        report.count
    );
    if report.auc.is_none() {
        return Err(Error::SingleClassTargets.into());
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CliResult {
    let variant: VariantId = a.variant.parse()?;
    let c = tiny_gradient_check(variant, a.seed, GRADCHECK_STEP)?;
    let max = c.report.max_error();
    println!(
        "{variant}: {} parameters in {} tensors, max relative error {max:.3e}",
        c.parameter_count,
        c.report.per_param.len()
    );
    if max >= GRADCHECK_TOLERANCE {
        let (name, err) = c.report.worst().cloned().unwrap_or_default();
        return Err(Failure {
            code: 3,
            message: format!("gradient check failed: {name} has relative error {err:.3e} >= {GRADCHECK_TOLERANCE:e}"),
        });
    }
    Ok(())
}

fn compare(a: CompareArgs) -> CliResult {
    let variants: Vec<VariantId> = if a.variants.trim().eq_ignore_ascii_case("all") {
        VariantId::ALL.to_vec()
    } else {
        a.variants
            .split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()?
    };
    if a.seeds == 0 {
        return Err(Error::Config("--seeds must be positive".into()).into());
    }
    let hp = hyperparameters(&a.hp)?;
    let train_ds = read_dataset(&a.data_dir.join("train.csv"), None)?;
    let val = read_dataset(&a.data_dir.join("val.csv"), Some(&train_ds.vocabulary))?;
    let test = read_dataset(&a.data_dir.join("test.csv"), Some(&train_ds.vocabulary))?;
    let split = ktlab_core::dataio::Split {
        train: train_ds,
        val,
        test,
    };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds).collect();
    let rows = compare_variants(&variants, &hp, &split, &seeds)?;
    let mut csv = String::from("variant,rmse,auc,acc,r2\n");
    for (v, m) in &rows {
        csv.push_str(&format!(
            "{v},{:.6},{},{:.6},{}\n",
            m.rmse,
            fmt_metric(m.auc),
            m.acc,
            fmt_metric(m.r2)
        ));
    }
    fs::write(&a.out, &csv).map_err(|e| io_failure(&a.out, e))?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Prepare(a) => prepare(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Compare(a) => compare(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
