//! `d2i`: dataset generation, training, evaluation, format checking and
//! curve export for the toy D2I engine.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error, 3 I/O error.

mod curves;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2i_core::env::{read_jsonl, write_jsonl, PromptInstance, PromptRegistry};
use d2i_core::eval::{compare_modes, evaluate, EvalConfig, EvalReport, ItemRecord};
use d2i_core::grammar::{parse_tagged, spec_for, validate, ReasoningMode, StrategyKind};
use d2i_core::policy::{PolicyModel, PolicyParams};
use d2i_core::trainer::{read_log, run_training, Checkpoint, TrainConfig};
use d2i_core::vocab::Vocab;
use d2i_core::Error;

#[derive(Debug, Parser)]
#[command(name = "d2i", version, about = "Deliberate-to-intuitive GRPO on a toy grid task")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags override the config file.
#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    strategy: Option<StrategyKind>,
    #[arg(long, global = true)]
    mode: Option<ReasoningMode>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
    #[arg(long, global = true)]
    kl_beta: Option<f64>,
    #[arg(long, global = true)]
    clip_eps: Option<f64>,
    /// Subtract the KL penalty inside the clipped term.
    #[arg(long, global = true)]
    kl_in_clip: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory (or file, for `export-curves`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate `train.jsonl` and `test.jsonl`.
    GenData,
    /// Train a policy; writes the log, checkpoints and `checkpoint.json`.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the untrained prior) in one mode.
    Eval(EvalArgs),
    /// Evaluate deliberate and intuitive modes on the same items and seeds.
    Compare(EvalArgs),
    /// Validate one response; exits 0 iff its format reward is 1.
    CheckFormat {
        /// File holding the response; `-` reads standard input.
        #[arg(conflicts_with = "text", required_unless_present = "text")]
        file: Option<PathBuf>,
        /// The response itself.
        #[arg(long)]
        text: Option<String>,
    },
    /// Pass@k from the per-item records written by `eval`.
    Passk {
        items: PathBuf,
        #[arg(long)]
        k: Vec<usize>,
    },
    /// CSV and SVG learning curves from a training log.
    ExportCurves { log: PathBuf },
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint to evaluate; omitted means the untrained prior policy.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Test split; defaults to `test_data` from the config, else a generated split.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    greedy: bool,
}

/// A failure together with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn domain(message: impl Into<String>) -> Failure {
        Failure { code: 1, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        let code = match e {
            Error::Io { .. } | Error::DatasetMissing(_) => 3,
            Error::InvalidConfig(_) | Error::UnknownToken(_) => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("D2I_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<u8> {
    let common = &cli.common;
    match &cli.command {
        Command::GenData => gen_data(common),
        Command::Train { resume } => train(common, resume.as_deref()),
        Command::Eval(args) => eval(common, args),
        Command::Compare(args) => compare(common, args),
        Command::CheckFormat { file, text } => check_format(common, file.as_deref(), text.as_deref()),
        Command::Passk { items, k } => passk(items, k),
        Command::ExportCurves { log } => export_curves(common, log),
    }
}

/// The config file (or defaults) with flag overrides applied.
fn load_config(common: &Common) -> CliResult<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = common.seed {
        cfg.seed = v;
    }
    if let Some(v) = common.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = common.steps {
        cfg.steps = v;
    }
    if let Some(v) = common.group_size {
        cfg.grpo.group_size = v;
    }
    if let Some(v) = common.kl_beta {
        cfg.grpo.kl_beta = v;
    }
    if let Some(v) = common.clip_eps {
        cfg.grpo.clip_epsilon = v;
    }
    if common.kl_in_clip {
        cfg.grpo.kl_in_clip = true;
    }
    if let Some(v) = common.workers {
        cfg.workers = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> CliResult<&Path> {
    common.out.as_deref().ok_or_else(|| Failure::usage("--out is required"))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn gen_data(common: &Common) -> CliResult<u8> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    create_dir(out)?;
    let (train, test) = cfg.generate_splits(&Vocab::canonical())?;
    write_jsonl(out.join("train.jsonl"), &train)?;
    write_jsonl(out.join("test.jsonl"), &test)?;
    println!("wrote {} training and {} test items to {}", train.len(), test.len(), out.display());
    Ok(0)
}

fn train(common: &Common, resume: Option<&Path>) -> CliResult<u8> {
    let mut cfg = load_config(common)?;
    let out = out_dir(common)?;
    create_dir(out)?;
    if cfg.train_data.is_none() {
        let path = out.join("train.jsonl");
        if !path.exists() {
            let (train, test) = cfg.generate_splits(&Vocab::canonical())?;
            write_jsonl(&path, &train)?;
            write_jsonl(out.join("test.jsonl"), &test)?;
            log::info!("generated {} training items into {}", train.len(), out.display());
        }
        cfg.train_data = Some(path);
    }
    let outcome = run_training(&cfg, out, resume)?;
    if let Some(last) = outcome.records.last() {
        println!(
            "step {} total {:.4} format {:.4} accuracy {:.4} kl {:.4}",
            last.step, last.mean_total_reward, last.mean_format_reward, last.mean_accuracy_reward, last.mean_kl
        );
    }
    println!("checkpoint {}", outcome.checkpoint_path.display());
    Ok(0)
}

struct EvalSetup {
    model: PolicyModel,
    params: PolicyParams,
    test: Vec<PromptInstance>,
    config: EvalConfig,
    registry: PromptRegistry,
}

fn eval_setup(common: &Common, args: &EvalArgs, mode: ReasoningMode) -> CliResult<EvalSetup> {
    let cfg = load_config(common)?;
    let model = PolicyModel::new(Vocab::canonical(), cfg.grpo.max_response_len)?;
    let params = match &args.checkpoint {
        Some(path) => Checkpoint::load(path)?.policy,
        None => model.initial_params(&cfg.prior),
    };
    let test = match args.test.as_ref().or(cfg.test_data.as_ref()) {
        Some(path) => read_jsonl(path, model.vocab())?,
        None => cfg.generate_splits(model.vocab())?.1,
    };
    let config = EvalConfig {
        greedy: args.greedy || cfg.eval.greedy,
        temperature: cfg.grpo.temperature,
        max_response_len: cfg.grpo.max_response_len,
        ..EvalConfig::new(mode, cfg.strategy, args.k_max.unwrap_or(cfg.eval.k_max), cfg.seed)
    };
    let registry = PromptRegistry::standard(model.vocab())?;
    // Only fails if a pool already exists, which cannot happen in this one-shot process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    Ok(EvalSetup { model, params, test, config, registry })
}

fn print_report(r: &EvalReport) {
    let passes: Vec<String> = r.pass_at.iter().map(|(k, v)| format!("pass@{k} {v:.4}")).collect();
    println!(
        "{} {}: accuracy {:.4} format {:.4} {}",
        r.strategy,
        r.mode,
        r.accuracy,
        r.format_compliance,
        passes.join(" ")
    );
}

fn eval(common: &Common, args: &EvalArgs) -> CliResult<u8> {
    let mode = common.mode.unwrap_or(ReasoningMode::Intuitive);
    let s = eval_setup(common, args, mode)?;
    let report = evaluate(&s.model, &s.params, &s.test, &s.config, &s.registry)?;
    print_report(&report);
    if let Some(out) = &common.out {
        report.write(out, &format!("eval_{}_{}", report.strategy, report.mode))?;
    }
    Ok(0)
}

fn compare(common: &Common, args: &EvalArgs) -> CliResult<u8> {
    let s = eval_setup(common, args, ReasoningMode::Deliberate)?;
    let paired = compare_modes(&s.model, &s.params, &s.test, &s.config, &s.registry)?;
    print_report(&paired.deliberate);
    print_report(&paired.intuitive);
    let deltas: Vec<String> = paired.delta_pass_at.iter().map(|(k, v)| format!("pass@{k} {v:+.4}")).collect();
    println!("intuitive - deliberate: accuracy {:+.4} {}", paired.delta_accuracy, deltas.join(" "));
    if let Some(out) = &common.out {
        create_dir(out)?;
        let path = out.join(format!("compare_{}.json", paired.strategy));
        let text = serde_json::to_string_pretty(&paired).map_err(|e| Error::json("compare report", e))?;
        write_file(&path, &text)?;
        paired.deliberate.write(out, &format!("eval_{}_deliberate", paired.strategy))?;
        paired.intuitive.write(out, &format!("eval_{}_intuitive", paired.strategy))?;
    }
    Ok(0)
}

fn check_format(common: &Common, file: Option<&Path>, text: Option<&str>) -> CliResult<u8> {
    let strategy = common.strategy.unwrap_or(StrategyKind::Base);
    let mode = common.mode.unwrap_or(ReasoningMode::Deliberate);
    let response = match (text, file) {
        (Some(t), _) => t.to_string(),
        (None, Some(p)) if p == Path::new("-") => {
            std::io::read_to_string(std::io::stdin()).map_err(|e| Error::io("<stdin>", e))?
        }
        (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        (None, None) => return Err(Failure::usage("give a response file or --text")),
    };
    let vocab = Vocab::canonical();
    let tokens = vocab.tokenize(&response)?;
    let (ok, violations) = validate(&parse_tagged(&tokens, &vocab), &spec_for(strategy, mode), &vocab);
    for v in &violations {
        println!("{v}");
    }
    Ok(if ok { 0 } else { 1 })
}

fn passk(items: &Path, ks: &[usize]) -> CliResult<u8> {
    let text = std::fs::read_to_string(items).map_err(|e| Error::io(items, e))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ItemRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: items.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::EmptyTestSet.into());
    }
    let available = records.iter().map(|r| r.samples.len()).min().unwrap_or(0);
    let ks: Vec<usize> = if ks.is_empty() { (1..=available).collect() } else { ks.to_vec() };
    for &k in &ks {
        if k == 0 || k > available {
            return Err(Failure::usage(format!("k = {k} outside 1..={available}")));
        }
        let hit = records.iter().filter(|r| r.samples.iter().take(k).any(|s| s.accuracy == 1.0)).count();
        println!("pass@{k} {:.4}", hit as f64 / records.len() as f64);
    }
    Ok(0)
}

fn export_curves(common: &Common, log: &Path) -> CliResult<u8> {
    let records = read_log(log)?;
    if records.is_empty() {
        return Err(Failure::domain(format!("{}: log has no records", log.display())));
    }
    let csv_path = match &common.out {
        Some(p) => p.clone(),
        None => log.with_extension("csv"),
    };
    if let Some(parent) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let svg_path = csv_path.with_extension("svg");
    write_file(&csv_path, &curves::to_csv(&records))?;
    write_file(&svg_path, &curves::total_reward_svg(&records))?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(0)
}
