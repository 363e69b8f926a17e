use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lawcase::backend::BackendKind;
use lawcase::config::EngineConfig;
use lawcase::dataset::LjpMode;
use lawcase::pipeline::{make_synthetic, EvalTask, ErrorKind, Pipeline, PipelineError, StepOutcome};
use lawcase::synthetic::SyntheticConfig;

#[derive(Parser, Debug)]
#[command(name = "lawcase", version, about = "Legal case retrieval, precedent and judgment pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, global = true)]
    choices: Option<usize>,
    #[arg(long, global = true)]
    token_budget: Option<usize>,
    /// Print CSV instead of the aligned table where a step reports metrics.
    #[arg(long, global = true)]
    csv: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Http,
    Oracle,
    UniformRandom,
    AlwaysNotfound,
    Fixed,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Http => BackendKind::Http,
            BackendArg::Oracle => BackendKind::Oracle,
            BackendArg::UniformRandom => BackendKind::UniformRandom,
            BackendArg::AlwaysNotfound => BackendKind::AlwaysNotfound,
            BackendArg::Fixed => BackendKind::Fixed,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Scr,
    Pcr,
    Ljp,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    ZeroShot,
    FewShot,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and validate the corpus.
    Ingest,
    /// Summaries and verdicts via the configured preprocessor.
    Preprocess,
    /// Build and persist the vector index.
    Embed,
    /// Build the precedent graph and its constraint report.
    BuildKg,
    /// Emit train/test manifests.
    Split,
    /// Training sets for the three tasks plus their shuffled union.
    GenTrain,
    /// Evaluate a backend on held-out instances.
    Eval {
        #[arg(value_enum)]
        task: TaskArg,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Retrieval metrics across choice counts.
    Sweep {
        #[arg(long)]
        n_per_size: Option<usize>,
    },
    /// Every step from ingest to the three evaluations.
    RunAll,
    /// Write a deterministic synthetic corpus.
    #[command(hide = true)]
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        cases: usize,
        #[arg(long, default_value_t = 0.4)]
        landmark_fraction: f64,
        #[arg(long, default_value_t = 6)]
        min_precedents: usize,
        #[arg(long, default_value_t = 9)]
        max_precedents: usize,
    },
}

fn load_config(common: &Common) -> Result<EngineConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => EngineConfig::load(path).map_err(|e| PipelineError {
            kind: ErrorKind::Validation,
            step: "config".into(),
            message: e.to_string(),
        })?,
        None => EngineConfig::default(),
    };
    if let Some(p) = &common.corpus {
        config.corpus_path = p.clone();
    }
    if let Some(p) = &common.output_dir {
        config.output_dir = p.clone();
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(j) = common.jobs {
        config.jobs = j;
    }
    if let Some(b) = common.backend {
        config.backend.kind = b.into();
        if config.backend.seed.is_none() && !matches!(b, BackendArg::Http) {
            config.backend.seed = Some(config.seed);
        }
    }
    if let Some(c) = common.choices {
        config.choices = c;
    }
    if let Some(t) = common.token_budget {
        config.token_budget = t;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<Vec<StepOutcome>, PipelineError> {
    if let Command::MakeSynthetic { out, cases, landmark_fraction, min_precedents, max_precedents } = &cli.command {
        let config = SyntheticConfig {
            cases: *cases,
            landmark_fraction: *landmark_fraction,
            min_precedents: *min_precedents,
            max_precedents: *max_precedents,
            seed: cli.common.seed.unwrap_or(SyntheticConfig::default().seed),
            ..Default::default()
        };
        let outputs = make_synthetic(&config, out)?;
        return Ok(vec![StepOutcome {
            step: "make-synthetic".into(),
            summary: format!("{} synthetic case(s) written to {}\n", cases, out.display()),
            outputs,
            partial: false,
            exit_code: 0,
        }]);
    }
    let mut config = load_config(&cli.common)?;
    if let Command::Sweep { n_per_size: Some(n) } = &cli.command {
        config.sweep.n_per_size = *n;
    }
    let pipeline = Pipeline::new(config)?;
    let one = |r: Result<StepOutcome, PipelineError>| r.map(|o| vec![o]);
    match &cli.command {
        Command::Ingest => one(pipeline.ingest()),
        Command::Preprocess => one(pipeline.preprocess()),
        Command::Embed => one(pipeline.embed()),
        Command::BuildKg => one(pipeline.build_kg()),
        Command::Split => one(pipeline.split()),
        Command::GenTrain => one(pipeline.gen_train()),
        Command::Eval { task, mode } => {
            let task = match task {
                TaskArg::Scr => EvalTask::Scr,
                TaskArg::Pcr => EvalTask::Pcr,
                TaskArg::Ljp => EvalTask::Ljp,
            };
            let mode = mode.map(|m| match m {
                ModeArg::ZeroShot => LjpMode::ZeroShot,
                ModeArg::FewShot => LjpMode::FewShot,
            });
            one(pipeline.eval(task, mode))
        }
        Command::Sweep { .. } => one(pipeline.sweep()),
        Command::RunAll => pipeline.run_all(),
        Command::MakeSynthetic { .. } => unreachable!("handled above"),
    }
}

fn print_outcome(outcome: &StepOutcome, csv: bool) {
    let csv_file = outcome.outputs.iter().find(|p| p.extension().is_some_and(|e| e == "csv"));
    match (csv, csv_file) {
        (true, Some(path)) => match std::fs::read_to_string(path) {
            Ok(text) => print!("{text}"),
            Err(e) => eprintln!("cannot read {}: {e}", path.display()),
        },
        _ => {
            println!("[{}]", outcome.step);
            print!("{}", outcome.summary);
            if !outcome.summary.ends_with('\n') {
                println!();
            }
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcomes) => {
            let mut code = 0;
            for o in &outcomes {
                print_outcome(o, cli.common.csv);
                if code == 0 {
                    code = o.exit_code;
                }
            }
            ExitCode::from(code as u8)
        }
        Err(e) => {
            tracing::error!("{e}");
            let report = serde_json::json!({ "error": e });
            eprintln!("{}", serde_json::to_string_pretty(&report).expect("error report serialises"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
