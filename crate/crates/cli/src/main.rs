mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use imm_core::experiments::output::{mark_failed, output_paths, write_atomic, write_results_with_sidecar, OutputPaths};
use imm_core::experiments::plot::series_from_rows;
use imm_core::objectives::{counterexample_instance, induced_table};
use imm_core::prob::Vocab;
use imm_core::restricted::{kn_fit, kn_prob, read_corpus, KneserNeyBigram, DEFAULT_DISCOUNT};
use imm_core::verify::{check_counterexample, run_all, VerifyOptions};

use config::{FileConfig, Overrides, RunManifest};

#[derive(Parser)]
#[command(name = "imm", version, about = "Induced model matching experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the numerical self-checks.
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, hide = true)]
        tamper_crosstalk: bool,
    },
    /// Run an experiment and write results under `--out`.
    Run(RunArgs),
    /// Print the inconsistency counterexample.
    Counterexample,
    /// Fit or query a Kneser-Ney bigram model.
    Kn {
        #[command(subcommand)]
        command: KnCommand,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Logreg,
    Lm,
    Rl,
    Quality,
    Serialized,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Logreg => "logreg",
            Self::Lm => "lm",
            Self::Rl => "rl",
            Self::Quality => "quality",
            Self::Serialized => "serialized",
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    experiment: Experiment,
    /// TOML config, or a JSON manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the IMM_SEED environment variable and the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Restrict size sweeps to a single training size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum KnCommand {
    Fit {
        /// Whitespace-tokenized text, one sentence per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
        discount: f64,
    },
    Query {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        context: String,
        /// Print only this token's probability instead of the full row.
        #[arg(long)]
        next: Option<String>,
    },
}

enum Failure {
    Verify(String),
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Verify(_) | Self::Runtime(_) => 1,
            Self::Config(_) => 2,
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn verify(seed: Option<u64>, tamper_crosstalk: bool) -> Result<(), Failure> {
    let seed = config::resolve_seed(seed).map_err(Failure::Config)?.unwrap_or(0);
    let checks = run_all(&VerifyOptions { seed, tamper_crosstalk }).map_err(runtime)?;
    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verify(format!("failed checks: {}", failed.join(", "))))
    }
}

fn counterexample() -> Result<(), Failure> {
    let inst = counterexample_instance();
    let pbar = induced_table(&inst.pi, &inst.p);
    println!("context pair (x-1, x-2): pi, P(y=0), P(y=1)");
    for a in 0..2 {
        for b in 0..2 {
            println!("  ({a}, {b}): {:.2}, {:.2}, {:.2}", inst.pi[a][b], inst.p[0][a][b], inst.p[1][a][b]);
        }
    }
    for (a, _) in pbar[0].iter().enumerate() {
        println!("induced P(y | x-1 = {a}): {:.4}, {:.4}", pbar[0][a], pbar[1][a]);
    }
    let check = check_counterexample();
    println!("{}", check.line());
    if check.passed {
        Ok(())
    } else {
        Err(Failure::Verify("counterexample value out of tolerance".into()))
    }
}

fn write_outputs(root: &Path, exp: Experiment, cfg: &FileConfig, paths: &OutputPaths, started: u64) -> Result<(), Failure> {
    let produced = run::run_experiment(exp, cfg).map_err(runtime)?;
    let dir = paths.csv.parent().expect("results dir");
    let stem = paths.csv.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    fs::create_dir_all(dir).map_err(runtime)?;
    let mut outputs = vec![format!("{stem}.csv"), format!("{stem}.json")];
    for chart in &produced.charts {
        let name = format!("{stem}-{}.svg", chart.name);
        write_atomic(&dir.join(&name), chart.render(&produced.rows).as_bytes()).map_err(runtime)?;
        outputs.push(name);
    }
    for (suffix, content) in &produced.extras {
        let name = format!("{stem}.{suffix}");
        write_atomic(&dir.join(&name), content.as_bytes()).map_err(runtime)?;
        outputs.push(name);
    }
    let manifest = RunManifest {
        experiment: exp.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed(exp),
        config: cfg.clone(),
        started_unix: started,
        finished_unix: unix_now(),
        outputs,
    };
    write_results_with_sidecar(root, exp.name(), &cfg.hashed(exp), &manifest, &produced.rows).map_err(runtime)?;
    for chart in &produced.charts {
        for s in series_from_rows(&produced.rows, chart.metric) {
            for (x, sum) in &s.points {
                println!("{} {} x={x}: mean {:.4} [p10 {:.4}, p90 {:.4}]", chart.metric, s.name, sum.mean, sum.p10, sum.p90);
            }
        }
    }
    if exp == Experiment::Lm {
        for metric in ["full_kl", "induced_ce"] {
            for s in series_from_rows(&produced.rows, metric) {
                println!("{metric} {}: mean {:.5}", s.name, s.points[0].1.mean);
            }
        }
    }
    println!("wrote {}", paths.csv.display());
    Ok(())
}

fn run_cmd(args: RunArgs) -> Result<(), Failure> {
    let seed = config::resolve_seed(args.seed).map_err(Failure::Config)?;
    let mut cfg = match &args.config {
        Some(p) => config::load(p).map_err(Failure::Config)?,
        None => FileConfig::default(),
    };
    cfg.apply(&Overrides { seed, n: args.n, lambda: args.lambda, runs: args.runs, epochs: args.epochs });
    cfg.validate(args.experiment).map_err(Failure::Config)?;
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    }
    let exp = args.experiment;
    let paths = output_paths(&args.out, exp.name(), &cfg.hashed(exp)).map_err(runtime)?;
    let res = write_outputs(&args.out, exp, &cfg, &paths, unix_now());
    if let Err(Failure::Runtime(msg)) = &res {
        mark_failed(&paths, msg);
    }
    res
}

fn kn(command: KnCommand) -> Result<(), Failure> {
    match command {
        KnCommand::Fit { corpus, out, discount } => {
            let text = fs::read_to_string(&corpus).map_err(|e| Failure::Config(format!("{}: {e}", corpus.display())))?;
            let mut vocab = Vocab::new();
            let ids = read_corpus(&text, &mut vocab);
            let model = kn_fit(&ids, vocab.len(), discount).map_err(|e| Failure::Config(e.to_string()))?;
            write_atomic(&out, model.to_text(&vocab).as_bytes()).map_err(runtime)?;
            println!("fitted {} tokens over a vocabulary of {}", ids.len(), vocab.len());
        }
        KnCommand::Query { model, context, next } => {
            let text = fs::read_to_string(&model).map_err(|e| Failure::Config(format!("{}: {e}", model.display())))?;
            let (model, vocab) = KneserNeyBigram::from_text(&text).map_err(|e| Failure::Config(e.to_string()))?;
            let ctx = vocab.id(&context).map_err(|e| Failure::Config(e.to_string()))?;
            match next {
                Some(tok) => {
                    let y = vocab.id(&tok).map_err(|e| Failure::Config(e.to_string()))?;
                    println!("{}", kn_prob(&model, y, ctx).map_err(runtime)?);
                }
                None => {
                    for (y, tok) in vocab.tokens().iter().enumerate() {
                        println!("{tok}\t{}", kn_prob(&model, y as u32, ctx).map_err(runtime)?);
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Verify { seed, tamper_crosstalk } => verify(seed, tamper_crosstalk),
        Command::Run(args) => run_cmd(args),
        Command::Counterexample => counterexample(),
        Command::Kn { command } => kn(command),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Verify(m) => ("verification failed", m),
                Failure::Config(m) => ("config error", m),
                Failure::Runtime(m) => ("error", m),
            };
            eprintln!("{kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
