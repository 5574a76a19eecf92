use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sverl::characteristics::Removal;
use sverl::env::{self, ReferenceKind};
use sverl::explain::{to_canonical_json, ExplanationRequest, Explainer, Method, OutputFormat, Target};
use sverl::mdp::SolverConfig;
use sverl::reproduce::{reproduce, table_ids, ReproductionReport, TABLES};
use sverl::Error;

mod exit {
    pub const IO: u8 = 1;
    pub const UNKNOWN_ENV: u8 = 3;
    pub const SOLVER: u8 = 4;
    pub const CONDITIONING: u8 = 5;
    pub const MISMATCH: u8 = 6;
    pub const INVALID_INPUT: u8 = 7;
}

#[derive(Parser)]
#[command(name = "sverl", version, about = "Shapley-value explanations of tabular RL agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in environments.
    List {
        #[arg(long)]
        json: bool,
        #[arg(long, default_value = "table")]
        output: OutputFormat,
    },
    /// Print values, policy and steady-state distribution.
    Solve {
        #[command(flatten)]
        env: EnvArg,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value = "table")]
        output: OutputFormat,
    },
    /// Shapley attributions for one state.
    Explain(ExplainArgs),
    /// Recompute the reference example tables; `all` runs every table.
    Reproduce {
        #[arg(value_name = "TABLE")]
        ids: Vec<String>,
        #[arg(long, default_value = "table")]
        output: OutputFormat,
    },
}

#[derive(Args)]
struct EnvArg {
    /// Catalog name or interchange JSON file.
    #[arg(value_name = "ENV", required_unless_present = "env")]
    positional: Option<String>,
    #[arg(long = "env", conflicts_with = "positional")]
    env: Option<String>,
}

impl EnvArg {
    fn name(&self) -> &str {
        self.env.as_deref().or(self.positional.as_deref()).unwrap_or_default()
    }
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    env: EnvArg,
    #[arg(long)]
    target: Target,
    /// Feature assignment, e.g. `direction=R,distance=10`.
    #[arg(long)]
    state: String,
    #[arg(long)]
    action: Option<String>,
    #[arg(long, conflicts_with = "action")]
    all_actions: bool,
    #[arg(long, default_value = "conditional")]
    removal: Removal,
    #[arg(long, default_value = "exact")]
    method: Method,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value = "table")]
    output: OutputFormat,
    /// Include every coalition's characteristic value.
    #[arg(long)]
    verbose: bool,
}

enum Failure {
    Lib(Error),
    Mismatch(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::UnknownEnvironment(_) => exit::UNKNOWN_ENV,
        Error::EpisodicSolvability(_) | Error::ImproperPolicy(_) => exit::SOLVER,
        Error::ZeroMassConditioning(_) | Error::InvalidComposite(_) | Error::EmptyRenormalisationSupport(_) => {
            exit::CONDITIONING
        }
        Error::Io(_) => exit::IO,
        Error::InvalidMdp(_)
        | Error::InvalidPolicy(_)
        | Error::InvalidArgument(_)
        | Error::EnumerationLimit { .. }
        | Error::UnknownTable(_)
        | Error::StateSelector(_)
        | Error::Format(_) => exit::INVALID_INPUT,
    }
}

#[derive(Serialize)]
struct ListEntry {
    name: &'static str,
    states: usize,
    features: usize,
    reference: ReferenceKind,
    description: &'static str,
}

fn cmd_list(json: bool) -> Result<String, Failure> {
    if !json {
        return Ok(env::list_lines());
    }
    let entries: Vec<ListEntry> = env::catalog()
        .iter()
        .map(|e| {
            let built = (e.build)();
            ListEntry {
                name: e.name,
                states: built.mdp.n_non_terminal(),
                features: built.mdp.n_features(),
                reference: e.reference,
                description: e.doc,
            }
        })
        .collect();
    Ok(to_canonical_json(&entries)?)
}

fn cmd_explain(args: &ExplainArgs) -> Result<String, Failure> {
    let ex = Explainer::open(args.env.name(), SolverConfig::with_tol(args.tol))?;
    let req = ExplanationRequest {
        env: args.env.name().to_string(),
        target: args.target,
        state: args.state.clone(),
        action: args.action.clone(),
        all_actions: args.all_actions,
        removal: args.removal,
        method: args.method,
        samples: args.samples,
        seed: args.seed,
        tol: args.tol,
        verbose: args.verbose,
    };
    Ok(ex.explain(&req)?.render(args.output)?)
}

fn cmd_reproduce(ids: &[String], output: OutputFormat) -> Result<String, Failure> {
    let ids: Vec<String> = if ids.is_empty() || ids.iter().any(|i| i == "all") {
        table_ids().map(str::to_string).collect()
    } else {
        ids.to_vec()
    };
    let reports = ids.iter().map(|id| reproduce(id)).collect::<Result<Vec<ReproductionReport>, _>>()?;
    let text = match output {
        OutputFormat::Json => to_canonical_json(&reports)?,
        OutputFormat::Csv => {
            let mut out = String::from("table,label,expected,computed,pass\n");
            for r in &reports {
                for row in &r.rows {
                    let expected = row.expected.map(|e| e.to_string()).unwrap_or_default();
                    out.push_str(&format!("{},\"{}\",{},{},{}\n", r.id, row.label, expected, row.computed, row.pass));
                }
            }
            out
        }
        OutputFormat::Table => reports.iter().map(|r| r.to_table()).collect::<Vec<_>>().join("\n"),
    };
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.id.as_str()).collect();
    if failed.is_empty() {
        Ok(text)
    } else {
        emit(&text).ok();
        Err(Failure::Mismatch(format!("mismatch in {}", failed.join(", "))))
    }
}

fn emit(text: &str) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()
}

fn run(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::List { json, output } => cmd_list(json || output == OutputFormat::Json),
        Command::Solve { env, tol, output } => {
            let ex = Explainer::open(env.name(), SolverConfig::with_tol(tol))?;
            Ok(ex.solve_report().render(output)?)
        }
        Command::Explain(args) => cmd_explain(&args),
        Command::Reproduce { ids, output } => cmd_reproduce(&ids, output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(text) => match emit(&text) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit::IO)
            }
        },
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            if let Error::UnknownTable(_) = e {
                let ids: Vec<&str> = TABLES.iter().map(|(id, _)| *id).collect();
                eprintln!("known tables: {}", ids.join(", "));
            }
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Mismatch(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(exit::MISMATCH)
        }
    }
}
