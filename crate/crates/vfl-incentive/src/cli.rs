//! `vfl-incentive` subcommands.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage or IO error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use vfl_incentive_core::coalitional::{bankruptcy_game, shapley_exact};
use vfl_incentive_core::{divide, BankruptcyProblem, Rule};

use crate::config::ExperimentConfig;
use crate::data::{generate_synthetic, write_csv, SyntheticParams};
use crate::error::{Error, Result};
use crate::formats::{parse_claims_value, parse_game, parse_problem, trace_to_jsonl};
use crate::pipeline::{allocate, budget_split, run_experiment_traced};
use crate::report::{fmt2, write_atomic, write_reports};

#[derive(Debug, Parser)]
#[command(
    name = "vfl-incentive",
    version,
    about = "Bankruptcy-rule incentives for vertical federated learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Divide an estate among claimants.
    Allocate(AllocateArgs),
    /// Exact Shapley values of a game or of a bankruptcy problem.
    Shapley(ShapleyArgs),
    /// Run an experiment from a config file.
    Run(RunArgs),
    /// Write a synthetic classification dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub estate: Option<f64>,
    /// `1,2,3`, a JSON array, or a JSON object of id to claim.
    #[arg(long, allow_hyphen_values = true)]
    pub claims: Option<String>,
    /// Creditor ids for a plain claim list.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,
    #[arg(long)]
    pub rule: Option<Rule>,
    #[arg(long)]
    pub budget: Option<f64>,
    /// Problem document instead of --estate/--claims.
    #[arg(long, conflicts_with_all = ["estate", "claims"])]
    pub input: Option<PathBuf>,
    /// Full-precision JSON output.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ShapleyArgs {
    /// Game document path, or inline JSON.
    #[arg(long, conflicts_with_all = ["estate", "claims"])]
    pub game: Option<String>,
    #[arg(long, allow_negative_numbers = true, requires = "claims")]
    pub estate: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "estate")]
    pub claims: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write the grand coalition's training trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub features: usize,
    /// Defaults to half the features.
    #[arg(long)]
    pub informative: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 2.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, returning the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { stdout } else { stderr };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Allocate(a) => cmd_allocate(a, out),
        Command::Shapley(a) => cmd_shapley(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Generate(a) => cmd_generate(a, out),
    }
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn join2(values: &[f64]) -> String {
    values
        .iter()
        .map(|&x| fmt2(x))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Reads inline JSON, or a file when the argument does not look like JSON.
fn json_arg(arg: &str) -> Result<String> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('{') || trimmed.starts_with('[') {
        Ok(arg.to_string())
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::io(arg, e))
    }
}

/// Claims from `1,2,3`, `[1,2,3]` or `{"a":1,...}`.
pub fn parse_claims_arg(arg: &str, ids: Option<&[String]>) -> Result<(Vec<String>, Vec<f64>)> {
    let trimmed = arg.trim();
    let (mut creditors, claims) = if trimmed.starts_with('{') || trimmed.starts_with('[') {
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .map_err(|e| Error::Usage(format!("malformed claims: {e}")))?;
        parse_claims_value(&value).map_err(|e| Error::Usage(format!("malformed claims: {e}")))?
    } else {
        let claims = trimmed
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::Usage(format!("malformed claims: `{}` is not a number", s.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        ((1..=claims.len()).map(|i| i.to_string()).collect(), claims)
    };
    if let Some(ids) = ids {
        if ids.len() != claims.len() {
            return Err(Error::Usage(format!(
                "{} ids for {} claims",
                ids.len(),
                claims.len()
            )));
        }
        creditors = ids.to_vec();
    }
    Ok((creditors, claims))
}

fn cmd_allocate(args: AllocateArgs, out: &mut dyn Write) -> Result<()> {
    let (estate, creditors, claims, doc_rule) = match &args.input {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc = parse_problem(&text)?;
            (doc.estate, doc.creditors, doc.claims, doc.rule)
        }
        None => {
            let estate = args
                .estate
                .ok_or_else(|| Error::Usage("--estate is required".into()))?;
            let raw = args
                .claims
                .as_deref()
                .ok_or_else(|| Error::Usage("--claims is required".into()))?;
            let (creditors, claims) = parse_claims_arg(raw, args.ids.as_deref())?;
            (estate, creditors, claims, None)
        }
    };
    let rule = args.rule.or(doc_rule).unwrap_or(Rule::Talmud);
    let allocation = allocate(estate, &claims, &creditors, rule)?;
    let payouts = &allocation.payout.payouts;
    let budget = match args.budget {
        Some(b) => Some(budget_split(payouts, estate, b)?),
        None => None,
    };

    if args.json {
        let doc = serde_json::json!({
            "rule": rule,
            "estate": estate,
            "creditors": creditors,
            "claims": claims,
            "payouts": payouts,
            "surplus_paid": allocation.payout.surplus_paid,
            "undistributed": allocation.payout.undistributed,
            "normalization": allocation.log,
            "budget": budget,
        });
        write_out(out, &format!("{}\n", serde_json::to_string_pretty(&doc)?))
    } else {
        let mut text = format!("{}\n", join2(payouts));
        if let Some(b) = budget {
            text.push_str(&format!("budget: {}\n", join2(&b.shares)));
        }
        write_out(out, &text)
    }
}

fn cmd_shapley(args: ShapleyArgs, out: &mut dyn Write) -> Result<()> {
    let (game, talmud) = match (&args.game, args.estate, &args.claims) {
        (Some(game), _, _) => (parse_game(&json_arg(game)?)?, None),
        (None, Some(estate), Some(raw)) => {
            let (creditors, claims) = parse_claims_arg(raw, None)?;
            let problem = BankruptcyProblem::new(creditors, estate, claims)?;
            (
                bankruptcy_game(&problem)?,
                Some(divide(&problem, Rule::Talmud).payouts),
            )
        }
        _ => {
            return Err(Error::Usage(
                "give --game, or --estate with --claims".into(),
            ))
        }
    };
    let phi = shapley_exact(&game);
    if args.json {
        let doc = serde_json::json!({ "shapley": phi, "talmud": talmud });
        return write_out(out, &format!("{}\n", serde_json::to_string_pretty(&doc)?));
    }
    let mut text = format!("shapley: {}\n", join2(&phi));
    if let Some(t) = talmud {
        text.push_str(&format!("talmud: {}\n", join2(&t)));
    }
    write_out(out, &text)
}

fn cmd_run(args: RunArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (report, trace) = run_experiment_traced(&config)?;
    let written = write_reports(&report, &args.out)?;
    if let (Some(path), Some(trace)) = (&args.trace, &trace) {
        write_atomic(path, trace_to_jsonl(trace)?.as_bytes())?;
    }
    let mut text = format!("estate: {}\n", fmt2(report.estate));
    text.push_str(&format!("claims: {}\n", join2(&report.claims)));
    text.push_str(&format!("payouts: {}\n", join2(&report.payouts)));
    if let Some(phi) = &report.shapley {
        text.push_str(&format!("shapley: {}\n", join2(phi)));
    }
    for path in written {
        text.push_str(&format!("wrote {}\n", path.display()));
    }
    write_out(out, &text)
}

fn cmd_generate(args: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let params = SyntheticParams {
        n_samples: args.samples,
        n_features: args.features,
        n_informative: args.informative,
        noise_sigma: args.noise,
        class_separation: args.separation,
        seed: args.seed,
    };
    let table = generate_synthetic(&params)?;
    let mut bytes = Vec::new();
    write_csv(&table, &mut bytes)?;
    match &args.out {
        Some(path) => write_atomic(Path::new(path), &bytes),
        None => out.write_all(&bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}
