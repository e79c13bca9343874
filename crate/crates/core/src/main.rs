use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use joinbound::estimators::{bernoulli_trial, plan_samples};
use joinbound::harness::{
    read_manifest, run_experiment, save_instance, verify_run, write_run, ExperimentConfig,
};
use joinbound::joinexec::{exact_eval, JoinQuery};
use joinbound::kabset::{intersection_histogram, kab_construct};
use joinbound::mathcore::{lower_bound, BoundParams, QueryKind};
use joinbound::relgen::{generate, snap_params, GenOptions};
use joinbound::Relation;

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "joinbound", version, about = "Lower bounds and adversarial instances for approximate join aggregates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the lower bound (bits) and its derived quantities as JSON.
    Bounds(ParamArgs),
    /// Construct and verify a (k, α, β)-set family.
    Kabset {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        alpha: usize,
        #[arg(long, default_value_t = 2)]
        family_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        max_restarts: usize,
    },
    /// Generate an adversarial instance into a directory.
    Gen {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        t: Option<usize>,
        /// Snap B (or λ) to the nearest integral construction first.
        #[arg(long)]
        snap: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exactly evaluate a query over CSV relations (named by file stem).
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        relations: Vec<PathBuf>,
        #[arg(long)]
        query: PathBuf,
    },
    /// Bernoulli-sample estimates of a COUNT or SUM query, one JSON line per trial.
    Estimate {
        #[arg(long, num_args = 1.., required = true)]
        relations: Vec<PathBuf>,
        #[arg(long)]
        query: PathBuf,
        /// Per-tuple sampling rate.
        #[arg(long, conflicts_with = "plan")]
        q: Option<f64>,
        /// Plan q from `p,n,B,target_alpha`.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        plan: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
    },
    /// Run or verify experiments.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and JOINBOUND_OUTPUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a stored experiment and compare records.
    Verify { dir: PathBuf },
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    kind: QueryKind,
    /// Comma-separated table sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<u64>,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long = "b")]
    b: f64,
    #[arg(long)]
    sum_max: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    hh_a: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    hh_b: Option<Vec<u64>>,
}

impl ParamArgs {
    fn params(&self) -> BoundParams {
        BoundParams {
            query_kind: self.kind,
            table_sizes: self.sizes.clone(),
            epsilon: self.epsilon,
            delta: self.delta,
            b: self.b,
            sum_max: self.sum_max,
            lambda: self.lambda,
            hh_a: self.hh_a.clone(),
            hh_b: self.hh_b.clone(),
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(io::stdout().lock(), "{text}")?;
    Ok(())
}

fn load_relations(paths: &[PathBuf]) -> CliResult<Vec<Relation>> {
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| format!("cannot name relation from {}", p.display()))?;
            let file = File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(Relation::read_csv(name, BufReader::new(file))?)
        })
        .collect()
}

fn load_query(path: &Path) -> CliResult<JoinQuery> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Bounds(args) => {
            let params = args.params();
            let result = lower_bound(&params)?;
            print_json(&json!({
                "params": params,
                "bits": result.bits,
                "floor_bits": result.floor_bits(),
                "derived": result.derived,
            }))
        }
        Command::Kabset {
            k,
            alpha,
            family_size,
            seed,
            max_restarts,
        } => {
            let kab = kab_construct(k, alpha, family_size, seed, max_restarts)?;
            let verification = kab.verify();
            let histogram: Vec<(usize, u64)> = intersection_histogram(&kab).into_iter().collect();
            print_json(&json!({
                "kabset": kab,
                "verification": verification,
                "intersection_histogram": histogram,
            }))
        }
        Command::Gen {
            params,
            seed,
            k,
            t,
            snap,
            out,
        } => {
            let mut params = params.params();
            let mut adjustments = Vec::new();
            if snap {
                let snapped = snap_params(&params)?;
                params = snapped.params;
                adjustments = snapped.adjustments;
            }
            let opts = GenOptions {
                k,
                t,
                ..Default::default()
            };
            let mut inst = generate(&params, &opts, seed)?;
            inst.spec.adjustments = adjustments;
            save_instance(&out, &inst)?;
            print_json(&json!({
                "out": out,
                "truth_low": inst.truth_low,
                "truth_high": inst.truth_high,
                "branch_hit": inst.branch_hit,
                "k": inst.spec.k,
                "t": inst.spec.t,
            }))
        }
        Command::Eval { relations, query } => {
            let rels = load_relations(&relations)?;
            let query = load_query(&query)?;
            print_json(&exact_eval(&rels, &query)?)
        }
        Command::Estimate {
            relations,
            query,
            q,
            plan,
            trials,
            seed,
            epsilon,
        } => {
            let rels = load_relations(&relations)?;
            let query = load_query(&query)?;
            let q = match (q, plan) {
                (Some(q), _) => q,
                (None, Some(v)) => plan_samples(v[0] as usize, v[1] as u64, v[2], v[3])?.q,
                (None, None) => return Err("pass --q or --plan".into()),
            };
            let truth = exact_eval(&rels, &query)?
                .scalar()
                .ok_or("estimate needs a COUNT or SUM query")? as f64;
            let mut out = io::stdout().lock();
            for i in 0..trials {
                let r = bernoulli_trial(&rels, &query, q, seed.wrapping_add(i as u64), truth, epsilon)?;
                writeln!(out, "{}", serde_json::to_string(&r)?)?;
            }
            Ok(())
        }
        Command::Experiment { action } => match action {
            ExperimentAction::Run { config, out } => {
                let text = std::fs::read_to_string(&config).map_err(|e| format!("{}: {e}", config.display()))?;
                let cfg = ExperimentConfig::from_toml(&text)?;
                let dir = out
                    .or_else(|| cfg.resolved_output())
                    .ok_or("no output directory: set output_path, JOINBOUND_OUTPUT or --out")?;
                let (result, summary) = run_experiment(&cfg)?;
                let summary = summary.map(serde_json::to_value).transpose()?;
                write_run(&dir, &cfg, &result, summary.clone())?;
                for s in &result.skipped {
                    log::warn!("skipped cell {}: {}", s.cell, s.reason);
                }
                print_json(&json!({
                    "out": dir,
                    "records": result.records.len(),
                    "skipped": result.skipped.len(),
                    "summary": summary,
                }))
            }
            ExperimentAction::Verify { dir } => {
                read_manifest(&dir)?;
                let report = verify_run(&dir)?;
                print_json(&json!({ "ok": report.ok(), "report": report }))?;
                if report.ok() {
                    Ok(())
                } else {
                    Err("stored records differ from the re-run".into())
                }
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        // output closed early, e.g. piped into `head`
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
