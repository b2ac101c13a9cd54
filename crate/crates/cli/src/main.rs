use std::fs;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dagsched::bench::{replay_agent, rows_from_csv, rows_to_csv, run_grid, summarize, ExperimentConfig};
use dagsched::env::{serve_lines, serve_tcp, Environment};
use dagsched::gen::{load_dataset, write_dataset, GenConfig};
use dagsched::sched::{self, SchedulerKind};
use dagsched::timing::evaluate_partial;
use dagsched::{MergedDag, Plan, Platform};

#[derive(Parser)]
#[command(name = "dagsched", version, about = "Dependent-task offloading simulator and schedulers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory of merged multi-user DAGs.
    Gen(GenArgs),
    /// Plan one DAG with a baseline scheduler.
    Plan(PlanArgs),
    /// Evaluate a plan file on a DAG.
    Eval(EvalArgs),
    /// Serve the environment over stdio or TCP.
    Serve(ServeArgs),
    /// Run an experiment grid and write a results CSV.
    Bench(BenchArgs),
    /// Score an agent transcript against a dataset.
    Replay(ReplayArgs),
    /// Print a summary of a results CSV.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = GenConfig::default().max_out_degree)]
    max_out: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Users per instance.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cycle range as `LO..HI`.
    #[arg(long, value_parser = parse_range)]
    cycles: Option<(u64, u64)>,
    /// Program upload range in bytes as `LO..HI`.
    #[arg(long, value_parser = parse_range)]
    upload: Option<(u64, u64)>,
    /// Edge payload range in bytes as `LO..HI`.
    #[arg(long, value_parser = parse_range)]
    edge: Option<(u64, u64)>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// local, remote, rr, random[:seed], heft or optimal[:limit].
    #[arg(long)]
    scheduler: String,
    #[arg(long)]
    dag: PathBuf,
    /// Platform JSON; defaults to one device and one single-processor server.
    #[arg(long)]
    platform: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dag: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    platform: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, conflicts_with = "stdio", required_unless_present = "stdio")]
    port: Option<u16>,
    #[arg(long)]
    stdio: bool,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    platform: Option<PathBuf>,
    /// Append every request and response line here (stdio only).
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    platform: Option<PathBuf>,
    #[arg(long)]
    transcript: PathBuf,
    /// Append the agent row to this results CSV.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    results: PathBuf,
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once("..").ok_or("expected LO..HI")?;
    let lo = lo.trim().parse().map_err(|_| format!("bad bound '{lo}'"))?;
    let hi = hi.trim().parse().map_err(|_| format!("bad bound '{hi}'"))?;
    Ok((lo, hi))
}

fn load_platform(path: Option<&Path>, users: usize) -> Result<Platform> {
    match path {
        Some(p) => Platform::load(p).with_context(|| format!("reading platform {}", p.display())),
        None => Ok(Platform {
            k: users,
            ..Platform::single_edge()
        }),
    }
}

fn check_users(dag: &MergedDag, platform: &Platform) -> Result<()> {
    if dag.users() != platform.k {
        bail!("DAG has {} users but the platform has K = {}", dag.users(), platform.k);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let d = GenConfig::default();
            let cfg = GenConfig {
                n: a.n,
                max_out_degree: a.max_out,
                alpha: a.alpha,
                beta: a.beta,
                seed: a.seed,
                cycles_range: a.cycles.unwrap_or(d.cycles_range),
                upload_range: a.upload.unwrap_or(d.upload_range),
                edge_range: a.edge.unwrap_or(d.edge_range),
            };
            let manifest = write_dataset(&a.out, &cfg, a.count, a.k)?;
            eprintln!("wrote {} instances to {}", manifest.count, a.out.display());
        }
        Command::Plan(a) => {
            let dag = MergedDag::load(&a.dag)?;
            let platform = load_platform(a.platform.as_deref(), dag.users())?;
            check_users(&dag, &platform)?;
            let kind: SchedulerKind = a.scheduler.parse()?;
            let plan = sched::plan(kind, &dag, &platform)?;
            let eval = evaluate_partial(&dag, &platform, &plan.0)?;
            let text = serde_json::to_string(&plan)?;
            match a.out {
                Some(path) => fs::write(&path, text + "\n")?,
                None => println!("{text}"),
            }
            eprintln!("{} mean AFT {} s", kind.label(), eval.mean_aft);
        }
        Command::Eval(a) => {
            let dag = MergedDag::load(&a.dag)?;
            let platform = load_platform(a.platform.as_deref(), dag.users())?;
            check_users(&dag, &platform)?;
            let plan: Plan = serde_json::from_str(&fs::read_to_string(&a.plan)?)?;
            dagsched::model::validate_plan(&dag, &plan.0, true)?;
            let eval = evaluate_partial(&dag, &platform, &plan.0)?;
            for (k, aft) in eval.aft.iter().enumerate() {
                println!("user {k}: AFT {aft} s");
            }
            println!("mean AFT {} s", eval.mean_aft);
        }
        Command::Serve(a) => {
            let dataset = load_dataset(&a.dataset)?;
            let users = dataset.first().map_or(1, MergedDag::users);
            let platform = load_platform(a.platform.as_deref(), users)?;
            if let Some(bad) = dataset.iter().find(|d| d.users() != platform.k) {
                check_users(bad, &platform)?;
            }
            let generator = GenConfig {
                n: dataset.first().map_or(10, |d| d.exec_count() / d.users()),
                ..GenConfig::default()
            };
            let env = Environment::shared(
                Arc::new(dataset.into_iter().map(Arc::new).collect()),
                platform,
                generator,
            );
            if a.stdio {
                let stdin = std::io::stdin();
                let stdout = std::io::stdout();
                let mut transcript = match &a.transcript {
                    Some(p) => Some(BufWriter::new(
                        fs::OpenOptions::new().create(true).append(true).open(p)?,
                    )),
                    None => None,
                };
                serve_lines(
                    env,
                    stdin.lock(),
                    stdout.lock(),
                    transcript.as_mut().map(|t| t as &mut dyn Write),
                )?;
                if let Some(mut t) = transcript {
                    t.flush()?;
                }
            } else {
                let port = a.port.expect("clap enforces --port or --stdio");
                let listener = TcpListener::bind(("127.0.0.1", port))?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve_tcp(listener, env)?;
            }
        }
        Command::Bench(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            let results = run_grid(&cfg)?;
            for s in &results.skipped {
                eprintln!("n={} K={} M={} {}: N/A ({})", s.n, s.k, s.m, s.scheduler, s.reason);
            }
            fs::write(&a.out, results.to_csv()?)?;
            eprintln!("wrote {} rows to {}", results.rows.len(), a.out.display());
        }
        Command::Replay(a) => {
            let dataset = load_dataset(&a.dataset)?;
            let users = dataset.first().map_or(1, MergedDag::users);
            let platform = load_platform(a.platform.as_deref(), users)?;
            let text = fs::read_to_string(&a.transcript)?;
            let result = replay_agent(&dataset, &platform, &text)
                .with_context(|| format!("replaying {}", a.transcript.display()))?;
            for e in &result.episodes {
                println!("instance {}: mean AFT {} s", e.instance, e.mean_aft);
            }
            println!("episodes {} mean AFT {} s", result.episodes.len(), result.mean_aft);
            if let Some(path) = a.results {
                let mut rows = if path.exists() {
                    rows_from_csv(&fs::read_to_string(&path)?)?
                } else {
                    Vec::new()
                };
                rows.push(result.row(&dataset, &platform));
                fs::write(&path, rows_to_csv(&rows)?)?;
            }
        }
        Command::Summarize(a) => {
            let rows = rows_from_csv(&fs::read_to_string(&a.results)?)?;
            if rows.is_empty() {
                bail!("{} has no rows", a.results.display());
            }
            print!("{}", summarize(&rows));
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
