use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mapro_client::api::{OptimizeRequest, RunSnapshot, RunSpec, RunStatus, SolveRequest};
use mapro_client::MaproClient;
use mapro_core::harness::{ingest_tasks, load_config, render_report, write_report};
use mapro_core::orchestrator::{restore, snapshot, OptimizationState};
use mapro_core::scoring::ScoreTables;
use mapro_core::topology::GraphDocument;
use mapro_service::AppState;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "mapro", version, about = "Optimize the prompts of a multi-agent system")]
struct Cli {
    /// Service to talk to. Without it an in-process server is started.
    #[arg(long, global = true, env = "MAPRO_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the optimization loop described by a config file.
    Optimize {
        config: PathBuf,
        /// Override the configured iteration cap.
        #[arg(long)]
        max_iterations: Option<usize>,
    },
    /// Continue a run from a snapshot file.
    Resume {
        snapshot: PathBuf,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long, default_value = "mapro-out")]
        out: PathBuf,
    },
    /// MAP selection over given score tables.
    Solve {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Also run exhaustive search.
        #[arg(long)]
        brute_force: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run one iteration and print the reward tables it used.
    Score { config: PathBuf },
    /// Summarize a snapshot file.
    Inspect { snapshot: PathBuf },
    /// Write report files for a snapshot.
    Report {
        snapshot: PathBuf,
        #[arg(long, default_value = "mapro-out")]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

async fn connect(server: Option<String>) -> Result<MaproClient> {
    if let Some(url) = server {
        return Ok(MaproClient::new(url));
    }
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(mapro_service::serve(listener, AppState::new()));
    Ok(MaproClient::new(format!("http://{addr}")))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts both a service snapshot (settings plus state) and a bare state.
fn read_snapshot(path: &Path) -> Result<(Option<RunSnapshot>, OptimizationState)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(s) = serde_json::from_str::<RunSnapshot>(&text) {
        let state = restore(&snapshot(&s.state))?;
        return Ok((Some(s), state));
    }
    Ok((None, restore(&text)?))
}

fn load_spec(config: &Path) -> Result<(RunSpec, PathBuf)> {
    let cfg = load_config(config)?;
    let graph: GraphDocument = read_json(&cfg.graph)?;
    let tasks = ingest_tasks(&cfg.tasks)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let spec = RunSpec {
        settings: cfg.settings,
        graph,
        tasks: tasks.tasks().to_vec(),
        audit_log: Some(cfg.output_dir.join("audit.jsonl")),
    };
    Ok((spec, cfg.output_dir))
}

fn progress(s: &RunStatus) {
    match s.history.last() {
        Some(rate) => eprintln!("iteration {:>3}  pass rate {:.3}  best {:.3}", s.iteration - 1, rate, s.best_pass_rate.unwrap_or(0.0)),
        None => eprintln!("run {} started", s.id),
    }
}

async fn finish(client: &MaproClient, id: &str, out: &Path, max_iterations: Option<usize>) -> Result<()> {
    client.optimize(id, &OptimizeRequest { max_iterations, ..Default::default() }).await?;
    let done = client.wait(id, Duration::from_millis(200), progress).await?;
    if let mapro_client::api::JobState::Failed { message } = &done.job {
        bail!("optimization failed: {message}");
    }
    let snap = client.snapshot(id).await?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("snapshot.json"), serde_json::to_string_pretty(&snap)?)?;
    let written = write_report(&client.report(id).await?, out)?;
    for w in &done.warnings {
        eprintln!("warning: {w}");
    }
    println!("finished after {} iterations, best pass rate {:.3}", done.iteration, done.best_pass_rate.unwrap_or(0.0));
    for p in written.iter().chain([&out.join("snapshot.json")]) {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Optimize { config, max_iterations } => {
            let (spec, out) = load_spec(&config)?;
            let client = connect(cli.server).await?;
            let run = client.create_run(&spec).await?;
            progress(&run);
            finish(&client, &run.id, &out, max_iterations).await?;
        }
        Command::Resume { snapshot: path, max_iterations, out } => {
            let (snap, _) = read_snapshot(&path)?;
            let Some(snap) = snap else { bail!("{} has no run settings; resume needs a service snapshot", path.display()) };
            let client = connect(cli.server).await?;
            let run = client.restore(&snap).await?;
            progress(&run);
            finish(&client, &run.id, &out, max_iterations).await?;
        }
        Command::Solve { graph, scores, brute_force, json } => {
            let req = SolveRequest { graph: read_json(&graph)?, tables: read_json::<ScoreTables>(&scores)?, brute_force };
            let client = connect(cli.server).await?;
            let out = client.solve(&req).await?;
            if json {
                println!("{}", serde_json::to_string_pretty(&out)?);
            } else {
                print!("{}", out.trace);
                if let Some(b) = &out.brute_force {
                    let agrees = b.choices == out.assignment.choices;
                    println!("brute force: score {:.6e} ({})", b.score.value(), if agrees { "same assignment" } else { "different assignment, equal score" });
                }
            }
        }
        Command::Score { config } => {
            let (spec, _) = load_spec(&config)?;
            let client = connect(cli.server).await?;
            let run = client.create_run(&spec).await?;
            client.iterate(&run.id).await?;
            let scores = client.scores(&run.id).await?;
            println!("{}", serde_json::to_string_pretty(&scores)?);
        }
        Command::Inspect { snapshot: path } => {
            let (_, state) = read_snapshot(&path)?;
            println!("iterations: {}  pool size: {}  tasks: {}  frozen: {}", state.iteration, state.k, state.tasks.len(), state.frozen);
            let hist: Vec<String> = state.history.iter().map(|h| format!("{h:.3}")).collect();
            println!("pass rate history: [{}]", hist.join(", "));
            if let Some(b) = &state.best {
                println!("best: {:.3} at iteration {}", b.pass_rate, b.iteration);
            }
            for (agent, pool) in &state.pools {
                println!("\n[{agent}]");
                for c in pool.candidates() {
                    let origin = c.lineage.as_ref().map(|l| format!(" ({} of {})", l.action.label(), l.parent_index)).unwrap_or_default();
                    println!("  {}{origin}: {}", c.index, c.text.replace('\n', " "));
                }
            }
            for w in &state.warnings {
                println!("\nwarning: {w}");
            }
        }
        Command::Report { snapshot: path, out } => {
            let (_, state) = read_snapshot(&path)?;
            for p in write_report(&render_report(&state)?, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Serve { addr } => {
            let listener = tokio::net::TcpListener::bind(&addr).await?;
            eprintln!("listening on {}", listener.local_addr()?);
            mapro_service::serve(listener, AppState::new()).await?;
        }
    }
    Ok(())
}
