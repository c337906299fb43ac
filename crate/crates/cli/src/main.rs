use std::fs;
use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::Value;
use simlab_cli::{ApiClient, ApiError, DEFAULT_SERVER};
use simlab_core::experiments::ExperimentConfig;
use simlab_core::protocol::conformance::check_conformance;
use simlab_core::protocol::{ProtocolClient, Role, SystemEndpoint};
use simlab_core::runner::SystemRecord;
use simlab_core::service::{serve, ServiceConfig};

#[derive(Parser, Debug)]
#[command(
    name = "simlab",
    version,
    about = "Simulation-based evaluation of conversational agents"
)]
struct Cli {
    /// Service base URL for client commands.
    #[arg(long, global = true, env = "SIMLAB_SERVER", default_value = DEFAULT_SERVER)]
    server: String,
    /// Bearer token for write commands (and for `serve`).
    #[arg(long, global = true, env = "SIMLAB_API_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the API service and the experiment workers.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "simlab-data")]
        data_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_workers: usize,
        /// Seconds to wait for running experiments on shutdown.
        #[arg(long, default_value_t = 30)]
        shutdown_timeout: u64,
    },
    /// Register a system from a JSON manifest.
    RegisterSystem {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Submit an experiment from a JSON config.
    Submit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Show an experiment's config and state.
    Status { id: String },
    /// Show queued and running experiments with pool statistics.
    Queue,
    /// Show the leaderboard of a task.
    Leaderboard {
        #[arg(long)]
        task: String,
        #[arg(long)]
        sort: Option<String>,
        /// asc or desc.
        #[arg(long)]
        order: Option<String>,
    },
    /// Write an experiment's results document to stdout or a file.
    Download {
        id: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the protocol conformance suite against a live system.
    Check {
        /// host:port of the system.
        #[arg(long)]
        address: String,
        /// AGENT or SIMULATOR.
        #[arg(long)]
        role: Role,
    },
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn print_leaderboard(v: &Value) {
    let rows = v["rows"].as_array().cloned().unwrap_or_default();
    let metrics: Vec<String> = rows
        .iter()
        .flat_map(|r| {
            r["metrics"]
                .as_object()
                .into_iter()
                .flat_map(|m| m.keys().cloned())
        })
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec!["agent".to_string(), "simulator".to_string()];
    header.extend(metrics.iter().cloned());
    header.push("conversations".into());
    println!("{}", header.join("\t"));
    for r in rows {
        let mut cells = vec![
            format!(
                "{}@{}",
                r["agent"]["name"].as_str().unwrap_or(""),
                r["agent"]["version"].as_str().unwrap_or("")
            ),
            format!(
                "{}@{}",
                r["simulator"]["name"].as_str().unwrap_or(""),
                r["simulator"]["version"].as_str().unwrap_or("")
            ),
        ];
        for m in &metrics {
            cells.push(
                r["metrics"][m]["mean"]
                    .as_f64()
                    .map_or_else(|| "-".into(), |x| format!("{x:.4}")),
            );
        }
        let count = r["metrics"]
            .as_object()
            .and_then(|m| m.values().filter_map(|a| a["count"].as_u64()).max())
            .unwrap_or(0);
        cells.push(count.to_string());
        println!("{}", cells.join("\t"));
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let client = ApiClient::new(&cli.server, cli.token.clone());
    let api = |r: Result<Value, ApiError>| r.map_err(|e| e.to_string());
    match cli.command {
        Command::Serve {
            bind,
            port,
            data_dir,
            max_workers,
            shutdown_timeout,
        } => {
            let api_token = cli.token.unwrap_or_else(|| {
                let t = format!("{:032x}", rand::random::<u128>());
                eprintln!("generated API token: {t}");
                t
            });
            let config = ServiceConfig {
                bind,
                port,
                data_dir,
                max_workers,
                api_token,
                ..Default::default()
            };
            let service = serve(&config).map_err(|e| e.to_string())?;
            println!("listening on {}", service.url());
            simlab_cli::wait_for_signal();
            tracing::info!("shutting down");
            service.shutdown(Duration::from_secs(shutdown_timeout));
        }
        Command::RegisterSystem { manifest } => {
            let record: SystemRecord = read_json(&manifest)?;
            let id = client.register_system(&record).map_err(|e| e.to_string())?;
            println!("{id}");
        }
        Command::Submit { config } => {
            let config: ExperimentConfig = read_json(&config)?;
            let id = client.submit(&config).map_err(|e| e.to_string())?;
            println!("{id}");
        }
        Command::Status { id } => print_json(&api(client.status(&id))?),
        Command::Queue => print_json(&api(client.queue())?),
        Command::Leaderboard { task, sort, order } => print_leaderboard(&api(client.leaderboard(
            &task,
            sort.as_deref(),
            order.as_deref(),
        ))?),
        Command::Download { id, output } => {
            let bytes = client.download(&id).map_err(|e| e.to_string())?;
            match output {
                Some(p) => fs::write(&p, bytes).map_err(|e| format!("{}: {e}", p.display()))?,
                None => {
                    use std::io::Write;
                    std::io::stdout()
                        .write_all(&bytes)
                        .map_err(|e| e.to_string())?;
                }
            }
        }
        Command::Check { address, role } => {
            let report = check_conformance(
                &ProtocolClient::new(Duration::from_secs(5)),
                &SystemEndpoint::new(address, role),
            );
            print!("{report}");
            if !report.passed() {
                return Err("conformance check failed".into());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    simlab_cli::init_logging();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
