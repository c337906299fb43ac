use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use simlab_core::reference::{serve_agent, ReferenceAgent};
use simlab_core::tasks::{load_catalog, Catalog};

/// Rule-based movie recommendation agent speaking the simlab protocol.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Tab-separated catalog; the bundled movie catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "SIMLAB_PORT", default_value_t = 8000)]
    port: u16,
}

fn main() -> ExitCode {
    simlab_cli::init_logging();
    let args = Args::parse();
    let catalog = match &args.catalog {
        None => Catalog::builtin_movies(),
        Some(p) => match load_catalog(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
    };
    let addr = SocketAddr::new(args.host, args.port);
    let server = match serve_agent(addr, ReferenceAgent::new(Arc::new(catalog))) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot listen on {addr}: {e}");
            return ExitCode::from(1);
        }
    };
    tracing::info!(addr = %server.local_addr(), "reference agent listening");
    simlab_cli::wait_for_signal();
    server.shutdown();
    ExitCode::SUCCESS
}
