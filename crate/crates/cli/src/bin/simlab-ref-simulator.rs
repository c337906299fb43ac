use std::net::{IpAddr, SocketAddr};
use std::process::ExitCode;

use clap::Parser;
use simlab_core::reference::{
    serve_simulator, DisclosureOrder, ReferenceSimulator, SimulatorOptions,
};

/// Scripted user simulator speaking the simlab protocol.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "SIMLAB_PORT", default_value_t = 8001)]
    port: u16,
    /// Order in which constraints are disclosed: forward or reverse.
    #[arg(long, default_value = "forward")]
    disclosure_order: DisclosureOrder,
    /// Give up with a stop utterance at this user turn.
    #[arg(long)]
    max_turns: Option<usize>,
}

fn main() -> ExitCode {
    simlab_cli::init_logging();
    let args = Args::parse();
    let simulator = ReferenceSimulator::new(SimulatorOptions {
        disclosure_order: args.disclosure_order,
        max_turns: args.max_turns,
    });
    let addr = SocketAddr::new(args.host, args.port);
    let server = match serve_simulator(addr, simulator) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot listen on {addr}: {e}");
            return ExitCode::from(1);
        }
    };
    tracing::info!(addr = %server.local_addr(), "reference simulator listening");
    simlab_cli::wait_for_signal();
    server.shutdown();
    ExitCode::SUCCESS
}
