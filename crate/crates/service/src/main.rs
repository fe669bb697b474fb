use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use shieldup_service::config::DATA_DIR_ENV;
use shieldup_service::{run, system_clock, ServeOptions, Service, ServiceConfig};

/// ShieldUp trial HTTP service.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory holding the event log and snapshots; in-memory when omitted.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Service configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let args = Args::parse();
    let config = match args.config.as_deref().map(ServiceConfig::load).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: config: {e:#}");
            return ExitCode::from(2);
        }
    };
    let opts = ServeOptions { port: args.port, corpus_dir: args.corpus_dir, data_dir: args.data_dir, config };
    let (service, generated) = match Service::from_options(&opts, system_clock()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Some(token) = generated {
        println!("researcher token: {token}");
    }
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(service, opts.port)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
