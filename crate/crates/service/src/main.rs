use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = paintword_service::cli::main_with(paintword_service::cli::Cli::parse()) {
        eprintln!("error [{}]: {e}", e.code());
        std::process::exit(1);
    }
}
