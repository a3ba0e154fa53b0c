use clap::Parser;
use uhi_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = execute(&cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
