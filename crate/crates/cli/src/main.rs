use std::process::ExitCode;

use clap::Parser;
use sdreg::{execute, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SDREG_LOG", "error")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sdreg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
