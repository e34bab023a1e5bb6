use std::process::ExitCode;

use clap::Parser;
use cpuq_cli::commands::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            if !report.is_empty() {
                println!("{}", report.trim_end());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cpuq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
