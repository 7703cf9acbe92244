use std::process::ExitCode;

use clap::Parser;
use fghv::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fghv: {e}");
            ExitCode::from(2)
        }
    }
}
