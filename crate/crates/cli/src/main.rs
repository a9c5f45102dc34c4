use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = rdalloc_cli::Cli::parse();
    match rdalloc_cli::run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
