use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use edgelab::cli::{run, Cli};

fn main() -> ExitCode {
    let start = Instant::now();
    match run(Cli::parse()) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            eprintln!("artifacts in {} ({:.1}s)", summary.dir.display(), start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
