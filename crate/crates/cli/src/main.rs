use std::process::ExitCode;

use clap::Parser;
use flowinfer::cli::Cli;
use flowinfer::error::{exit_code, UsageError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = cli.resolve().and_then(|cfg| {
        let out = cli.out.clone().ok_or_else(|| UsageError("--out is required".into()))?;
        flowinfer::commands::run(cli.command.into(), cfg, &out)
    });
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
