use std::process::ExitCode;

use clap::Parser;
use srf::cli::{error_json, run, Cli, Format};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let format = cli.format;
    match run(cli) {
        Ok(summary) => {
            match format {
                Format::Json => println!("{summary}"),
                Format::Text => {
                    let cmd = summary["command"].as_str().unwrap_or("");
                    println!("{cmd}: {}", summary["summary"]);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match format {
                Format::Json => eprintln!("{}", error_json(&e)),
                Format::Text => eprintln!("error: {e}"),
            }
            ExitCode::FAILURE
        }
    }
}
