//! `airwaytopo` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or unreadable/invalid input, 2 degenerate
//! input that was handled (output still written), 3 computation failure.
//! Errors and warnings go to stderr as one JSON object.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::Cli;
use commands::{Failure, Status};

fn report(f: &Failure) -> ExitCode {
    let body = json!({"error": f.kind, "message": f.message, "exit_code": f.code});
    eprintln!("{body}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let argv = match config::merge(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(m) => return report(&Failure::usage(m)),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&Failure::usage(e.render().to_string().trim_end())),
    };

    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return report(&Failure::usage("--threads must be at least 1"));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        return report(&Failure::usage(format!("cannot start {threads} workers: {e}")));
    }

    match commands::run(cli.command) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::Degenerate { kind, message }) => {
            eprintln!("{}", json!({"warning": kind, "message": message, "exit_code": 2}));
            ExitCode::from(2)
        }
        Err(f) => report(&f),
    }
}
