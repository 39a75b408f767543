//! `ddcd` command-line entry point.

mod commands;

use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    ExitCode::from(commands::run(std::env::args_os()))
}
