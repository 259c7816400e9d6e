//! Binary entry point; all behavior lives in the library's `cli` module.

use clap::Parser;

fn main() -> std::process::ExitCode {
    steam_eval::cli::run(steam_eval::cli::Cli::parse())
}
