//! Binary entry point; all logic lives in the library's cli module.

use clap::Parser;

use fare_core::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
