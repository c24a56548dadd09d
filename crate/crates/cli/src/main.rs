// SPDX-License-Identifier: Apache-2.0

use clap::Parser;
use n2g_cli::{exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("n2g: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
