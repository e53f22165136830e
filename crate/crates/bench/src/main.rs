use clap::Parser;

use precond_bench::cli::{main_with, Cli};

fn main() {
    std::process::exit(main_with(&Cli::parse()));
}
