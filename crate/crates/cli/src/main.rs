use altruist_cli::Cli;
use clap::Parser;

fn main() {
    std::process::exit(altruist_cli::run(Cli::parse()));
}
