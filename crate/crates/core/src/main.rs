use clap::Parser;

fn main() {
    std::process::exit(mmspec::cli::run(mmspec::cli::Cli::parse()));
}
