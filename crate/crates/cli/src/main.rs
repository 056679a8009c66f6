use clap::Parser;

fn main() {
    std::process::exit(worldline_cli::main_with(worldline_cli::Cli::parse()));
}
