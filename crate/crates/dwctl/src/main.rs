use clap::Parser;

fn main() {
    std::process::exit(dwctl::cli::main_with(dwctl::cli::Cli::parse()));
}
