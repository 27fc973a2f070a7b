use clap::Parser;

fn main() {
    std::process::exit(reflexgrasp_cli::run(reflexgrasp_cli::Cli::parse()));
}
