use clap::Parser;

fn main() {
    let cli = sapg_cli::Cli::parse();
    std::process::exit(sapg_cli::run_cli(cli));
}
