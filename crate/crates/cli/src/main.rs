use clap::Parser;

fn main() {
    let cli = ccs_cli::Cli::parse();
    std::process::exit(ccs_cli::run(&cli));
}
