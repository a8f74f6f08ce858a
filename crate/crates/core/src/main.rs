use clap::Parser;

fn main() {
    let cli = dyntomo::cli::Cli::parse();
    std::process::exit(dyntomo::cli::run(cli));
}
