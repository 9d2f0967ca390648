use clap::Parser;

fn main() {
    let cli = bfsim_cli::Cli::parse();
    if let Err(e) = bfsim_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
