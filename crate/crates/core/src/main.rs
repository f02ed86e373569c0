use clap::Parser;

fn main() {
    let cli = a3sim::cli::Cli::parse();
    if let Err(e) = a3sim::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
