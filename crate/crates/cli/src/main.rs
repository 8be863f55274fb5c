use clap::Parser;

fn main() {
    let cli = aift_cli::Cli::parse();
    if let Err(e) = aift_cli::run(cli) {
        eprintln!("aift: {e}");
        std::process::exit(e.exit_code());
    }
}
