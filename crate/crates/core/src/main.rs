use clap::Parser;

fn main() {
    let cli = ftmoe::cli::Cli::parse();
    if let Err(e) = ftmoe::cli::run(cli) {
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
