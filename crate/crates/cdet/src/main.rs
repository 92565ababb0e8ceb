use clap::Parser;

fn main() {
    let cli = cdet::cli::Cli::parse();
    if let Err(err) = cdet::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
