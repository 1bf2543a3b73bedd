use clap::Parser;

fn main() {
    let cli = mclr::cli::Cli::parse();
    if let Err(e) = mclr::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
