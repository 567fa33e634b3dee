use clap::Parser;

fn main() {
    let cli = mprvit::cli::Cli::parse();
    if let Err(e) = mprvit::cli::run(cli) {
        eprintln!("mprvit: {e}");
        std::process::exit(mprvit::cli::exit_code(&e));
    }
}
