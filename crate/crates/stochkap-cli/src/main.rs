use clap::Parser;

fn main() {
    let cli = stochkap_cli::Cli::parse();
    if let Err(e) = stochkap_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(stochkap_cli::exit_code(&e));
    }
}
