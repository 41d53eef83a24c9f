use clap::Parser;

fn main() {
    let cli = retplan::cli::Cli::parse();
    if let Err(e) = retplan::cli::run(cli) {
        eprintln!("error[{}]: {e}", e.code());
        std::process::exit(1);
    }
}
