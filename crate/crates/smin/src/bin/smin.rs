use clap::Parser;

fn main() {
    let cli = smin::cli::Cli::parse();
    if let Err(e) = smin::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
