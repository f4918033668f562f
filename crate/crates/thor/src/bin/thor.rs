use clap::Parser;

fn main() {
    let cli = thor::cli::Cli::parse();
    if let Err(err) = thor::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
