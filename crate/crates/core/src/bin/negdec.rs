use clap::Parser;

fn main() {
    let cli = negdec::cli::Cli::parse();
    if let Err(e) = negdec::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
