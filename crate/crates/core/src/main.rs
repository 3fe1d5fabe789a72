use clap::Parser;

use prefkit::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("prefkit: {e}");
        std::process::exit(e.exit_code());
    }
}
