use clap::Parser;
use superinfo::cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = execute(cli, &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
