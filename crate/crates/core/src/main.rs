use clap::Parser;

use pedalign::cli::{diagnostic, exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(cli, &mut stdout) {
        eprintln!("{}", diagnostic(&e));
        std::process::exit(exit_code(&e));
    }
}
