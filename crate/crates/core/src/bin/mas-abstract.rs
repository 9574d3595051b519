use clap::Parser;
use mas_abstraction::cli::{self, Cli};

fn main() {
    match cli::run(Cli::parse()) {
        Ok(dir) => eprintln!("wrote {}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
