use clap::Parser;
use postfix_gp::commands::{dispatch, Cli};

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
