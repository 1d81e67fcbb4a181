use clap::Parser;
use matchpose_cli::args::Cli;
use matchpose_cli::{exit, run};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    };
    std::process::exit(code);
}
