use std::process::ExitCode;

fn main() -> ExitCode {
    spectre::cli::run(std::env::args().skip(1).collect())
}
