use std::process::ExitCode;

fn main() -> ExitCode {
    stemscore::cli::run(std::env::args_os())
}
