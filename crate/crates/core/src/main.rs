use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(homognx::cli::run(std::env::args_os()))
}
