use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(nucnorm::cli::main_from_args(std::env::args_os()) as u8)
}
