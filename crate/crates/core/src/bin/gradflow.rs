use std::process::ExitCode;

fn main() -> ExitCode {
    gradflow::cli::main_with_args(std::env::args_os())
}
