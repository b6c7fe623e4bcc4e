use std::process::ExitCode;

fn main() -> ExitCode {
    tfcl::cli::main_with_args(std::env::args_os())
}
