use std::process::ExitCode;

fn main() -> ExitCode {
    subsidy_search::cli::main_with_args(std::env::args_os())
}
