use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(otfs_harness::cli::main_with_args(std::env::args_os()) as u8)
}
