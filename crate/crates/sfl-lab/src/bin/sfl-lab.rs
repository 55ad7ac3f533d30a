use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sfl_lab::harness::cli_run(std::env::args()) as u8)
}
