use std::process::ExitCode;

fn main() -> ExitCode {
    adb_cli::run(std::env::args_os())
}
