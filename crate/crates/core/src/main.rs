use std::process::ExitCode;

fn main() -> ExitCode {
    snrprobe::cli::run(std::env::args_os())
}
