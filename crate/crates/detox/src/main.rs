use std::process::ExitCode;

fn main() -> ExitCode {
    detox::cli::run()
}
