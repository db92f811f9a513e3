use std::process::ExitCode;

fn main() -> ExitCode {
    biasline::cli::run()
}
