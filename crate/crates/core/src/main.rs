use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ctcs_hrrl::cli::main())
}
