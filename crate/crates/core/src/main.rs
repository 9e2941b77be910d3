use std::process::ExitCode;

fn main() -> ExitCode {
    let code = feedback_dmt::cli::run_with(
        std::env::args_os().collect(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    ExitCode::from(code as u8)
}
