use std::process::ExitCode;

fn main() -> ExitCode {
    let code = tagvat::cli::run_args(std::env::args_os(), &mut std::io::stdout().lock());
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
