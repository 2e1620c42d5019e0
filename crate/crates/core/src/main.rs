use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = stdout.lock();
    let code = smallbatch::cli::run(std::env::args_os(), &mut out, &mut stderr.lock());
    let _ = out.flush();
    ExitCode::from(code as u8)
}
