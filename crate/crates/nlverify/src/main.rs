use std::io::Write;

fn main() {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let (mut out, mut err) = (stdout.lock(), stderr.lock());
    let code = nlverify::cli::dispatch(std::env::args_os(), &|k| std::env::var(k).ok(), &mut nlverify::cli::Io { stdout: &mut out, stderr: &mut err });
    let _ = out.flush();
    std::process::exit(code);
}
