use std::io::IsTerminal;

fn main() {
    let stdin = std::io::stdin();
    let mut stdin = stdin.lock();
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    let stdout_is_terminal = std::io::stdout().is_terminal();
    let code = pipereuse::run_cli(
        std::env::args_os(),
        &mut pipereuse::Io {
            stdin: &mut stdin,
            stdout: &mut stdout,
            stderr: &mut stderr,
            stdout_is_terminal,
        },
    );
    std::process::exit(code);
}
