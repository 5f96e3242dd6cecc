use kernood_cli::{exit, run, CliError};

fn main() {
    let code = match run(std::env::args_os()) {
        Ok(()) => exit::OK,
        Err(CliError::Usage(msg)) if msg.is_empty() => exit::OK,
        Err(e) => {
            if let CliError::Usage(msg) = &e {
                eprint!("{msg}");
            }
            eprintln!("{}", e.record());
            e.exit_code()
        }
    };
    std::process::exit(code);
}
