use std::process::ExitCode;

fn main() -> ExitCode {
    if let Err(e) = selar::cli::configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match selar::cli::run(std::env::args_os()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => match e.downcast_ref::<clap::Error>() {
            Some(clap_err) => {
                let _ = clap_err.print();
                ExitCode::from(if clap_err.use_stderr() { 2 } else { 0 })
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
