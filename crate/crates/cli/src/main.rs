use std::process::ExitCode;

fn main() -> ExitCode {
    mfc_cli::main_entry()
}
