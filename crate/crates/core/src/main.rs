use std::process::ExitCode;

fn main() -> ExitCode {
    treecomp::cli::main_with(std::env::args_os())
}
