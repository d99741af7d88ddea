fn main() -> std::process::ExitCode {
    horizon_core::cli::main_with_args(std::env::args_os())
}
