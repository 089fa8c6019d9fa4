fn main() -> std::process::ExitCode {
    telehammer::cli::main_with(std::env::args_os())
}
