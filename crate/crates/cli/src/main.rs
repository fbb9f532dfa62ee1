fn main() -> std::process::ExitCode {
    logitrange::cli::main()
}
