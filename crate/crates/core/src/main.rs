fn main() -> std::process::ExitCode {
    stabilab::cli::main()
}
