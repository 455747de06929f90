fn main() -> std::process::ExitCode {
    consensus_lab::cli::main()
}
