fn main() -> std::process::ExitCode {
    micachesim::cli::main()
}
