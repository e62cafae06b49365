fn main() -> std::process::ExitCode {
    stoch_ep::cli::run()
}
