fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEUROAMP_LOG", "warn"))
        .format_timestamp(None)
        .init();
    std::panic::set_hook(Box::new(|info| {
        let err = neuroamp_cli::CliError::Internal(format!("panic: {info}"));
        eprintln!("{}", err.line());
        std::process::exit(err.exit_code());
    }));
    std::process::exit(neuroamp_cli::main_with_args(std::env::args_os()));
}
