fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MEDTEXT_LOG", "warn")).init();
    std::process::exit(medtext_cli::run(std::env::args_os()));
}
