fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("RML_LOG", "warn")).init();
    std::process::exit(rml_lab::cli::run_command(std::env::args_os()));
}
