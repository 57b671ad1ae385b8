use std::panic;

use confmask::cli::{main_with_args, EXIT_INTERNAL};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CONFMASK_LOG", "warn")).init();
    let code = panic::catch_unwind(|| main_with_args(std::env::args_os())).unwrap_or(EXIT_INTERNAL);
    std::process::exit(code);
}
