fn main() {
    match bmfnet::cli::run(std::env::args_os()) {
        Ok(code) => std::process::exit(code),
        Err(e) => match e.downcast_ref::<clap::Error>() {
            Some(c) => c.exit(),
            None => {
                eprintln!("error: {e:#}");
                std::process::exit(2);
            }
        },
    }
}
