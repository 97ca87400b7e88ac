use tegaarec::cli::{main_with_args, Stdout};

fn main() {
    std::process::exit(main_with_args(std::env::args_os(), &mut Stdout));
}
