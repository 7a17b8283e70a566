fn main() {
    std::process::exit(monopole_orbits::cli::execute(std::env::args_os()));
}
