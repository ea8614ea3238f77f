fn main() {
    std::process::exit(skewsim::cli::main_entry());
}
