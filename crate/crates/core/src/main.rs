fn main() {
    std::process::exit(freqprint::cli::main());
}
