fn main() {
    std::process::exit(volterra_lift::cli::main());
}
