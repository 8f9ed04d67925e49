fn main() {
    // CLI lands with the recipe module.
    std::process::exit(0);
}
