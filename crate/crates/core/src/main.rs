fn main() {
    std::process::exit(cxr_triage::cli::run());
}
