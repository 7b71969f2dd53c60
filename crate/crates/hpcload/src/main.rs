fn main() {
    std::process::exit(hpcload::cli::main_entry());
}
