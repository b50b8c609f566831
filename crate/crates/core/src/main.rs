fn main() {
    let out = &mut std::io::stdout();
    let err = &mut std::io::stderr();
    std::process::exit(unitprompt::cli::main_with(std::env::args_os(), out, err));
}
