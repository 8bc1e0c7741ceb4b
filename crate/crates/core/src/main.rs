fn main() {
    let code = softhg::cli::dispatch(std::env::args_os());
    std::process::exit(code);
}
