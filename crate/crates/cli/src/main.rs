fn main() -> std::process::ExitCode {
    dldp::main_with_args(std::env::args_os())
}
