fn main() {
    println!("hoi: pipeline CLI (subcommands land with the pipeline module)");
}
