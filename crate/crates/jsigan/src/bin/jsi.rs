fn main() {
    println!("jsi CLI placeholder");
}
