fn main() {
    println!("trajcast");
}
