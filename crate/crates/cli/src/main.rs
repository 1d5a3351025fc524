fn main() {
    println!("silicon");
}
