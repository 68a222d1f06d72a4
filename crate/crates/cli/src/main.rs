fn main() {
    println!("evloc");
}
