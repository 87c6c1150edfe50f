fn main() {
    println!("sap");
}
