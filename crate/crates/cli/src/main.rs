fn main() { println!("stvs scaffold"); }
