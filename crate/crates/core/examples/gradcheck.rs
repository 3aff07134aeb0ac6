//! Finite-difference check of every op and block at f64.
//!
//! `cargo run --release --example gradcheck [case]`

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    let results = vssa::verify::run(&which).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(2);
    });
    for r in &results {
        println!(
            "{:<22} {:>10.3e}  {:>8.1?}  {}",
            r.name,
            r.max_rel_error,
            r.elapsed,
            if r.passed { "ok" } else { r.error.as_deref().unwrap_or("FAILED") }
        );
    }
    if results.iter().any(|r| !r.passed) {
        std::process::exit(1);
    }
}
