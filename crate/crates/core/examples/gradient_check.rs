//! Finite-difference check of every primitive, every KL term, the encoder, the
//! decoder and the full pair bound at tiny dimensions.
//!
//! Run with `cargo run --example gradient_check [seed]`.

use vhe::autodiff::GradCheckOptions;
use vhe::gradsuite::{gradient_suite, tiny_dims};

fn main() -> vhe::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let report = gradient_suite(&tiny_dims(), seed, GradCheckOptions::default())?;
    print!("{report}");
    println!("max relative error {:.3e}", report.max_rel_error());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
