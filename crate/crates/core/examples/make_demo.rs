//! Regenerates the bundled demo directory.
//!
//! Usage: `cargo run -p l3ens-core --example make_demo [OUT_DIR]`

use std::path::{Path, PathBuf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo"));
    let config = l3ens_core::demo::write_demo(&out)?;
    println!("demo written to {}", config.display());
    Ok(())
}
