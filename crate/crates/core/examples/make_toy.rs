//! Regenerates the synthetic desk dataset: `cargo run --example make_toy -- data/toy`.

use std::path::PathBuf;

fn main() -> outpaint::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "data/toy".into());
    outpaint::layout_data::synthetic::write_toy_dataset(&dir, 64, 8, 4)?;
    println!("wrote {}", dir.display());
    Ok(())
}
