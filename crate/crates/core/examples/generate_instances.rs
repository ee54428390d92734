//! Writes the shipped instance library to a directory (default `instances/`).

use std::path::PathBuf;

fn main() -> Result<(), qmerkle_core::Error> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("instances"), PathBuf::from);
    for name in qmerkle_core::library::write_all(&dir)? {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}
