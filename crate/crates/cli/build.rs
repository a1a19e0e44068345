use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            collect(&p, out);
        } else if p.extension().is_some_and(|x| x == "rs" || x == "toml") {
            out.push(p);
        }
    }
}

// Content hash of every source file of both crates, exposed as AET_SOURCE_HASH.
fn main() {
    let root = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let crates = root.parent().unwrap();
    let mut files = Vec::new();
    for c in ["core", "cli"] {
        collect(&crates.join(c).join("src"), &mut files);
        files.push(crates.join(c).join("Cargo.toml"));
    }
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        let rel = f.strip_prefix(crates).unwrap();
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(f).unwrap_or_default());
        h.update([0]);
        println!("cargo:rerun-if-changed={}", f.display());
    }
    println!("cargo:rustc-env=AET_SOURCE_HASH={:x}", h.finalize());
}
