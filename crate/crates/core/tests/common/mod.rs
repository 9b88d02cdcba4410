#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const IDX_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/idx").join(format!("{name}.hex"));
    let hex: String = std::fs::read_to_string(&path).unwrap().split_whitespace().collect();
    (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect()
}

/// Writes the IDX fixture as `<root>/<family>/…` and returns `root`.
pub fn write_idx_root(root: &Path, family: &str) -> PathBuf {
    let dir = root.join(family);
    std::fs::create_dir_all(&dir).unwrap();
    for name in IDX_FILES {
        std::fs::write(dir.join(name), fixture_bytes(name)).unwrap();
    }
    root.to_path_buf()
}

pub fn mnist_root() -> PathBuf {
    std::env::var_os(panning::data::DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}
