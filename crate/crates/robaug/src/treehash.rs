//! Content hash of a directory tree, used to check that augmentation
//! runs are byte-for-byte reproducible.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 over every regular file under `root`, visited in sorted
/// relative-path order. Each file contributes its path, a zero byte,
/// its length, and its bytes, so renames and content changes both
/// change the hash. Directory entries themselves carry no state.
pub fn hash_tree(root: impl AsRef<Path>) -> Result<String> {
    let root = root.as_ref();
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry.map_err(|e| {
            let path = e.path().map(|p| p.to_path_buf()).unwrap_or_else(|| root.to_path_buf());
            Error::Io {
                path,
                source: e
                    .into_io_error()
                    .unwrap_or_else(|| std::io::Error::other("walk failed")),
            }
        })?;
        if entry.file_type().is_file() {
            files.push(entry.into_path());
        }
    }
    files.sort_by_key(|p| {
        p.strip_prefix(root)
            .expect("walked path is under root")
            .to_string_lossy()
            .into_owned()
    });

    let mut hasher = Sha256::new();
    for path in &files {
        let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
        let rel = rel.replace(std::path::MAIN_SEPARATOR, "/");
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(crate::mask::hex(&hasher.finalize()))
}
