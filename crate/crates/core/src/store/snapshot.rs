//! Content-addressed snapshot directory: `<root>/<content-hash-hex>/{text.txt,raw.html}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::hash::Hash256;

pub const TEXT_FILE: &str = "text.txt";
pub const RAW_FILE: &str = "raw.html";

#[derive(Debug, Clone)]
pub struct SnapshotDir {
    root: PathBuf,
}

impl SnapshotDir {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes both files and returns the snapshot reference (the hash hex).
    pub fn put(&self, content_hash: &Hash256, text: &str, raw_html: &[u8]) -> std::io::Result<String> {
        let reference = content_hash.to_hex();
        let dir = self.root.join(&reference);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(TEXT_FILE), text.as_bytes())?;
        write_atomic(&dir.join(RAW_FILE), raw_html)?;
        Ok(reference)
    }

    pub fn text_path(&self, reference: &str) -> PathBuf {
        self.root.join(reference).join(TEXT_FILE)
    }

    pub fn read_text(&self, reference: &str) -> std::io::Result<String> {
        fs::read_to_string(self.text_path(reference))
    }

    pub fn read_raw(&self, reference: &str) -> std::io::Result<Vec<u8>> {
        fs::read(self.root.join(reference).join(RAW_FILE))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp)?;
    file.write_all(bytes)?;
    file.sync_all()?;
    fs::rename(tmp, path)
}
