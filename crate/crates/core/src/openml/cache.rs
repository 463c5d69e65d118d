//! URL-keyed response cache. Every entry is one file holding a status line
//! followed by the raw body:
//!
//! ```text
//! HTTP 200
//! <body bytes>
//! ```
//!
//! File names are a readable slug of the URL plus a hash of the full URL.
//! Writes go through a temporary file and a rename, so concurrent writers
//! never expose partial entries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct CachedResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, url: &str) -> PathBuf {
        let stripped = url.split_once("://").map(|(_, rest)| rest).unwrap_or(url);
        let mut slug: String = stripped
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        if slug.len() > 120 {
            let mut cut = slug.len() - 120;
            while !slug.is_char_boundary(cut) {
                cut += 1;
            }
            slug = slug[cut..].to_string();
        }
        let digest = hex::encode(Sha256::digest(url.as_bytes()));
        self.dir.join(format!("{slug}-{}", &digest[..16]))
    }

    pub fn get(&self, url: &str) -> std::io::Result<Option<CachedResponse>> {
        let path = self.path_for(url);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let newline = bytes.iter().position(|&b| b == b'\n');
        let status = newline
            .and_then(|nl| std::str::from_utf8(&bytes[..nl]).ok())
            .and_then(|line| line.strip_prefix("HTTP "))
            .and_then(|code| code.trim().parse::<u16>().ok());
        match (status, newline) {
            (Some(status), Some(nl)) => Ok(Some(CachedResponse {
                status,
                body: bytes[nl + 1..].to_vec(),
            })),
            _ => Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("malformed cache entry {}", path.display()),
            )),
        }
    }

    pub fn put(&self, url: &str, status: u16, body: &[u8]) -> std::io::Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(url);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        writeln!(tmp, "HTTP {status}")?;
        tmp.write_all(body)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(path)
    }
}
