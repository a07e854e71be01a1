//! On-disk scalogram store: `SCG1`, then height, width and channels as
//! little-endian `u32`, then `f32` little-endian pixels in HWC order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::image::ScalogramImage;

pub const MAGIC: &[u8; 4] = b"SCG1";
pub const EXTENSION: &str = "scg";

pub fn encode(img: &ScalogramImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + img.pixels.len() * 4);
    out.extend_from_slice(MAGIC);
    for d in [img.height, img.width, img.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &img.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScalogramImage> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::VersionMismatch("not an SCG1 scalogram".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let n = height * width * channels;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::Format(format!(
            "SCG1 payload has {} bytes, expected {}",
            bytes.len() - 16,
            4 * n
        )));
    }
    let pixels = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ScalogramImage {
        height,
        width,
        channels,
        pixels,
    })
}

pub fn write_scalogram(path: &Path, img: &ScalogramImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("scg.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&encode(img)).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_scalogram(path: &Path) -> Result<ScalogramImage> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Hex SHA-256 over the recording id, the kept window and the serialized parameters.
pub fn content_key(recording_id: &str, window: (f64, f64), params_json: &str) -> String {
    let mut h = Sha256::new();
    h.update(recording_id.as_bytes());
    h.update([0]);
    h.update(window.0.to_le_bytes());
    h.update(window.1.to_le_bytes());
    h.update([0]);
    h.update(params_json.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Directory of content-addressed scalogram files.
#[derive(Debug, Clone)]
pub struct ScalogramCache {
    pub root: PathBuf,
}

impl ScalogramCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ScalogramCache { root: root.into() }
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.{EXTENSION}"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.path_for(key).is_file()
    }

    pub fn load(&self, key: &str) -> Result<ScalogramImage> {
        let p = self.path_for(key);
        if !p.is_file() {
            return Err(Error::CacheMiss(p));
        }
        read_scalogram(&p)
    }

    pub fn store(&self, key: &str, img: &ScalogramImage) -> Result<PathBuf> {
        let p = self.path_for(key);
        write_scalogram(&p, img)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> ScalogramImage {
        ScalogramImage {
            height: 2,
            width: 3,
            channels: 3,
            pixels: (0..18).map(|i| i as f32 / 17.0).collect(),
        }
    }

    #[test]
    fn header_layout() {
        let b = encode(&img());
        assert_eq!(&b[..4], b"SCG1");
        assert_eq!(&b[4..8], &[2, 0, 0, 0]);
        assert_eq!(&b[8..12], &[3, 0, 0, 0]);
        assert_eq!(&b[12..16], &[3, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 18 * 4);
        assert_eq!(&b[20..24], &(1.0f32 / 17.0).to_le_bytes());
    }

    #[test]
    fn round_trip_and_rejections() {
        let b = encode(&img());
        assert_eq!(decode(&b).unwrap(), img());
        assert!(decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[3] = b'2';
        assert!(matches!(decode(&bad), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn cache_store_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ScalogramCache::new(dir.path());
        let key = content_key("rec", (1.0, 9.216), "{}");
        assert!(matches!(cache.load(&key), Err(Error::CacheMiss(_))));
        cache.store(&key, &img()).unwrap();
        assert_eq!(cache.load(&key).unwrap(), img());
    }

    #[test]
    fn key_depends_on_every_input() {
        let k = content_key("a", (0.0, 1.0), "p");
        assert_eq!(k.len(), 64);
        assert_eq!(k, content_key("a", (0.0, 1.0), "p"));
        assert_ne!(k, content_key("b", (0.0, 1.0), "p"));
        assert_ne!(k, content_key("a", (0.5, 1.0), "p"));
        assert_ne!(k, content_key("a", (0.0, 1.0), "q"));
    }
}
