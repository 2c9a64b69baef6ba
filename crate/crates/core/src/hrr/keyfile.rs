//! On-disk key format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "C3KS"
//! 4       2     format version (u16 LE)
//! 6       2     reserved
//! 8       4     D (u32 LE)
//! 12      2     R (u16 LE)
//! 14      2     reserved
//! 16      8     seed (u64 LE)
//! 24      4·R·D key values, f32 LE, row-major by key index
//! ```

use std::io::{Read, Write};

use super::{KeyKind, KeySet};
use crate::error::{Error, Result};

pub const KEY_MAGIC: [u8; 4] = *b"C3KS";
pub const KEY_FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct KeyFile {
    pub dim: usize,
    pub count: usize,
    pub seed: u64,
    pub values: Vec<f32>,
}

impl KeyFile {
    pub fn from_keys(keys: &KeySet) -> Result<Self> {
        if keys.count() > u16::MAX as usize {
            return Err(Error::invalid(format!(
                "key count {} exceeds the key file limit",
                keys.count()
            )));
        }
        if keys.dim() > u32::MAX as usize {
            return Err(Error::invalid("key dimension exceeds the key file limit"));
        }
        Ok(Self {
            dim: keys.dim(),
            count: keys.count(),
            seed: keys.seed(),
            values: keys.to_f32(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 + 4 * self.values.len());
        out.extend_from_slice(&KEY_MAGIC);
        out.extend_from_slice(&KEY_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN + 8 {
            return Err(Error::format("key file shorter than its header"));
        }
        if bytes[0..4] != KEY_MAGIC {
            return Err(Error::format("bad key file magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != KEY_FORMAT_VERSION {
            return Err(Error::format(format!("unsupported key file version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let body = &bytes[24..];
        if body.len() != 4 * dim * count {
            return Err(Error::format(format!(
                "key file body holds {} bytes, expected {}",
                body.len(),
                4 * dim * count
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dim, count, seed, values })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Rebuilds the full-precision key set and checks it against the stored values.
    pub fn to_key_set(&self) -> Result<KeySet> {
        for kind in [KeyKind::Gaussian, KeyKind::Delta] {
            if let Ok(keys) = KeySet::build(kind, self.dim, self.count, self.seed) {
                if keys.to_f32() == self.values {
                    return Ok(keys);
                }
            }
        }
        Err(Error::format(
            "stored key values do not match any key set regenerated from the header",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let keys = KeySet::generate(3, 2, 0x0102_0304_0506_0708).unwrap();
        let bytes = KeyFile::from_keys(&keys).unwrap().to_bytes();
        assert_eq!(bytes.len(), 24 + 4 * 6);
        assert_eq!(
            &bytes[..24],
            &[
                b'C', b'3', b'K', b'S', 1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 8, 7, 6, 5, 4, 3, 2, 1
            ]
        );
        assert_eq!(bytes[24..28], (keys.key(0)[0] as f32).to_le_bytes());
    }

    #[test]
    fn roundtrip_and_regenerate() {
        let keys = KeySet::generate(16, 3, 99).unwrap();
        let file = KeyFile::from_keys(&keys).unwrap();
        let parsed = KeyFile::from_bytes(&file.to_bytes()).unwrap();
        assert_eq!(parsed, file);
        assert_eq!(parsed.to_key_set().unwrap(), keys);

        let delta = KeySet::delta(4, 2).unwrap();
        let parsed = KeyFile::from_bytes(&KeyFile::from_keys(&delta).unwrap().to_bytes()).unwrap();
        assert_eq!(parsed.to_key_set().unwrap(), delta);
    }

    #[test]
    fn corrupt_files() {
        let keys = KeySet::generate(4, 1, 1).unwrap();
        let mut bytes = KeyFile::from_keys(&keys).unwrap().to_bytes();
        assert!(KeyFile::from_bytes(&bytes[..20]).is_err());
        assert!(KeyFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[24] ^= 0xff;
        assert!(KeyFile::from_bytes(&bytes).unwrap().to_key_set().is_err());
        bytes[0] = b'X';
        assert!(KeyFile::from_bytes(&bytes).is_err());
    }
}
