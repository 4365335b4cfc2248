//! Codebook file format.
//!
//! ```text
//! "CFCB" | version u8 | C u32 LE | n_L u32 LE | n_L*C f32 LE | id u64 LE
//! ```

use std::path::Path;

use super::{Codebook, CodebookError};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"CFCB";
pub const CODEBOOK_VERSION: u8 = 1;

const HEADER_LEN: usize = 4 + 1 + 4 + 4;

impl Codebook {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.codes.len() * 4 + 8);
        out.extend_from_slice(&CODEBOOK_MAGIC);
        out.push(CODEBOOK_VERSION);
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.size() as u32).to_le_bytes());
        for c in &self.codes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&self.id.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodebookError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(CodebookError::Truncated {
                    needed,
                    available: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        if bytes[..4] != CODEBOOK_MAGIC {
            return Err(CodebookError::BadMagic);
        }
        need(5)?;
        if bytes[4] != CODEBOOK_VERSION {
            return Err(CodebookError::UnsupportedVersion(bytes[4]));
        }
        need(HEADER_LEN)?;
        let channels = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let size = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        if channels == 0 {
            return Err(CodebookError::ZeroChannels);
        }
        if !super::is_valid_size(size) {
            return Err(CodebookError::SizeNotPowerOfTwo(size));
        }
        let body = (channels as u128) * (size as u128) * 4;
        let total = HEADER_LEN as u128 + body + 8;
        if (bytes.len() as u128) < total {
            return Err(CodebookError::Truncated {
                needed: usize::try_from(total).unwrap_or(usize::MAX),
                available: bytes.len(),
            });
        }
        let total = total as usize;
        if bytes.len() > total {
            return Err(CodebookError::TrailingBytes(bytes.len() - total));
        }
        let codes: Vec<f32> = bytes[HEADER_LEN..total - 8]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let stored = u64::from_le_bytes(bytes[total - 8..].try_into().unwrap());
        let cb = Codebook::new(channels, codes)?;
        if cb.id != stored {
            return Err(CodebookError::HashMismatch {
                stored,
                computed: cb.id,
            });
        }
        Ok(cb)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    /// Reads and validates a codebook file. Format errors surface as
    /// `InvalidData`.
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
