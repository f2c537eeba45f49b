//! `STEMFEAT` binary container for multi-layer frame features.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size        | field                         |
//! |--------|-------------|-------------------------------|
//! | 0      | 8           | magic `b"STEMFEAT"`           |
//! | 8      | 4 (u32)     | version (currently 1)         |
//! | 12     | 4 (u32)     | layers `L`                    |
//! | 16     | 4 (u32)     | frames `T`                    |
//! | 20     | 4 (u32)     | dim `d`                       |
//! | 24     | `L·T·d·4`   | f32 payload, layer-major then row-major |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

pub const MAGIC: &[u8; 8] = b"STEMFEAT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// An `L x T x d` stack of per-layer frame features for one stem.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    layers: usize,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureStack {
    pub fn new(layers: usize, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "feature stack dimensions must be positive, got {layers}x{frames}x{dim}"
            )));
        }
        if data.len() != layers * frames * dim {
            return Err(Error::InvalidInput(format!(
                "{} values cannot fill a {layers}x{frames}x{dim} stack",
                data.len()
            )));
        }
        Ok(Self {
            layers,
            frames,
            dim,
            data,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Features of one layer as a `T x d` row-major slice.
    pub fn layer(&self, l: usize) -> &[f32] {
        let n = self.frames * self.dim;
        &self.data[l * n..(l + 1) * n]
    }

    /// Widens every layer to an `f64` matrix.
    pub fn to_matrices(&self) -> Vec<Matrix> {
        (0..self.layers)
            .map(|l| {
                let data = self.layer(l).iter().map(|&v| f64::from(v)).collect();
                Matrix::from_vec(self.frames, self.dim, data).expect("sized by construction")
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for n in [self.layers, self.frames, self.dim] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a full file image. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(Error::BadMagic { path: path.into() });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                path: path.into(),
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                found: version,
                expected: VERSION,
            });
        }
        let (layers, frames, dim) = (word(12), word(16), word(20));
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::ZeroDims {
                path: path.into(),
                layers,
                frames,
                dim,
            });
        }
        let count = layers as usize * frames as usize * dim as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() < count * 4 {
            return Err(Error::Truncated {
                path: path.into(),
                expected: count * 4,
                found: payload.len(),
            });
        }
        if payload.len() > count * 4 {
            return Err(Error::Malformed {
                path: path.into(),
                reason: format!("{} trailing bytes after payload", payload.len() - count * 4),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self {
            layers: layers as usize,
            frames: frames as usize,
            dim: dim as usize,
            data,
        })
    }
}

pub fn write_stem_file(path: &Path, stack: &FeatureStack) -> Result<()> {
    fs::write(path, stack.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_stem_file(path: &Path) -> Result<FeatureStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureStack::from_bytes(&bytes, path)
}
