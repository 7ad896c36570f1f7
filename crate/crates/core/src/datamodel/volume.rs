use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Result};

pub const VOLUME_MAGIC: [u8; 4] = *b"VOL1";
const HEADER_LEN: usize = 16;

/// Dense 3-D scalar grid stored slice-major (depth slowest, then row, then column).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    depth: usize,
    height: usize,
    width: usize,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(depth: usize, height: usize, width: usize, voxels: Vec<f32>) -> Result<Self> {
        let expected = checked_count(depth as u64, height as u64, width as u64)?;
        if depth == 0 || height == 0 || width == 0 {
            return Err(DataError::ZeroDimension {
                depth,
                height,
                width,
            });
        }
        if voxels.len() != expected {
            return Err(DataError::VoxelCount {
                expected,
                found: voxels.len(),
            });
        }
        if let Some((index, &value)) = voxels.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::NonFinite { index, value });
        }
        Ok(Self {
            depth,
            height,
            width,
            voxels,
        })
    }

    pub fn zeros(depth: usize, height: usize, width: usize) -> Result<Self> {
        let n = checked_count(depth as u64, height as u64, width as u64)?;
        Self::new(depth, height, width, vec![0.0; n])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn slice_len(&self) -> usize {
        self.height * self.width
    }

    /// Axial slice `z` as a row-major `height × width` image.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[(z * self.height + y) * self.width + x]
    }
}

fn checked_count(depth: u64, height: u64, width: u64) -> Result<usize> {
    depth
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .and_then(|n| n.checked_mul(4))
        .and_then(|bytes| usize::try_from(bytes).ok())
        .map(|bytes| bytes / 4)
        .ok_or(DataError::DimensionOverflow {
            depth,
            height,
            width,
        })
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a VOL1 file.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < 4 || bytes[..4] != VOLUME_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: VOLUME_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as u64;
    let (depth, height, width) = (dim(0), dim(1), dim(2));
    let count = checked_count(depth, height, width)?;
    let expected = HEADER_LEN as u64 + 4 * count as u64;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(DataError::TrailingBytes {
            path: path.to_path_buf(),
            extra: found - expected,
        });
    }
    let voxels = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(depth as usize, height as usize, width as usize, voxels)
}

/// Writes a VOL1 file; round-trips bit-exactly with [`read_volume`].
pub fn write_volume(path: impl AsRef<Path>, volume: &Volume) -> Result<()> {
    let path = path.as_ref();
    let dims = [volume.depth, volume.height, volume.width].map(|d| {
        u32::try_from(d).map_err(|_| DataError::DimensionOverflow {
            depth: volume.depth as u64,
            height: volume.height as u64,
            width: volume.width as u64,
        })
    });
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * volume.voxels.len());
    buf.extend_from_slice(&VOLUME_MAGIC);
    for d in dims {
        buf.extend_from_slice(&d?.to_le_bytes());
    }
    for v in &volume.voxels {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&buf).map_err(io_err(path))
}
