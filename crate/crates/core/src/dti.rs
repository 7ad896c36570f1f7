//! Mean diffusivity and fractional anisotropy from symmetric 3×3 diffusion tensors.

use std::fs;
use std::path::Path;

use crate::datamodel::{DataError, Volume};

pub const TENSOR_MAGIC: [u8; 4] = *b"TEN1";

/// Symmetric diffusion tensor, six unique entries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym3Tensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl Sym3Tensor {
    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64, xz: f64, yz: f64) -> Self {
        Self {
            xx,
            yy,
            zz,
            xy,
            xz,
            yz,
        }
    }

    pub fn diagonal(xx: f64, yy: f64, zz: f64) -> Self {
        Self::new(xx, yy, zz, 0.0, 0.0, 0.0)
    }

    pub fn isotropic(d: f64) -> Self {
        Self::diagonal(d, d, d)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Entries in on-disk order: xx, yy, zz, xy, xz, yz.
    pub fn as_array(&self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn frobenius_norm(&self) -> f64 {
        (self.xx * self.xx
            + self.yy * self.yy
            + self.zz * self.zz
            + 2.0 * (self.xy * self.xy + self.xz * self.xz + self.yz * self.yz))
            .sqrt()
    }

    /// det(D − λI).
    pub fn characteristic(&self, lambda: f64) -> f64 {
        let (a, b, c) = (self.xx - lambda, self.yy - lambda, self.zz - lambda);
        a * (b * c - self.yz * self.yz) - self.xy * (self.xy * c - self.yz * self.xz)
            + self.xz * (self.xy * self.yz - b * self.xz)
    }
}

impl std::ops::Add for Sym3Tensor {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(
            self.xx + o.xx,
            self.yy + o.yy,
            self.zz + o.zz,
            self.xy + o.xy,
            self.xz + o.xz,
            self.yz + o.yz,
        )
    }
}

/// Eigenvalues in descending order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

impl EigenTriple {
    /// Sorts the three values descending.
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        let mut v = [a, b, c];
        v.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
        Self {
            l1: v[0],
            l2: v[1],
            l3: v[2],
        }
    }

    pub fn sum(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }
}

/// Eigenvalues of a symmetric 3×3 matrix by cyclic Jacobi rotations, with a
/// fixed sweep order so results are reproducible.
pub fn eigenvalues_sym3(t: &Sym3Tensor) -> EigenTriple {
    let mut a = [[t.xx, t.xy, t.xz], [t.xy, t.yy, t.yz], [t.xz, t.yz, t.zz]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == 0.0 || off <= f64::EPSILON * f64::EPSILON * diag {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let tan = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (tan * tan + 1.0).sqrt();
            let s = tan * c;
            a[p][p] -= tan * apq;
            a[q][q] += tan * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q;
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = c * arp - s * arq;
            a[p][r] = a[r][p];
            a[r][q] = s * arp + c * arq;
            a[q][r] = a[r][q];
        }
    }
    EigenTriple::new(a[0][0], a[1][1], a[2][2])
}

pub fn mean_diffusivity(t: &Sym3Tensor) -> f64 {
    t.trace() / 3.0
}

/// Raw fractional anisotropy before clamping; may exceed 1 for indefinite tensors.
pub fn fractional_anisotropy_raw(e: &EigenTriple) -> f64 {
    let denom = e.l1 * e.l1 + e.l2 * e.l2 + e.l3 * e.l3;
    if denom == 0.0 {
        return 0.0;
    }
    let num = (e.l1 - e.l2).powi(2) + (e.l2 - e.l3).powi(2) + (e.l3 - e.l1).powi(2);
    (0.5 * num / denom).sqrt()
}

/// Fractional anisotropy clamped to [0, 1]; 0 at the all-zero singularity.
pub fn fractional_anisotropy(e: &EigenTriple) -> f64 {
    fractional_anisotropy_raw(e).clamp(0.0, 1.0)
}

#[derive(Debug, thiserror::Error)]
pub enum TensorVolumeError {
    #[error("tensor count {found} does not match dimensions (expected {expected})")]
    Count { expected: usize, found: usize },
    #[error("non-finite tensor at voxel {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-voxel tensors on a `depth × height × width` grid, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorVolume {
    depth: usize,
    height: usize,
    width: usize,
    tensors: Vec<Sym3Tensor>,
}

impl TensorVolume {
    pub fn new(
        depth: usize,
        height: usize,
        width: usize,
        tensors: Vec<Sym3Tensor>,
    ) -> Result<Self, TensorVolumeError> {
        let expected = depth
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or(DataError::DimensionOverflow {
                depth: depth as u64,
                height: height as u64,
                width: width as u64,
            })?;
        if expected == 0 {
            return Err(DataError::ZeroDimension {
                depth,
                height,
                width,
            }
            .into());
        }
        if tensors.len() != expected {
            return Err(TensorVolumeError::Count {
                expected,
                found: tensors.len(),
            });
        }
        if let Some(i) = tensors.iter().position(|t| !t.is_finite()) {
            return Err(TensorVolumeError::NonFinite(i));
        }
        Ok(Self {
            depth,
            height,
            width,
            tensors,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn tensors(&self) -> &[Sym3Tensor] {
        &self.tensors
    }
}

/// MD and FA maps computed voxel by voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMaps {
    pub md: Volume,
    pub fa: Volume,
    /// Voxels whose raw FA fell outside [0, 1] and were clamped.
    pub clamped_voxels: usize,
}

pub fn compute_scalar_maps(tv: &TensorVolume) -> Result<ScalarMaps, TensorVolumeError> {
    let mut clamped = 0;
    let mut md = Vec::with_capacity(tv.tensors.len());
    let mut fa = Vec::with_capacity(tv.tensors.len());
    for t in &tv.tensors {
        let raw = fractional_anisotropy_raw(&eigenvalues_sym3(t));
        if !(0.0..=1.0).contains(&raw) {
            clamped += 1;
        }
        md.push(mean_diffusivity(t) as f32);
        fa.push(raw.clamp(0.0, 1.0) as f32);
    }
    if clamped > 0 {
        log::warn!("clamped fractional anisotropy in {clamped} voxels with indefinite tensors");
    }
    let (d, h, w) = tv.dims();
    Ok(ScalarMaps {
        md: Volume::new(d, h, w, md)?,
        fa: Volume::new(d, h, w, fa)?,
        clamped_voxels: clamped,
    })
}

/// Reads a TEN1 file: magic, three u32 LE dims, then six f32 LE per voxel.
pub fn read_tensor_volume(path: impl AsRef<Path>) -> Result<TensorVolume, TensorVolumeError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 4 || bytes[..4] != TENSOR_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: TENSOR_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        }
        .into());
    }
    if bytes.len() < 16 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: 16,
            found: bytes.len() as u64,
        }
        .into());
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as u64;
    let (d, h, w) = (dim(0), dim(1), dim(2));
    let overflow = || DataError::DimensionOverflow {
        depth: d,
        height: h,
        width: w,
    };
    let count = d
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(overflow)?;
    let expected = count
        .checked_mul(24)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(overflow)?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        }
        .into());
    }
    if found > expected {
        return Err(DataError::TrailingBytes {
            path: path.to_path_buf(),
            extra: found - expected,
        }
        .into());
    }
    let tensors = bytes[16..]
        .chunks_exact(24)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[4 * i..4 * i + 4].try_into().unwrap()) as f64;
            Sym3Tensor::new(f(0), f(1), f(2), f(3), f(4), f(5))
        })
        .collect();
    TensorVolume::new(d as usize, h as usize, w as usize, tensors)
}

pub fn write_tensor_volume(path: impl AsRef<Path>, tv: &TensorVolume) -> Result<(), TensorVolumeError> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + 24 * tv.tensors.len());
    buf.extend_from_slice(&TENSOR_MAGIC);
    for d in [tv.depth, tv.height, tv.width] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for t in &tv.tensors {
        for v in t.as_array() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|source| {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}
