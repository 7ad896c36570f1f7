use std::fs;
use std::path::{Path, PathBuf};

use super::{check_params, CnnError, NetworkSpec, Parameters, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CNN1";

/// Where the network description for a checkpoint lives: `<checkpoint>.spec`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".spec");
    PathBuf::from(name)
}

/// `CNN1`, u32 tensor count, then per tensor: u32 ndim, dims, f32 data (all LE).
pub fn encode_params(params: &Parameters) -> Vec<u8> {
    let mut buf = CHECKPOINT_MAGIC.to_vec();
    buf.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!("truncated at byte {} (needed {n} more)", self.pos)
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes tensors and checks them against `spec`.
pub fn decode_params(bytes: &[u8], spec: &NetworkSpec) -> std::result::Result<Parameters, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic, expected CNN1".into());
    }
    let count = r.u32()? as usize;
    let mut params: Parameters = spec.zero_params();
    if count != params.tensors.len() {
        return Err(format!(
            "{count} tensors stored, spec needs {}",
            params.tensors.len()
        ));
    }
    for (i, t) in params.tensors.iter_mut().enumerate() {
        let ndim = r.u32()? as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        if dims != t.dims {
            return Err(format!("tensor {i} has dims {dims:?}, spec needs {:?}", t.dims));
        }
        let raw = r.take(4 * t.data.len())?;
        for (v, c) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(c.try_into().unwrap());
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(format!("tensor {i} holds non-finite values"));
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(params)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CnnError + '_ {
    move |source| CnnError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the tensor file and its `.spec` sidecar.
pub fn write_checkpoint(path: impl AsRef<Path>, spec: &NetworkSpec, params: &Parameters) -> Result<()> {
    let path = path.as_ref();
    check_params(spec, params)?;
    fs::write(path, encode_params(params)).map_err(io(path))?;
    let side = sidecar_path(path);
    fs::write(&side, spec.to_text()).map_err(io(&side))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkSpec, Parameters)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io(&side))?;
    let spec = NetworkSpec::from_text(&text)?;
    let bytes = fs::read(path).map_err(io(path))?;
    let params = decode_params(&bytes, &spec).map_err(|message| CnnError::Checkpoint {
        path: path.to_path_buf(),
        message,
    })?;
    Ok((spec, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::he_uniform_init;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cnn1");
        let spec = NetworkSpec::desk(8, 8);
        let params = he_uniform_init(&spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9));
        write_checkpoint(&path, &spec, &params).unwrap();
        assert!(dir.path().join("m.cnn1.spec").exists());
        let (spec2, params2) = read_checkpoint(&path).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(params2, params);
        assert_eq!(fs::read(&path).unwrap(), encode_params(&params2));
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let spec = NetworkSpec::desk(8, 8);
        let bytes = encode_params(&spec.zero_params());
        assert!(decode_params(&bytes[..bytes.len() - 1], &spec).unwrap_err().contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_params(&extra, &spec).unwrap_err().contains("trailing"));
        let other = NetworkSpec::desk(12, 12);
        assert!(decode_params(&bytes, &other).is_err());
        let mut magic = bytes;
        magic[3] = b'2';
        assert!(decode_params(&magic, &spec).unwrap_err().contains("magic"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn encode_decode_is_identity(seed in any::<u64>()) {
            let spec = NetworkSpec::desk(8, 8);
            let params = he_uniform_init(&spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let bytes = encode_params(&params);
            let back = decode_params(&bytes, &spec).unwrap();
            prop_assert_eq!(encode_params(&back), bytes);
            prop_assert_eq!(back, params);
        }
    }
}
