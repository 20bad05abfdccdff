//! Flat binary cache for generated datasets.
//!
//! Layout (little-endian): `u32` version, `u64` n, `u64` d, `u32` classes,
//! then `n*d` row-major `f64` inputs, `n` label bytes, `n` code bytes.
//! Provenance is not stored; reloads reattach the spec that the experiment
//! configuration regenerates deterministically.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Matrix;

use super::{EnvSpec, SpuriousDataset};

const CACHE_VERSION: u32 = 1;

pub fn write_cache(ds: &SpuriousDataset, path: &Path) -> Result<()> {
    let n = ds.len();
    let d = ds.dim();
    let mut out = Vec::with_capacity(24 + n * d * 8 + 2 * n);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.extend_from_slice(&(ds.classes as u32).to_le_bytes());
    for &v in ds.inputs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.labels);
    out.extend_from_slice(&ds.spurious);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_cache(path: &Path, provenance: EnvSpec) -> Result<SpuriousDataset> {
    let bytes = fs::read(path)?;
    if bytes.len() < 24 {
        return Err(Error::Format("cache file shorter than its header".into()));
    }
    let version = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Format(format!(
            "cache version {version}, expected {CACHE_VERSION}"
        )));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let classes = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
    let want = 24 + n * d * 8 + 2 * n;
    if bytes.len() != want {
        return Err(Error::Format(format!(
            "cache file is {} bytes, header implies {want}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n * d);
    let floats = &bytes[24..24 + n * d * 8];
    for chunk in floats.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let labels = bytes[24 + n * d * 8..24 + n * d * 8 + n].to_vec();
    let spurious = bytes[24 + n * d * 8 + n..].to_vec();
    let ds = SpuriousDataset {
        inputs: Matrix::from_vec(n, d, data)?,
        labels,
        spurious,
        classes,
        provenance,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sem, Role, SemLayout};

    #[test]
    fn cache_round_trips_exactly() {
        let spec = EnvSpec {
            client_id: 1,
            delta: 0.25,
            p_spurious: 0.2,
            n_samples: 300,
            role: Role::Train,
        };
        let ds = sem::synth_sem_generate(&spec, SemLayout::default(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("client_1.flgd");
        write_cache(&ds, &path).unwrap();
        let back = read_cache(&path, spec).unwrap();
        assert_eq!(back.inputs.data(), ds.inputs.data());
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.spurious, ds.spurious);
        assert_eq!(back.classes, 2);

        // Writing twice produces identical bytes.
        let path2 = dir.path().join("again.flgd");
        write_cache(&ds, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupt_cache_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flgd");
        fs::write(&path, [0u8; 10]).unwrap();
        let spec = EnvSpec {
            client_id: 1,
            delta: 0.0,
            p_spurious: 0.0,
            n_samples: 1,
            role: Role::Train,
        };
        assert!(read_cache(&path, spec).is_err());
    }
}
