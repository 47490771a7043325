//! Binary parameter files.
//!
//! Layout: `MCAV`, format version (u32 LE), preset name (u32 LE length + UTF-8),
//! 32-byte SHA-256 of the layer spec, then every parameter tensor in declaration
//! order as f64 LE.

use crate::error::{NnError, NnResult};
use crate::network::{NetworkParams, NetworkSpec};
use crate::scalar::Scalar;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MCAV";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar>(mut out: impl Write, preset: &str, spec: &NetworkSpec, params: &NetworkParams<S>) -> NnResult<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(preset.len() as u32).to_le_bytes())?;
    out.write_all(preset.as_bytes())?;
    out.write_all(&spec.digest())?;
    let mut buf = Vec::with_capacity(params.num_params() * 8);
    for t in params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> NnResult<()> {
    r.read_exact(buf).map_err(|_| corrupt(format!("truncated file while reading {what}")))
}

/// Reads a checkpoint written for `spec`; returns the stored preset name and the parameters.
pub fn read_checkpoint<S: Scalar>(mut input: impl Read, spec: &NetworkSpec) -> NnResult<(String, NetworkParams<S>)> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    read_exact(&mut input, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    read_exact(&mut input, &mut word, "preset name")?;
    let len = u32::from_le_bytes(word) as usize;
    if len > 4096 {
        return Err(corrupt("preset name too long"));
    }
    let mut name = vec![0u8; len];
    read_exact(&mut input, &mut name, "preset name")?;
    let preset = String::from_utf8(name).map_err(|_| corrupt("preset name is not UTF-8"))?;
    let mut digest = [0u8; 32];
    read_exact(&mut input, &mut digest, "layer digest")?;
    if digest != spec.digest() {
        return Err(corrupt(format!("layer spec digest mismatch (checkpoint preset '{preset}')")));
    }
    let mut params = NetworkParams::<S>::zeros(spec)?;
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if rest.len() != params.num_params() * 8 {
        return Err(corrupt(format!("expected {} parameter bytes, found {}", params.num_params() * 8, rest.len())));
    }
    let mut chunks = rest.chunks_exact(8);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            let raw: [u8; 8] = chunks.next().unwrap().try_into().unwrap();
            *v = S::from_f64_lossy(f64::from_le_bytes(raw));
        }
    }
    if !params.is_finite() {
        return Err(corrupt("non-finite parameter values"));
    }
    Ok((preset, params))
}

pub fn save_checkpoint<S: Scalar>(path: &Path, preset: &str, spec: &NetworkSpec, params: &NetworkParams<S>) -> NnResult<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, preset, spec, params)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path, spec: &NetworkSpec) -> NnResult<(String, NetworkParams<S>)> {
    let bytes = std::fs::read(path).map_err(|e| corrupt(format!("cannot read {}: {e}", path.display())))?;
    read_checkpoint(bytes.as_slice(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let spec = NetworkSpec::desk();
        let p = NetworkParams::<f32>::init(&spec, 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "desk", &spec, &p).unwrap();
        let (name, q) = read_checkpoint::<f32>(buf.as_slice(), &spec).unwrap();
        assert_eq!(name, "desk");
        assert_eq!(p, q);
    }

    #[test]
    fn digest_mismatch_is_refused() {
        let spec = NetworkSpec::desk();
        let p = NetworkParams::<f64>::init(&spec, 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "desk", &spec, &p).unwrap();
        let mut other = spec.clone();
        other.head_hidden = 128;
        let err = read_checkpoint::<f64>(buf.as_slice(), &other).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
    }

    #[test]
    fn truncation_is_refused() {
        let spec = NetworkSpec::desk();
        let p = NetworkParams::<f64>::init(&spec, 5).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "desk", &spec, &p).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint::<f64>(buf.as_slice(), &spec).is_err());
        assert!(read_checkpoint::<f64>(&b"MCAX"[..], &spec).is_err());
    }
}
