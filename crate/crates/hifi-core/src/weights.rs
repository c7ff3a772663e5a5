//! Weight archive: a manifest-plus-payload container for named tensors.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic "HIFIWGT\0"
//! bytes 8..12   format version (u32 LE)
//! bytes 12..16  manifest length M (u32 LE)
//! bytes 16..16+M  manifest JSON (UTF-8)
//! rest          payload: tensor data, little-endian IEEE-754, row-major
//! ```
//!
//! The manifest carries the architecture flags and one entry per tensor:
//! `(name, shape, scalar width in bytes, byte offset into the payload)`,
//! sorted by name (the canonical order). Weights exported for interchange
//! use 32-bit scalars; training checkpoints use 64-bit scalars (plus
//! `optim.*` entries for optimizer state) so that resuming is bit-exact.
//! Save -> load -> save reproduces a file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{init_params_with, ConfidenceNorm, NetworkConfig, NetworkParams};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"HIFIWGT\0";
pub const FORMAT_VERSION: u32 = 1;

/// Scalar width of the payload.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ScalarWidth {
    F32,
    F64,
}

impl ScalarWidth {
    pub fn bytes(self) -> usize {
        match self {
            ScalarWidth::F32 => 4,
            ScalarWidth::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 4],
    /// Scalar width in bytes (4 or 8).
    pub width: u8,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ArchiveFlags {
    pub use_haar: bool,
    pub use_cbam: bool,
    pub use_rfm: bool,
    pub use_residual: bool,
    pub use_maxpool: bool,
    pub use_mlp: bool,
    pub use_base: bool,
    pub confidence_norm: String,
}

impl ArchiveFlags {
    pub fn from_config(cfg: &NetworkConfig) -> Self {
        ArchiveFlags {
            use_haar: cfg.use_haar,
            use_cbam: cfg.use_cbam,
            use_rfm: cfg.use_rfm,
            use_residual: cfg.use_residual,
            use_maxpool: cfg.use_maxpool,
            use_mlp: cfg.use_mlp,
            use_base: cfg.use_base,
            confidence_norm: cfg.confidence_norm.as_str().to_string(),
        }
    }

    pub fn to_config(&self) -> Result<NetworkConfig> {
        Ok(NetworkConfig {
            use_haar: self.use_haar,
            use_cbam: self.use_cbam,
            use_rfm: self.use_rfm,
            use_residual: self.use_residual,
            use_maxpool: self.use_maxpool,
            use_mlp: self.use_mlp,
            use_base: self.use_base,
            confidence_norm: ConfidenceNorm::parse(&self.confidence_norm)?,
        })
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Manifest {
    pub flags: ArchiveFlags,
    pub tensors: Vec<ManifestEntry>,
}

/// Serializes named tensors into archive bytes. Entries are sorted by name;
/// the payload is packed contiguously in that order.
pub fn encode_archive(
    named: &[(String, &Tensor)],
    cfg: &NetworkConfig,
    width: ScalarWidth,
) -> Result<Vec<u8>> {
    let mut sorted: Vec<&(String, &Tensor)> = named.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::Archive(format!("duplicate tensor name '{}'", pair[0].0)));
        }
    }

    let mut entries = Vec::with_capacity(sorted.len());
    let mut payload: Vec<u8> = Vec::new();
    for (name, tensor) in sorted {
        let s = tensor.shape();
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: [s.n, s.c, s.h, s.w],
            width: width.bytes() as u8,
            offset: payload.len() as u64,
        });
        match width {
            ScalarWidth::F32 => {
                for &v in tensor.data() {
                    payload.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            ScalarWidth::F64 => {
                for &v in tensor.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }

    let manifest = Manifest { flags: ArchiveFlags::from_config(cfg), tensors: entries };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = Vec::with_capacity(16 + manifest_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses archive bytes into `(version, manifest, named tensors)`.
pub fn decode_archive(bytes: &[u8]) -> Result<(u32, Manifest, Vec<(String, Tensor)>)> {
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(Error::Archive("not a weight archive (bad magic)".to_string()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Archive(format!(
            "unsupported archive version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + mlen {
        return Err(Error::Archive("truncated manifest".to_string()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..16 + mlen])
        .map_err(|e| Error::Archive(format!("bad manifest json: {e}")))?;
    let payload = &bytes[16 + mlen..];

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let shape = Shape::new(entry.shape[0], entry.shape[1], entry.shape[2], entry.shape[3]);
        let count = shape.numel();
        let width = entry.width as usize;
        let start = entry.offset as usize;
        let end = start + count * width;
        if width != 4 && width != 8 {
            return Err(Error::Archive(format!(
                "tensor '{}' has unsupported scalar width {width}",
                entry.name
            )));
        }
        if end > payload.len() {
            return Err(Error::Archive(format!("tensor '{}' extends past payload", entry.name)));
        }
        let mut data = Vec::with_capacity(count);
        match width {
            4 => {
                for chunk in payload[start..end].chunks_exact(4) {
                    data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
                }
            }
            _ => {
                for chunk in payload[start..end].chunks_exact(8) {
                    data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
            }
        }
        tensors.push((entry.name.clone(), Tensor::from_vec(shape, data)?));
    }
    Ok((version, manifest, tensors))
}

/// Writes the network parameters (no optimizer state) to an archive file.
pub fn save_weights(params: &NetworkParams, path: &Path, width: ScalarWidth) -> Result<()> {
    let named = params.named_tensors();
    let bytes = encode_archive(&named, &params.config, width)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Rebuilds network parameters from an archive, ignoring `optim.*` entries.
/// Every parameter the flags imply must be present with a matching shape.
pub fn load_weights(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path)?;
    let (_, manifest, tensors) = decode_archive(&bytes)?;
    let cfg = manifest.flags.to_config()?;
    params_from_tensors(&cfg, &tensors)
}

/// Assembles a parameter tree from named tensors under the given flags.
pub fn params_from_tensors(cfg: &NetworkConfig, tensors: &[(String, Tensor)]) -> Result<NetworkParams> {
    let mut map: std::collections::HashMap<&str, &Tensor> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();

    // Skeleton with the right tree structure; every tensor gets overwritten.
    let mut params = init_params_with(cfg, 0)?;
    for (name, slot) in params.named_tensors_mut() {
        let found = map.remove(name.as_str()).ok_or_else(|| {
            Error::Archive(format!("archive is missing tensor '{name}' required by its flags"))
        })?;
        if found.shape() != slot.shape() {
            return Err(Error::Archive(format!(
                "tensor '{name}' has shape {} but the architecture requires {}",
                found.shape(),
                slot.shape()
            )));
        }
        *slot = found.clone();
    }
    for leftover in map.keys() {
        if !leftover.starts_with("optim.") {
            return Err(Error::Archive(format!("archive has unexpected tensor '{leftover}'")));
        }
    }
    Ok(params)
}

/// Reads just the header of an archive (for inspection tools).
pub fn read_manifest(path: &Path) -> Result<(u32, Manifest)> {
    let bytes = fs::read(path)?;
    let (version, manifest, _) = decode_archive(&bytes)?;
    Ok((version, manifest))
}
