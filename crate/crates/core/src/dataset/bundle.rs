//! Model bundle files.
//!
//! Layout: magic, format version, JSON header (kind, architecture sections,
//! parameter index), little-endian f32 payload, SHA-256 checksum over all
//! preceding bytes. Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{BundleKind, BundleSection, ModelBundle, NamedTensor, BUNDLE_VERSION};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"ECGXBNDL";
const CHECKSUM_LEN: usize = 32;

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    kind: BundleKind,
    sections: Vec<BundleSection>,
    params: Vec<ParamEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the payload.
    offset: u64,
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let mut params = Vec::with_capacity(bundle.parameters.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    for p in &bundle.parameters {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
        });
        for v in p.tensor.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.tensor.numel() as u64;
    }
    let header = serde_json::to_vec(&Header {
        kind: bundle.kind,
        sections: bundle.sections.clone(),
        params,
    })
    .expect("header serializes");

    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&bundle.format_version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 4 + 8 + CHECKSUM_LEN || &bytes[..8] != MAGIC {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version > BUNDLE_VERSION {
        return Err(Error::VersionUnsupported {
            path: path.to_path_buf(),
            found: version,
            supported: BUNDLE_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    if body.len() < 20 + header_len {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let header: Header = serde_json::from_slice(&body[20..20 + header_len])
        .map_err(|e| Error::ManifestInvalid {
            path: path.to_path_buf(),
            reason: format!("bundle header: {e}"),
        })?;
    let payload = &body[20 + header_len..];

    let mut parameters = Vec::with_capacity(header.params.len());
    for p in &header.params {
        let numel: usize = p.shape.iter().product();
        let start = p.offset as usize * 4;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        parameters.push(NamedTensor {
            name: p.name.clone(),
            tensor: Tensor::new(p.shape.clone(), data)?,
        });
    }
    Ok(ModelBundle {
        kind: header.kind,
        format_version: version,
        sections: header.sections,
        parameters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Autoencoder;
    use crate::segmentation::{Segment, SegmentKind, SEGMENT_LEN};

    fn probe_segment() -> Segment {
        Segment {
            kind: SegmentKind::Single,
            samples: vec![(0..SEGMENT_LEN).map(|t| (t as f64 * 0.02).sin()).collect()],
            subject_id: "p".into(),
            session_index: 1,
            anchor_peak_index: None,
            normalized: true,
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bundle");
        let mut ae = Autoencoder::new(1);
        let before = ae.encode_segment(&probe_segment()).unwrap();
        save_bundle(&ae.to_bundle(), &path).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded, ae.to_bundle());
        let mut re = Autoencoder::from_bundle(&loaded).unwrap();
        assert_eq!(re.encode_segment(&probe_segment()).unwrap().values, before.values);
    }

    #[test]
    fn truncated_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bundle");
        let ae = Autoencoder::new(2);
        save_bundle(&ae.to_bundle(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
        assert!(matches!(
            load_bundle(&path),
            Err(Error::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bundle");
        let ae = Autoencoder::new(3);
        save_bundle(&ae.to_bundle(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_bundle(&path),
            Err(Error::ChecksumMismatch(_))
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ae.bundle");
        let ae = Autoencoder::new(4);
        let mut bundle = ae.to_bundle();
        bundle.format_version = BUNDLE_VERSION + 1;
        save_bundle(&bundle, &path).unwrap();
        assert!(matches!(
            load_bundle(&path),
            Err(Error::VersionUnsupported { found, .. }) if found == BUNDLE_VERSION + 1
        ));
    }
}
