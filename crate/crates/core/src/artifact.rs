//! On-disk artifacts: a canonical-JSON manifest next to a raw payload of
//! little-endian IEEE-754 binary32 values in row-major order.
//!
//! | kind       | manifest          | payload          |
//! |------------|-------------------|------------------|
//! | epochs     | `<stem>.epochs.json` | `<stem>.epochs.f32` |
//! | embeddings | `<stem>.emb.json`    | `<stem>.emb.f32`    |
//!
//! Reports are single canonical JSON files without a payload. All files are
//! written to a temporary sibling first and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::canonical::{sha256_hex, to_canonical_json};
use crate::embed::EmbeddingSet;
use crate::epochs::{EpochMeta, EpochSet};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const EPOCHS_MANIFEST: &str = ".epochs.json";
pub const EPOCHS_PAYLOAD: &str = ".epochs.f32";
pub const EMB_MANIFEST: &str = ".emb.json";
pub const EMB_PAYLOAD: &str = ".emb.f32";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Epochs,
    Embeddings,
    Report,
    Model,
}

/// Fields shared by every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: ArtifactKind,
    pub version: u32,
    pub shape: Vec<usize>,
    /// Digest of the configuration that produced the artifact.
    pub producer_digest: String,
}

impl ManifestHeader {
    pub fn new(kind: ArtifactKind, shape: Vec<usize>, producer_digest: impl Into<String>) -> Self {
        Self { kind, version: FORMAT_VERSION, shape, producer_digest: producer_digest.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub n: usize,
    pub l: usize,
    pub n_channels: usize,
    pub fs: f64,
    pub meta: Vec<EpochMeta>,
    pub payload: String,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub n: usize,
    pub d: usize,
    pub embedder_id: String,
    pub config_digest: String,
    pub payload: String,
    /// Optional for externally produced files; checked when present.
    #[serde(default)]
    pub payload_sha256: Option<String>,
}

/// Write `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::param(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write a report as canonical JSON. Non-finite values are rejected before
/// any file is touched.
pub fn emit_report<T: Serialize + ?Sized>(report: &T, path: &Path) -> Result<()> {
    let text = to_canonical_json(report)?;
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Like [`read_json`], but a parse failure marks the file as corrupt.
fn read_manifest<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|e| match e {
        Error::Json(j) => Error::Corrupt { path: path.to_path_buf(), reason: format!("unreadable manifest: {j}") },
        other => other,
    })
}

fn encode_f32(data: &Array2<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn strip_suffix(path: &Path, suffixes: &[&str]) -> Option<PathBuf> {
    let s = path.to_string_lossy();
    suffixes.iter().find_map(|suf| s.strip_suffix(suf).map(PathBuf::from))
}

/// Manifest path for an epochs artifact given any of its file paths or its stem.
pub fn epochs_manifest_path(path: &Path) -> PathBuf {
    let stem = strip_suffix(path, &[EPOCHS_MANIFEST, EPOCHS_PAYLOAD]).unwrap_or_else(|| path.to_path_buf());
    PathBuf::from(format!("{}{EPOCHS_MANIFEST}", stem.display()))
}

/// Manifest path for an embeddings artifact given any of its file paths or its stem.
pub fn emb_manifest_path(path: &Path) -> PathBuf {
    let stem = strip_suffix(path, &[EMB_MANIFEST, EMB_PAYLOAD]).unwrap_or_else(|| path.to_path_buf());
    PathBuf::from(format!("{}{EMB_MANIFEST}", stem.display()))
}

fn payload_path(manifest: &Path, payload: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(payload)
}

fn file_stem_name(stem: &Path) -> Result<String> {
    stem.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::param(format!("bad artifact stem {}", stem.display())))
}

/// Write `set` as `<stem>.epochs.{json,f32}`; returns the manifest path.
pub fn write_epochs(set: &EpochSet, stem: &Path, producer_digest: &str) -> Result<PathBuf> {
    set.validate()?;
    let name = file_stem_name(stem)?;
    let payload_name = format!("{name}{EPOCHS_PAYLOAD}");
    let bytes = encode_f32(&set.data);
    let manifest = EpochManifest {
        header: ManifestHeader::new(
            ArtifactKind::Epochs,
            vec![set.len(), set.n_channels, set.n_samples()],
            producer_digest,
        ),
        n: set.len(),
        l: set.n_samples(),
        n_channels: set.n_channels,
        fs: set.fs,
        meta: set.meta.clone(),
        payload: payload_name.clone(),
        payload_sha256: sha256_hex(&bytes),
    };
    let mpath = epochs_manifest_path(stem);
    write_atomic(&payload_path(&mpath, &payload_name), &bytes)?;
    emit_report(&manifest, &mpath)?;
    Ok(mpath)
}

/// Read a payload of `rows x cols` binary32 values, reporting truncation and
/// non-finite values by row.
fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<(Array2<f32>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let row_bytes = cols * 4;
    let expected = rows * row_bytes;
    if bytes.len() != expected {
        let reason = if row_bytes > 0 && bytes.len() % row_bytes == 0 {
            format!("manifest says {rows} rows, payload has {} rows", bytes.len() / row_bytes)
        } else {
            format!(
                "payload truncated or padded: expected {expected} bytes ({rows} rows x {cols}), found {}",
                bytes.len()
            )
        };
        return Err(Error::Corrupt { path: path.to_path_buf(), reason });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("non-finite value in row {}", pos / cols.max(1)),
        });
    }
    let m = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((m, bytes))
}

fn check_digest(path: &Path, bytes: &[u8], expect: &str) -> Result<()> {
    let got = sha256_hex(bytes);
    if got != expect {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("payload sha256 {got} does not match manifest {expect}"),
        });
    }
    Ok(())
}

pub fn read_epochs(path: &Path) -> Result<EpochSet> {
    let mpath = epochs_manifest_path(path);
    let m: EpochManifest = read_manifest(&mpath)?;
    if m.header.kind != ArtifactKind::Epochs {
        return Err(Error::Corrupt {
            path: mpath,
            reason: format!("expected an epochs manifest, found {:?}", m.header.kind),
        });
    }
    if m.meta.len() != m.n {
        return Err(Error::Corrupt {
            path: mpath,
            reason: format!("manifest lists {} meta records for n = {}", m.meta.len(), m.n),
        });
    }
    let ppath = payload_path(&mpath, &m.payload);
    let (data, bytes) = read_matrix(&ppath, m.n * m.n_channels, m.l)?;
    check_digest(&ppath, &bytes, &m.payload_sha256)?;
    EpochSet::new(data, m.fs, m.n_channels, m.meta)
}

/// Write `emb` as `<stem>.emb.{json,f32}`; returns the manifest path.
pub fn write_embeddings(emb: &EmbeddingSet, stem: &Path) -> Result<PathBuf> {
    emb.validate()?;
    let name = file_stem_name(stem)?;
    let payload_name = format!("{name}{EMB_PAYLOAD}");
    let bytes = encode_f32(&emb.data);
    let manifest = EmbeddingManifest {
        header: ManifestHeader::new(ArtifactKind::Embeddings, vec![emb.len(), emb.dim()], &emb.config_digest),
        n: emb.len(),
        d: emb.dim(),
        embedder_id: emb.embedder_id.clone(),
        config_digest: emb.config_digest.clone(),
        payload: payload_name.clone(),
        payload_sha256: Some(sha256_hex(&bytes)),
    };
    let mpath = emb_manifest_path(stem);
    write_atomic(&payload_path(&mpath, &payload_name), &bytes)?;
    emit_report(&manifest, &mpath)?;
    Ok(mpath)
}

/// Load and validate an `.emb.f32` artifact. Nothing is returned unless the
/// whole payload matches its manifest.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mpath = emb_manifest_path(path);
    let m: EmbeddingManifest = read_manifest(&mpath)?;
    if m.header.kind != ArtifactKind::Embeddings {
        return Err(Error::Corrupt {
            path: mpath,
            reason: format!("expected an embeddings manifest, found {:?}", m.header.kind),
        });
    }
    let ppath = payload_path(&mpath, &m.payload);
    let (data, bytes) = read_matrix(&ppath, m.n, m.d)?;
    if let Some(expect) = &m.payload_sha256 {
        check_digest(&ppath, &bytes, expect)?;
    }
    EmbeddingSet::new(data, m.embedder_id, m.config_digest)
}

/// Outcome of [`verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub path: String,
    pub kind: ArtifactKind,
    pub shape: Vec<usize>,
}

/// Re-check an artifact: payload size, finiteness and digest for epochs and
/// embeddings; canonical form for reports and models.
pub fn verify(path: &Path) -> Result<VerifyReport> {
    let s = path.to_string_lossy();
    if s.ends_with(EPOCHS_MANIFEST) || s.ends_with(EPOCHS_PAYLOAD) {
        let set = read_epochs(path)?;
        return Ok(VerifyReport {
            path: epochs_manifest_path(path).display().to_string(),
            kind: ArtifactKind::Epochs,
            shape: vec![set.len(), set.n_channels, set.n_samples()],
        });
    }
    if s.ends_with(EMB_MANIFEST) || s.ends_with(EMB_PAYLOAD) {
        let emb = import_embeddings(path)?;
        return Ok(VerifyReport {
            path: emb_manifest_path(path).display().to_string(),
            kind: ArtifactKind::Embeddings,
            shape: vec![emb.len(), emb.dim()],
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Corrupt { path: path.to_path_buf(), reason: format!("not valid JSON: {e}") })?;
    if to_canonical_json(&value)? != text {
        return Err(Error::Corrupt { path: path.to_path_buf(), reason: "report is not in canonical form".into() });
    }
    let kind = if value.get("model_kind").is_some() { ArtifactKind::Model } else { ArtifactKind::Report };
    Ok(VerifyReport { path: path.display().to_string(), kind, shape: Vec::new() })
}
