//! Content-addressed intermediate results and the manifest that indexes them.
//!
//! Layout on disk:
//!
//! ```text
//! <storeDir>/manifest.json
//! <storeDir>/blobs/<sha256 hex>
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{join_modules, DatasetId, ModuleId, SubPipeline};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("{key} is already stored as {existing}; refusing to replace with {incoming}")]
    KeyConflict {
        key: StoreKey,
        existing: BlobRef,
        incoming: BlobRef,
    },
    #[error("no manifest entry for {0}")]
    MissingKey(StoreKey),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

/// `(dataset, ordered prefix)`; canonical text `dataset/m1-m2-...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoreKey {
    pub dataset: DatasetId,
    pub prefix: Vec<ModuleId>,
}

impl StoreKey {
    pub fn new(dataset: DatasetId, prefix: Vec<ModuleId>) -> Self {
        Self { dataset, prefix }
    }

    pub fn canonical(&self) -> String {
        format!("{}/{}", self.dataset, join_modules(&self.prefix))
    }
}

impl From<&SubPipeline> for StoreKey {
    fn from(s: &SubPipeline) -> Self {
        Self::new(s.dataset.clone(), s.prefix.clone())
    }
}

// Sorted by canonical text first so manifest order matches the documented serialization.
impl Ord for StoreKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.canonical()
            .cmp(&other.canonical())
            .then_with(|| (&self.dataset, &self.prefix).cmp(&(&other.dataset, &other.prefix)))
    }
}

impl PartialOrd for StoreKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// SHA-256 of a blob's bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlobRef(String);

impl BlobRef {
    pub fn of(payload: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(payload)))
    }

    pub fn hex(&self) -> &str {
        &self.0
    }

    fn parse(text: &str) -> Result<Self, StoreError> {
        let hex_part = text
            .strip_prefix("sha256:")
            .ok_or_else(|| StoreError::MalformedManifest(format!("blob reference {text:?} lacks sha256: prefix")))?;
        if hex_part.len() != 64 || !hex_part.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return Err(StoreError::MalformedManifest(format!("bad blob digest {hex_part:?}")));
        }
        Ok(Self(hex_part.to_owned()))
    }
}

impl fmt::Display for BlobRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sha256:{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub key: StoreKey,
    pub blob: Option<BlobRef>,
    pub created_seq: u64,
    pub hits: u64,
    /// `false` marks a recorded decision whose blob is absent (tombstone).
    pub stored: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreManifest {
    entries: BTreeMap<StoreKey, ManifestEntry>,
}

impl StoreManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values()
    }

    pub fn get(&self, key: &StoreKey) -> Option<&ManifestEntry> {
        self.entries.get(key)
    }

    /// Exact ordered-prefix lookup.
    pub fn lookup(&self, dataset: &DatasetId, prefix: &[ModuleId]) -> Option<&ManifestEntry> {
        self.entries.get(&StoreKey::new(dataset.clone(), prefix.to_vec()))
    }

    /// True when a materialized blob exists for the key.
    pub fn is_stored(&self, key: &StoreKey) -> bool {
        self.entries.get(key).is_some_and(|e| e.stored)
    }

    pub fn record_hit(&mut self, key: &StoreKey) -> Result<&ManifestEntry, StoreError> {
        let entry = self
            .entries
            .get_mut(key)
            .ok_or_else(|| StoreError::MissingKey(key.clone()))?;
        entry.hits += 1;
        Ok(entry)
    }

    /// Marks an entry as no longer materialized. The blob file is left in place.
    pub fn tombstone(&mut self, key: &StoreKey) -> Result<&ManifestEntry, StoreError> {
        let entry = self
            .entries
            .get_mut(key)
            .ok_or_else(|| StoreError::MissingKey(key.clone()))?;
        entry.stored = false;
        Ok(entry)
    }

    /// Writes `payload` and upserts the entry. Same bytes under the same key is a no-op;
    /// different bytes over a stored entry need `overwrite`.
    pub fn put(
        &mut self,
        blobs: &dyn BlobStore,
        key: StoreKey,
        payload: &[u8],
        created_seq: u64,
        overwrite: bool,
    ) -> Result<&ManifestEntry, StoreError> {
        let blob = BlobRef::of(payload);
        if let Some(existing) = self.entries.get(&key) {
            if existing.stored {
                match &existing.blob {
                    Some(b) if *b == blob => return Ok(&self.entries[&key]),
                    Some(b) if !overwrite => {
                        return Err(StoreError::KeyConflict {
                            key,
                            existing: b.clone(),
                            incoming: blob,
                        })
                    }
                    _ => {}
                }
            }
        }
        blobs.write(&blob, payload)?;
        let entry = self.entries.entry(key.clone()).or_insert_with(|| ManifestEntry {
            key,
            blob: None,
            created_seq,
            hits: 0,
            stored: false,
        });
        entry.blob = Some(blob);
        entry.stored = true;
        Ok(entry)
    }

    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            entries: self.entries.values().map(EntryDoc::from).collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        let doc: ManifestDoc =
            serde_json::from_str(text).map_err(|e| StoreError::MalformedManifest(e.to_string()))?;
        let mut manifest = Self::new();
        for e in doc.entries {
            let entry = e.into_entry()?;
            let key = entry.key.clone();
            if manifest.entries.insert(key.clone(), entry).is_some() {
                return Err(StoreError::MalformedManifest(format!("duplicate key {key}")));
            }
        }
        Ok(manifest)
    }
}

/// Free-function form of [`StoreManifest::put`].
pub fn put_intermediate<'m>(
    manifest: &'m mut StoreManifest,
    blobs: &dyn BlobStore,
    key: StoreKey,
    payload: &[u8],
    created_seq: u64,
) -> Result<&'m ManifestEntry, StoreError> {
    manifest.put(blobs, key, payload, created_seq, false)
}

pub fn lookup_intermediate<'m>(
    manifest: &'m StoreManifest,
    dataset: &DatasetId,
    prefix: &[ModuleId],
) -> Option<&'m ManifestEntry> {
    manifest.lookup(dataset, prefix)
}

pub fn record_hit<'m>(manifest: &'m mut StoreManifest, key: &StoreKey) -> Result<&'m ManifestEntry, StoreError> {
    manifest.record_hit(key)
}

/// Writes the manifest via a temporary file and rename.
pub fn save_manifest(manifest: &StoreManifest, path: &Path) -> Result<(), StoreError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, manifest.to_json()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_manifest(path: &Path) -> Result<StoreManifest, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    StoreManifest::from_json(&text)
}

/// Synthetic payload used when the engine records a decision without real data.
pub fn placeholder_payload(key: &StoreKey) -> Vec<u8> {
    format!("intermediate:{}\n", key.canonical()).into_bytes()
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    entries: Vec<EntryDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct EntryDoc {
    dataset: String,
    prefix: Vec<String>,
    blob: Option<String>,
    created_seq: u64,
    hits: u64,
    stored: bool,
}

impl From<&ManifestEntry> for EntryDoc {
    fn from(e: &ManifestEntry) -> Self {
        Self {
            dataset: e.key.dataset.to_string(),
            prefix: e.key.prefix.iter().map(ToString::to_string).collect(),
            blob: e.blob.as_ref().map(ToString::to_string),
            created_seq: e.created_seq,
            hits: e.hits,
            stored: e.stored,
        }
    }
}

impl EntryDoc {
    fn into_entry(self) -> Result<ManifestEntry, StoreError> {
        let bad = |e: crate::model::ModelError| StoreError::MalformedManifest(e.to_string());
        let dataset = DatasetId::new(self.dataset).map_err(bad)?;
        if self.prefix.is_empty() {
            return Err(StoreError::MalformedManifest("entry with empty prefix".into()));
        }
        let prefix = crate::model::modules(self.prefix).map_err(bad)?;
        let blob = self.blob.as_deref().map(BlobRef::parse).transpose()?;
        if self.stored && blob.is_none() {
            return Err(StoreError::MalformedManifest(format!(
                "stored entry {}/{} has no blob",
                dataset,
                join_modules(&prefix)
            )));
        }
        Ok(ManifestEntry {
            key: StoreKey::new(dataset, prefix),
            blob,
            created_seq: self.created_seq,
            hits: self.hits,
            stored: self.stored,
        })
    }
}

/// Where blob bytes live.
pub trait BlobStore: Send + Sync {
    fn write(&self, blob: &BlobRef, payload: &[u8]) -> Result<(), StoreError>;
    fn read(&self, blob: &BlobRef) -> Result<Vec<u8>, StoreError>;
    fn contains(&self, blob: &BlobRef) -> bool;
}

/// One file per blob under `<root>/blobs/`.
#[derive(Debug, Clone)]
pub struct DirBlobStore {
    root: PathBuf,
}

impl DirBlobStore {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self { root: store_dir.into() }
    }

    pub fn store_dir(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn blob_path(&self, blob: &BlobRef) -> PathBuf {
        self.root.join(BLOB_DIR).join(blob.hex())
    }
}

impl BlobStore for DirBlobStore {
    fn write(&self, blob: &BlobRef, payload: &[u8]) -> Result<(), StoreError> {
        let path = self.blob_path(blob);
        if path.exists() {
            return Ok(());
        }
        let dir = self.root.join(BLOB_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, payload).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn read(&self, blob: &BlobRef) -> Result<Vec<u8>, StoreError> {
        let path = self.blob_path(blob);
        fs::read(&path).map_err(io_err(&path))
    }

    fn contains(&self, blob: &BlobRef) -> bool {
        self.blob_path(blob).is_file()
    }
}

/// Blobs held in memory; for dry runs and tests.
#[derive(Debug, Default)]
pub struct MemoryBlobStore {
    blobs: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemoryBlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().expect("blob map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BlobStore for MemoryBlobStore {
    fn write(&self, blob: &BlobRef, payload: &[u8]) -> Result<(), StoreError> {
        self.blobs
            .lock()
            .expect("blob map lock")
            .entry(blob.hex().to_owned())
            .or_insert_with(|| payload.to_vec());
        Ok(())
    }

    fn read(&self, blob: &BlobRef) -> Result<Vec<u8>, StoreError> {
        self.blobs
            .lock()
            .expect("blob map lock")
            .get(blob.hex())
            .cloned()
            .ok_or_else(|| StoreError::IoFailure {
                path: PathBuf::from(blob.hex()),
                source: io::Error::from(io::ErrorKind::NotFound),
            })
    }

    fn contains(&self, blob: &BlobRef) -> bool {
        self.blobs.lock().expect("blob map lock").contains_key(blob.hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::modules;

    fn key(ds: &str, mods: &[&str]) -> StoreKey {
        StoreKey::new(DatasetId::new(ds).unwrap(), modules(mods.iter().copied()).unwrap())
    }

    #[test]
    fn fresh_put() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        let e = put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"b", 1).unwrap();
        assert!(e.stored);
        assert_eq!(e.hits, 0);
        assert_eq!(e.created_seq, 1);
        assert!(blobs.contains(e.blob.as_ref().unwrap()));
    }

    #[test]
    fn put_is_idempotent() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        let first = put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"b", 1).unwrap().clone();
        let second = put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"b", 7).unwrap().clone();
        assert_eq!(first, second);
        assert_eq!(m.len(), 1);
        assert_eq!(blobs.len(), 1);
    }

    #[test]
    fn conflicting_put() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"b", 1).unwrap();
        let err = put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"c", 2).unwrap_err();
        match err {
            StoreError::KeyConflict { existing, incoming, .. } => {
                assert_eq!(existing, BlobRef::of(b"b"));
                assert_eq!(incoming, BlobRef::of(b"c"));
            }
            other => panic!("unexpected {other}"),
        }
        let e = m.put(&blobs, key("D1", &["P1"]), b"c", 2, true).unwrap();
        assert_eq!(e.blob, Some(BlobRef::of(b"c")));
    }

    #[test]
    fn tombstoned_entry_can_be_restored() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"b", 1).unwrap();
        m.tombstone(&key("D1", &["P1"])).unwrap();
        assert!(!m.is_stored(&key("D1", &["P1"])));
        put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"c", 3).unwrap();
        assert!(m.is_stored(&key("D1", &["P1"])));
    }

    #[test]
    fn lookup_is_exact_and_ordered() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        let d2 = DatasetId::new("D2").unwrap();
        assert!(lookup_intermediate(&m, &d2, &modules(["P2"]).unwrap()).is_none());
        put_intermediate(&mut m, &blobs, key("D2", &["P2"]), b"x", 2).unwrap();
        put_intermediate(&mut m, &blobs, key("D2", &["P2", "P3"]), b"y", 2).unwrap();
        assert!(lookup_intermediate(&m, &d2, &modules(["P2"]).unwrap()).is_some());
        assert!(lookup_intermediate(&m, &d2, &modules(["P3", "P2"]).unwrap()).is_none());
    }

    #[test]
    fn hits() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        let k = key("D1", &["P1"]);
        put_intermediate(&mut m, &blobs, k.clone(), b"b", 1).unwrap();
        assert_eq!(record_hit(&mut m, &k).unwrap().hits, 1);
        assert_eq!(record_hit(&mut m, &k).unwrap().hits, 2);
        assert!(matches!(record_hit(&mut m, &key("D1", &["P9"])), Err(StoreError::MissingKey(_))));
    }

    #[test]
    fn manifest_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let blobs = DirBlobStore::new(dir.path());
        let mut m = StoreManifest::new();
        put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"one", 1).unwrap();
        put_intermediate(&mut m, &blobs, key("D1", &["P1", "P3"]), b"two", 1).unwrap();
        put_intermediate(&mut m, &blobs, key("D2", &["P2"]), b"three", 2).unwrap();
        m.record_hit(&key("D2", &["P2"])).unwrap();
        save_manifest(&m, &blobs.manifest_path()).unwrap();
        let back = load_manifest(&blobs.manifest_path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), m.to_json());
        let e = back.get(&key("D1", &["P1", "P3"])).unwrap();
        assert_eq!(blobs.read(e.blob.as_ref().unwrap()).unwrap(), b"two");
        assert!(dir.path().join("blobs").join(BlobRef::of(b"one").hex()).is_file());
    }

    #[test]
    fn manifest_json_shape() {
        let blobs = MemoryBlobStore::new();
        let mut m = StoreManifest::new();
        put_intermediate(&mut m, &blobs, key("D2", &["P2"]), b"", 2).unwrap();
        put_intermediate(&mut m, &blobs, key("D1", &["P1"]), b"", 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        let entries = v["entries"].as_array().unwrap();
        assert_eq!(entries[0]["dataset"], "D1");
        assert_eq!(entries[1]["createdSeq"], 2);
        assert_eq!(
            entries[0]["blob"],
            "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        assert!(matches!(load_manifest(&missing), Err(StoreError::IoFailure { .. })));
        let truncated = dir.path().join("t.json");
        fs::write(&truncated, "{\"entries\": [{\"dataset\": \"D1\"").unwrap();
        assert!(matches!(load_manifest(&truncated), Err(StoreError::MalformedManifest(_))));
        let no_blob = dir.path().join("n.json");
        fs::write(
            &no_blob,
            r#"{"entries":[{"dataset":"D1","prefix":["P1"],"blob":null,"createdSeq":1,"hits":0,"stored":true}]}"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&no_blob), Err(StoreError::MalformedManifest(_))));
    }

    #[test]
    fn canonical_key_text() {
        assert_eq!(key("D1", &["P1", "P3"]).canonical(), "D1/P1-P3");
    }
}
