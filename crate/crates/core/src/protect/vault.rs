//! Backend key vault: one CRC-protected record file per model plus a JSON
//! index. Writers take a per-model lock file.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bfv::{EncryptionParams, KeySet};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::storage::write_atomic;

const RECORD_MAGIC: &[u8; 4] = b"CDVR";
const RECORD_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.json";
const INDEX_LOCK: &str = "index";
const LOCK_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Clone, Debug, PartialEq)]
pub struct KeyVaultRecord {
    pub model_id: String,
    pub params: EncryptionParams,
    pub keys: KeySet,
    pub created_unix: u64,
}

impl KeyVaultRecord {
    pub fn new(model_id: &str, params: EncryptionParams, keys: KeySet) -> Self {
        KeyVaultRecord {
            model_id: model_id.to_string(),
            params,
            keys,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.raw(RECORD_MAGIC)
            .u32(RECORD_VERSION)
            .str(&self.model_id)
            .u64(self.created_unix)
            .bytes(&self.params.to_bytes());
        self.keys.write(&mut w);
        let mut bytes = w.finish();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        bytes
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != RECORD_MAGIC {
            return Err(Error::Format("not a vault record".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = ByteReader::new(body, "vault record");
        r.raw(4, "magic")?;
        let version = r.u32("record version")?;
        if version != RECORD_VERSION {
            return Err(Error::Version {
                found: version,
                expected: RECORD_VERSION,
            });
        }
        let model_id = r.string("model id")?;
        let created_unix = r.u64("created")?;
        let params = EncryptionParams::from_bytes(r.bytes("params")?)?;
        let keys = KeySet::read(&mut r)?;
        r.expect_end()?;
        Ok(KeyVaultRecord {
            model_id,
            params,
            keys,
            created_unix,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub params_fingerprint: String,
    pub key_fingerprint: String,
    pub created_unix: u64,
}

/// Removes its lock file on drop.
struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Clone, Debug)]
pub struct Vault {
    root: PathBuf,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::Usage(format!("invalid model id {id:?}")))
    }
}

impl Vault {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("records"))?;
        fs::create_dir_all(root.join("locks"))?;
        Ok(Vault { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.root.join("records").join(format!("{id}.rec"))
    }

    fn lock(&self, name: &str) -> Result<LockGuard> {
        let path = self.root.join("locks").join(format!("{name}.lock"));
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(LockGuard(path)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() > LOCK_TIMEOUT {
                        return Err(Error::Usage(format!(
                            "vault lock {} held for over {}s",
                            path.display(),
                            LOCK_TIMEOUT.as_secs()
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn index(&self) -> Result<BTreeMap<String, IndexEntry>> {
        match fs::read(self.root.join(INDEX_FILE)) {
            Ok(b) => Ok(serde_json::from_slice(&b)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(BTreeMap::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn list(&self) -> Result<Vec<String>> {
        Ok(self.index()?.into_keys().collect())
    }

    /// Stores (or replaces) the record for its model id.
    pub fn store(&self, record: &KeyVaultRecord) -> Result<()> {
        check_id(&record.model_id)?;
        if record.keys.public_key.params_id() != record.params.fingerprint() {
            return Err(Error::Usage("record keys do not match its parameters".into()));
        }
        let _guard = self.lock(&record.model_id)?;
        write_atomic(&self.record_path(&record.model_id), &record.to_bytes())?;
        let _index_guard = self.lock(INDEX_LOCK)?;
        let mut index = self.index()?;
        index.insert(
            record.model_id.clone(),
            IndexEntry {
                params_fingerprint: format!("{:016x}", record.params.fingerprint()),
                key_fingerprint: format!("{:016x}", record.keys.public_key.fingerprint()),
                created_unix: record.created_unix,
            },
        );
        write_atomic(&self.root.join(INDEX_FILE), &serde_json::to_vec_pretty(&index)?)
    }

    pub fn fetch(&self, model_id: &str) -> Result<KeyVaultRecord> {
        check_id(model_id)?;
        let bytes = match fs::read(self.record_path(model_id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("no vault record for model {model_id:?}")))
            }
            Err(e) => return Err(e.into()),
        };
        let record = KeyVaultRecord::from_bytes(&bytes)?;
        if record.model_id != model_id {
            return Err(Error::Format(format!(
                "record file for {model_id:?} holds {:?}",
                record.model_id
            )));
        }
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::{keygen, testing::toy_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn record(id: &str, seed: u64) -> KeyVaultRecord {
        let params = toy_params();
        let (_, keys) = keygen(&params, &mut ChaCha20Rng::seed_from_u64(seed)).unwrap();
        KeyVaultRecord::new(id, params, keys)
    }

    #[test]
    fn store_fetch_identity_and_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let vault = Vault::open(dir.path()).unwrap();
        let a = record("model-a", 1);
        let b = record("model-b", 2);
        vault.store(&a).unwrap();
        vault.store(&b).unwrap();
        assert_eq!(vault.fetch("model-a").unwrap(), a);
        assert_eq!(vault.fetch("model-b").unwrap(), b);
        assert_ne!(a.keys, b.keys);
        assert_eq!(vault.list().unwrap(), vec!["model-a", "model-b"]);
        assert!(matches!(vault.fetch("model-c"), Err(Error::NotFound(_))));
        assert!(vault.fetch("../x").is_err());
        assert_eq!(fs::read_dir(dir.path().join("locks")).unwrap().count(), 0);
    }

    #[test]
    fn corrupted_record_detected() {
        let dir = tempfile::tempdir().unwrap();
        let vault = Vault::open(dir.path()).unwrap();
        vault.store(&record("m", 1)).unwrap();
        let path = vault.record_path("m");
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(vault.fetch("m"), Err(Error::Checksum { .. })));
    }

    #[test]
    fn concurrent_writers_serialize() {
        let dir = tempfile::tempdir().unwrap();
        let vault = Vault::open(dir.path()).unwrap();
        let recs: Vec<_> = (0..4).map(|i| record(&format!("m{i}"), i)).collect();
        thread::scope(|s| {
            for r in &recs {
                let v = vault.clone();
                s.spawn(move || {
                    for _ in 0..3 {
                        v.store(r).unwrap();
                    }
                });
            }
        });
        assert_eq!(vault.list().unwrap().len(), 4);
        for r in &recs {
            assert_eq!(&vault.fetch(&r.model_id).unwrap(), r);
        }
    }
}
