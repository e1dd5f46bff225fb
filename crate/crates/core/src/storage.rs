//! Stable storage. Each node owns one store; a record write is atomic and
//! reads return the most recent write per `(kind, instance)` key.
//!
//! Two backends share the record schema: [`MemoryStore`] (the default in
//! simulations, survives simulated crashes because crashes only discard
//! replica memory) and [`FileStore`], an append-only log of
//! length-prefixed JSON records:
//!
//! ```text
//! +----------------+----------------------------+
//! | len: u32 (LE)  | StableRecord as JSON (len) |  repeated
//! +----------------+----------------------------+
//! ```
//!
//! Recovery replays the log in order. A trailing entry whose length prefix
//! or body is incomplete is the residue of a write interrupted by a crash
//! and is ignored, so a record is either fully present or absent.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::StorageError;
use crate::types::{InstanceId, NodeId, Round, Value};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    Coordinator {
        instance: InstanceId,
        crnd: Option<Round>,
        cval: Option<Value>,
    },
    Acceptor {
        instance: InstanceId,
        rnd: Option<Round>,
        vrnd: Option<Round>,
        vval: Option<Value>,
        sn: u32,
    },
    Election {
        leader: bool,
        highest_instance: Option<InstanceId>,
        lsn: Option<Round>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecordKey {
    Election,
    Coordinator(InstanceId),
    Acceptor(InstanceId),
}

impl RecordKind {
    pub fn key(&self) -> RecordKey {
        match self {
            RecordKind::Coordinator { instance, .. } => RecordKey::Coordinator(*instance),
            RecordKind::Acceptor { instance, .. } => RecordKey::Acceptor(*instance),
            RecordKind::Election { .. } => RecordKey::Election,
        }
    }

    pub fn instance(&self) -> Option<InstanceId> {
        match self {
            RecordKind::Coordinator { instance, .. } | RecordKind::Acceptor { instance, .. } => {
                Some(*instance)
            }
            RecordKind::Election { .. } => None,
        }
    }
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordKind::Coordinator {
                instance,
                crnd,
                cval,
            } => write!(f, "kind=coord i={instance} crnd={} cval={}", opt(crnd), opt(cval)),
            RecordKind::Acceptor {
                instance,
                rnd,
                vrnd,
                vval,
                sn,
            } => write!(
                f,
                "kind=acc i={instance} rnd={} vrnd={} vval={} sn={sn}",
                opt(rnd),
                opt(vrnd),
                opt(vval)
            ),
            RecordKind::Election {
                leader,
                highest_instance,
                lsn,
            } => write!(
                f,
                "kind=elect leader={leader} I={} lsn={}",
                opt(highest_instance),
                opt(lsn)
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StableRecord {
    pub node: NodeId,
    pub kind: RecordKind,
    /// Per-store write sequence number, assigned by the store.
    pub seq: u64,
}

/// Returned once a write is durable. Dependent messages may only be emitted
/// after it is observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WriteAck {
    pub seq: u64,
}

pub trait StableStore: Send {
    fn persist(&mut self, node: NodeId, kind: RecordKind) -> Result<WriteAck, StorageError>;

    /// Every surviving record, the latest write per key, in key order.
    fn recover(&self) -> Result<Vec<StableRecord>, StorageError>;
}

#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    records: BTreeMap<RecordKey, StableRecord>,
    next_seq: u64,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl StableStore for MemoryStore {
    fn persist(&mut self, node: NodeId, kind: RecordKind) -> Result<WriteAck, StorageError> {
        self.next_seq += 1;
        let seq = self.next_seq;
        self.records
            .insert(kind.key(), StableRecord { node, kind, seq });
        Ok(WriteAck { seq })
    }

    fn recover(&self) -> Result<Vec<StableRecord>, StorageError> {
        Ok(self.records.values().cloned().collect())
    }
}

/// Append-only file backend.
pub struct FileStore {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .read(true)
            .open(&path)?;
        let mut store = FileStore {
            path,
            file,
            next_seq: 0,
        };
        store.next_seq = store.read_log()?.last().map_or(0, |r| r.seq);
        Ok(store)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn read_log(&self) -> Result<Vec<StableRecord>, StorageError> {
        let mut bytes = Vec::new();
        File::open(&self.path)?.read_to_end(&mut bytes)?;
        let mut out = Vec::new();
        let mut offset = 0usize;
        while offset + 4 <= bytes.len() {
            let len = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
            let start = offset + 4;
            if start + len > bytes.len() {
                // torn tail write
                break;
            }
            let record: StableRecord =
                serde_json::from_slice(&bytes[start..start + len]).map_err(|e| {
                    StorageError::Corrupt {
                        offset: offset as u64,
                        reason: e.to_string(),
                    }
                })?;
            out.push(record);
            offset = start + len;
        }
        Ok(out)
    }
}

impl StableStore for FileStore {
    fn persist(&mut self, node: NodeId, kind: RecordKind) -> Result<WriteAck, StorageError> {
        self.next_seq += 1;
        let record = StableRecord {
            node,
            kind,
            seq: self.next_seq,
        };
        let body = serde_json::to_vec(&record).map_err(|e| StorageError::Corrupt {
            offset: 0,
            reason: e.to_string(),
        })?;
        let mut entry = Vec::with_capacity(body.len() + 4);
        entry.extend_from_slice(&(body.len() as u32).to_le_bytes());
        entry.extend_from_slice(&body);
        self.file.write_all(&entry)?;
        self.file.sync_data()?;
        Ok(WriteAck { seq: record.seq })
    }

    fn recover(&self) -> Result<Vec<StableRecord>, StorageError> {
        let mut latest = BTreeMap::new();
        for record in self.read_log()? {
            latest.insert(record.kind.key(), record);
        }
        Ok(latest.into_values().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RequestId;

    fn acc(instance: InstanceId, sn: u32) -> RecordKind {
        let r = Some(Round::new(1, NodeId(1)));
        RecordKind::Acceptor {
            instance,
            rnd: r,
            vrnd: r,
            vval: Some(Value::Request(RequestId::new(0, 1))),
            sn,
        }
    }

    fn exercise(store: &mut dyn StableStore) {
        assert!(store.recover().unwrap().is_empty());
        store.persist(NodeId(2), acc(1, 1)).unwrap();
        store.persist(NodeId(2), acc(2, 1)).unwrap();
        store.persist(NodeId(2), acc(3, 1)).unwrap();
        let second = store.persist(NodeId(2), acc(1, 2)).unwrap();
        let recovered = store.recover().unwrap();
        assert_eq!(recovered.len(), 3);
        let first = &recovered[0];
        assert_eq!(first.seq, second.seq);
        assert_eq!(first.kind, acc(1, 2));
    }

    #[test]
    fn memory_store_last_writer_wins() {
        exercise(&mut MemoryStore::new());
    }

    #[test]
    fn file_store_last_writer_wins_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node2.log");
        {
            let mut store = FileStore::open(&path).unwrap();
            exercise(&mut store);
        }
        let reopened = FileStore::open(&path).unwrap();
        let recovered = reopened.recover().unwrap();
        assert_eq!(recovered.len(), 3);
        assert_eq!(recovered[0].kind, acc(1, 2));
    }

    #[test]
    fn torn_tail_write_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.log");
        let mut store = FileStore::open(&path).unwrap();
        store.persist(NodeId(1), acc(1, 1)).unwrap();
        store.persist(NodeId(1), acc(2, 1)).unwrap();
        drop(store);
        let len = std::fs::metadata(&path).unwrap().len();
        let f = OpenOptions::new().write(true).open(&path).unwrap();
        f.set_len(len - 5).unwrap();
        let store = FileStore::open(&path).unwrap();
        let recovered = store.recover().unwrap();
        assert_eq!(recovered.len(), 1);
        assert_eq!(recovered[0].kind, acc(1, 1));
    }
}
