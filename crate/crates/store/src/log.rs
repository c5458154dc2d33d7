//! Line-delimited JSON event log.
//!
//! Each line is `<sha256 hex of json> <json>\n`. Sequence numbers start at 1
//! and are dense. A line only counts once its newline is on disk, so a crash
//! mid-append leaves a torn final line that strict replay reports as
//! [`StoreError::CorruptLog`] and recovery drops.

use std::fs::{File, OpenOptions, TryLockError};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::event::{Event, Record};
use crate::snapshot::{DomainError, Snapshot};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event rejected: {0}")]
    ValidationRejected(#[from] DomainError),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt log at sequence {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("store `{}` is in use by another process", .0.display())]
    Locked(PathBuf),
}

impl StoreError {
    fn io(context: &str, e: io::Error) -> Self {
        Self::StorageFailure(format!("{context}: {e}"))
    }
}

fn checksum(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn encode_record(record: &Record) -> String {
    let json = serde_json::to_string(record).expect("records serialize");
    format!("{} {json}\n", checksum(&json))
}

fn decode_line(line: &str, expected_seq: u64) -> Result<Record, String> {
    let (sum, json) = line.split_once(' ').ok_or("missing checksum separator")?;
    if checksum(json) != sum {
        return Err("checksum mismatch".into());
    }
    let record: Record = serde_json::from_str(json).map_err(|e| format!("undecodable record: {e}"))?;
    if record.seq != expected_seq {
        return Err(format!("sequence {} out of order", record.seq));
    }
    Ok(record)
}

/// Outcome of a tolerant replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub snapshot: Snapshot,
    /// Bytes covered by complete, valid lines.
    pub valid_len: u64,
    /// Bytes of an incomplete final line that were ignored.
    pub torn_bytes: u64,
}

fn replay_inner(bytes: &[u8], tolerate_torn_tail: bool) -> Result<Recovered, StoreError> {
    let mut snapshot = Snapshot::default();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let seq = snapshot.last_seq + 1;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            if tolerate_torn_tail {
                return Ok(Recovered {
                    snapshot,
                    valid_len: offset as u64,
                    torn_bytes: (bytes.len() - offset) as u64,
                });
            }
            return Err(StoreError::CorruptLog { seq, reason: "truncated record".into() });
        };
        let line = std::str::from_utf8(&bytes[offset..offset + nl])
            .map_err(|_| StoreError::CorruptLog { seq, reason: "invalid UTF-8".into() })?;
        let record = decode_line(line, seq).map_err(|reason| StoreError::CorruptLog { seq, reason })?;
        snapshot
            .apply(&record)
            .map_err(|e| StoreError::CorruptLog { seq, reason: format!("event does not validate: {e}") })?;
        offset += nl + 1;
    }
    Ok(Recovered { snapshot, valid_len: offset as u64, torn_bytes: 0 })
}

/// Strict replay: any damage, including a torn final line, is an error.
pub fn replay_bytes(bytes: &[u8]) -> Result<Snapshot, StoreError> {
    replay_inner(bytes, false).map(|r| r.snapshot)
}

/// Like [`replay_bytes`] but drops an incomplete final line.
pub fn replay_bytes_recover(bytes: &[u8]) -> Result<Recovered, StoreError> {
    replay_inner(bytes, true)
}

fn read_all(path: &Path) -> Result<Vec<u8>, StoreError> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(StoreError::io("reading log", e)),
    }
}

pub fn replay(path: &Path) -> Result<Snapshot, StoreError> {
    replay_bytes(&read_all(path)?)
}

pub fn replay_recover(path: &Path) -> Result<Recovered, StoreError> {
    replay_bytes_recover(&read_all(path)?)
}

/// Where appended lines go.
pub trait Sink: Send {
    fn write_all(&mut self, buf: &[u8]) -> io::Result<()>;
    /// Makes previously written bytes durable.
    fn sync(&mut self) -> io::Result<()>;
}

impl Sink for File {
    fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
        Write::write_all(self, buf)
    }

    fn sync(&mut self) -> io::Result<()> {
        self.sync_data()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OpenMode {
    /// Refuse to open a log with any damage.
    #[default]
    Strict,
    /// Drop a torn final line (truncating the file), refuse other damage.
    RecoverTornTail,
}

/// The single writer of a log.
pub struct EventLog {
    sink: Box<dyn Sink>,
    next_seq: u64,
    poisoned: bool,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("next_seq", &self.next_seq).field("poisoned", &self.poisoned).finish()
    }
}

impl EventLog {
    /// Opens (creating if needed) and replays the log at `path`, holding an
    /// exclusive lock on it for the lifetime of the returned log.
    pub fn open(path: &Path, mode: OpenMode) -> Result<(Self, Snapshot), StoreError> {
        let existed = path.exists();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(|e| StoreError::io("opening log", e))?;
        match file.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => return Err(StoreError::Locked(path.to_owned())),
            Err(TryLockError::Error(e)) => return Err(StoreError::io("locking log", e)),
        }
        if !existed {
            sync_parent(path);
        }
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| StoreError::io("reading log", e))?;
        let recovered = match mode {
            OpenMode::Strict => Recovered {
                valid_len: bytes.len() as u64,
                snapshot: replay_bytes(&bytes)?,
                torn_bytes: 0,
            },
            OpenMode::RecoverTornTail => replay_bytes_recover(&bytes)?,
        };
        if recovered.torn_bytes > 0 {
            tracing::warn!(
                path = %path.display(),
                bytes = recovered.torn_bytes,
                "dropping torn final record"
            );
            file.set_len(recovered.valid_len).map_err(|e| StoreError::io("truncating torn record", e))?;
            file.sync_all().map_err(|e| StoreError::io("syncing log", e))?;
        }
        let log = Self { sink: Box::new(file), next_seq: recovered.snapshot.last_seq + 1, poisoned: false };
        Ok((log, recovered.snapshot))
    }

    /// A log writing to `sink`, continuing after `snapshot`.
    pub fn with_sink(sink: Box<dyn Sink>, snapshot: &Snapshot) -> Self {
        Self { sink, next_seq: snapshot.last_seq + 1, poisoned: false }
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Validates `event` against `snapshot`, writes it durably, then applies it.
    /// Nothing is applied unless the write succeeded.
    pub fn append(&mut self, snapshot: &mut Snapshot, event: Event, at: DateTime<Utc>) -> Result<u64, StoreError> {
        if self.poisoned {
            return Err(StoreError::StorageFailure("log is unusable after a failed write; reopen the store".into()));
        }
        debug_assert_eq!(snapshot.last_seq + 1, self.next_seq);
        let record = Record { seq: self.next_seq, at, event };
        let change = snapshot.stage(&record)?;
        let line = encode_record(&record);
        if let Err(e) = self.sink.write_all(line.as_bytes()).and_then(|()| self.sink.sync()) {
            self.poisoned = true;
            return Err(StoreError::io("appending record", e));
        }
        snapshot.commit(record.seq, change);
        self.next_seq += 1;
        Ok(record.seq)
    }
}

fn sync_parent(path: &Path) {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if let Ok(dir) = File::open(parent) {
        let _ = dir.sync_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use relkit_core::orchestrator::{RunMode, RunReport, Totals, REPORT_SCHEMA};

    fn run_event(id: &str) -> Event {
        let at = Utc::now();
        Event::RunSubmitted {
            id: id.into(),
            report: RunReport {
                schema: REPORT_SCHEMA.into(),
                mode: RunMode::Standard,
                started_at: at,
                finished_at: at,
                totals: Totals::default(),
                results: vec![],
            },
        }
    }

    #[derive(Default)]
    struct VecSink(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

    impl Sink for VecSink {
        fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(())
        }
        fn sync(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn empty_log_is_empty_snapshot() {
        assert_eq!(replay_bytes(b"").unwrap(), Snapshot::default());
    }

    #[test]
    fn first_event_is_sequence_one() {
        let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let mut snap = Snapshot::default();
        let mut log = EventLog::with_sink(Box::new(VecSink(buf.clone())), &snap);
        assert_eq!(log.append(&mut snap, run_event("r1"), Utc::now()).unwrap(), 1);
        assert_eq!(log.append(&mut snap, run_event("r2"), Utc::now()).unwrap(), 2);
        assert!(matches!(
            log.append(&mut snap, run_event("r2"), Utc::now()),
            Err(StoreError::ValidationRejected(DomainError::DuplicateRun(_)))
        ));
        assert_eq!(log.next_seq(), 3);
        assert_eq!(replay_bytes(&buf.lock().unwrap()).unwrap(), snap);
    }

    #[test]
    fn checksum_and_order_are_checked() {
        let r1 = Record { seq: 1, at: Utc::now(), event: run_event("a") };
        let line = encode_record(&r1);
        let tampered = line.replacen("\"a\"", "\"b\"", 1);
        assert!(matches!(replay_bytes(tampered.as_bytes()), Err(StoreError::CorruptLog { seq: 1, .. })));
        let r3 = Record { seq: 3, ..r1.clone() };
        let gap = format!("{line}{}", encode_record(&r3));
        assert!(matches!(replay_bytes(gap.as_bytes()), Err(StoreError::CorruptLog { seq: 2, .. })));
    }

    #[test]
    fn torn_tail_strict_vs_recover() {
        let line = encode_record(&Record { seq: 1, at: Utc::now(), event: run_event("a") });
        let half = &line.as_bytes()[..line.len() / 2];
        assert!(matches!(replay_bytes(half), Err(StoreError::CorruptLog { seq: 1, .. })));
        let rec = replay_bytes_recover(half).unwrap();
        assert_eq!(rec.snapshot, Snapshot::default());
        assert_eq!(rec.torn_bytes, half.len() as u64);
    }
}
