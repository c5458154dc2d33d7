//! Event-sourced persistence for test sessions and suite runs, plus the
//! HTTP API the session cockpit talks to.

pub mod event;
pub mod http;
pub mod log;
pub mod snapshot;
pub mod store;

pub use event::{Event, Record};
pub use log::{replay, replay_bytes, replay_bytes_recover, replay_recover, EventLog, OpenMode, Recovered, Sink, StoreError};
pub use snapshot::{DomainError, Snapshot, StoredRun};
pub use store::{NewSession, Store};
