//! Canonical snapshots and the hash-chained audit log.

mod audit;
mod snapshot;

pub use audit::{
    append_audit, parse_audit, replay_audit, replay_prefix, AuditAnchor, AuditError, AuditLog, AuditRecord,
    AuditVerdict, Digest, Genesis, ReplayCause, ReplayError, AUDIT_HEADER,
};
pub use snapshot::{parse_snapshot, serialize_snapshot, Snapshot, SnapshotError, FORMAT_VERSION};
