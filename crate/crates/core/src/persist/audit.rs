//! Append-only, hash-chained audit log and deterministic replay.
//!
//! File layout (UTF-8, LF):
//!
//! ```text
//! ourbac-audit v1 sha256
//! genesis<TAB><rbac-manager><TAB>ou_role_inheritance=1<TAB>directive_mode=1<TAB>manager_ssd_enabled=1
//! <seq><TAB><principal><TAB><verdict><TAB><action><TAB><prev_digest>
//! ...
//! ```
//!
//! `prev_digest` is the SHA-256 of the previous record line (without its
//! LF); record 1 carries 64 zeros. The digest of the last line is the log
//! head, which snapshots record as their audit anchor.

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::admin::{execute, AdminAction, AdminError, DenyReason};
use crate::encoding::{decode_action, encode_action};
use crate::ids::PrincipalId;
use crate::model::{EngineConfig, PolicyState};

pub const AUDIT_HEADER: &str = "ourbac-audit v1 sha256";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 64 lowercase hex characters.
    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || s.bytes().any(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return None;
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Digest(out))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AuditVerdict {
    Executed,
    Denied(DenyReason),
    /// Refused by a state invariant; carries the constraint code.
    Rejected(String),
}

impl AuditVerdict {
    pub fn of(result: &Result<(), AdminError>) -> Self {
        match result {
            Ok(()) => AuditVerdict::Executed,
            Err(AdminError::Denied(r)) => AuditVerdict::Denied(*r),
            Err(AdminError::Rejected(e)) => AuditVerdict::Rejected(e.code().to_string()),
        }
    }

    pub fn encode(&self) -> String {
        match self {
            AuditVerdict::Executed => "executed".to_string(),
            AuditVerdict::Denied(r) => format!("denied:{r}"),
            AuditVerdict::Rejected(code) => format!("rejected:{code}"),
        }
    }

    pub fn decode(s: &str) -> Option<Self> {
        if s == "executed" {
            return Some(AuditVerdict::Executed);
        }
        if let Some(r) = s.strip_prefix("denied:") {
            return DenyReason::parse(r).map(AuditVerdict::Denied);
        }
        let code = s.strip_prefix("rejected:")?;
        (!code.is_empty() && code.bytes().all(|b| b.is_ascii_alphanumeric()))
            .then(|| AuditVerdict::Rejected(code.to_string()))
    }
}

/// The durable trace of one `execute` call.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AuditRecord {
    pub seq: u64,
    pub principal: PrincipalId,
    pub action: AdminAction,
    pub verdict: AuditVerdict,
    pub prev_digest: Digest,
}

impl AuditRecord {
    /// Canonical bytes: the record's line without the trailing LF.
    pub fn encode(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.seq,
            self.principal,
            self.verdict.encode(),
            encode_action(&self.action),
            self.prev_digest
        )
    }

    pub fn digest(&self) -> Digest {
        Digest::of(self.encode().as_bytes())
    }

    /// Strict parse of one record line; `None` if it is not canonical.
    pub fn decode(line: &str) -> Option<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [seq, principal, verdict, action, prev] = fields.as_slice() else {
            return None;
        };
        let record = AuditRecord {
            seq: seq.parse().ok()?,
            principal: PrincipalId::new(principal).ok()?,
            verdict: AuditVerdict::decode(verdict)?,
            action: decode_action(action).ok()?,
            prev_digest: Digest::from_hex(prev)?,
        };
        (record.encode() == line).then_some(record)
    }
}

/// Position of a log head: how many records, and the digest of the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AuditAnchor {
    pub seq: u64,
    pub head: Digest,
}

/// Initial conditions a log is replayed from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Genesis {
    pub rbac_manager: PrincipalId,
    pub config: EngineConfig,
}

impl Genesis {
    pub fn state(&self) -> PolicyState {
        PolicyState::bootstrap(self.rbac_manager.clone(), self.config)
    }

    fn encode(&self) -> String {
        let b = |v: bool| if v { "1" } else { "0" };
        format!(
            "genesis\t{}\tou_role_inheritance={}\tdirective_mode={}\tmanager_ssd_enabled={}",
            self.rbac_manager,
            b(self.config.ou_role_inheritance),
            b(self.config.directive_mode),
            b(self.config.manager_ssd_enabled)
        )
    }

    fn decode(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let ["genesis", manager, inherit, directive, ssd] = f.as_slice() else {
            return None;
        };
        let flag = |s: &str, key: &str| match s.strip_prefix(key)?.strip_prefix('=')? {
            "1" => Some(true),
            "0" => Some(false),
            _ => None,
        };
        Some(Genesis {
            rbac_manager: PrincipalId::new(manager).ok()?,
            config: EngineConfig {
                ou_role_inheritance: flag(inherit, "ou_role_inheritance")?,
                directive_mode: flag(directive, "directive_mode")?,
                manager_ssd_enabled: flag(ssd, "manager_ssd_enabled")?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("record seq {found} does not follow {expected}")]
    Gap { expected: u64, found: u64 },
    #[error("record {seq} does not chain to the log head")]
    Unchained { seq: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayCause {
    Header(String),
    Malformed,
    Gap,
    DigestMismatch,
    Divergence(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("replay failed at seq {seq}: {cause:?}")]
pub struct ReplayError {
    pub seq: u64,
    pub cause: ReplayCause,
}

impl ReplayError {
    fn at(seq: u64, cause: ReplayCause) -> Self {
        Self { seq, cause }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    head: Digest,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn anchor(&self) -> AuditAnchor {
        AuditAnchor { seq: self.records.len() as u64, head: self.head }
    }

    /// Builds the next record for `(principal, action, verdict)` and
    /// appends it.
    pub fn record(&mut self, principal: PrincipalId, action: AdminAction, verdict: AuditVerdict) -> &AuditRecord {
        let record = AuditRecord {
            seq: self.records.len() as u64 + 1,
            principal,
            action,
            verdict,
            prev_digest: self.head,
        };
        self.append(record).expect("self-built record chains");
        self.records.last().expect("just appended")
    }

    /// Appends a pre-built record after checking sequence and chain.
    pub fn append(&mut self, record: AuditRecord) -> Result<(), AuditError> {
        let expected = self.records.len() as u64 + 1;
        if record.seq != expected {
            return Err(AuditError::Gap { expected, found: record.seq });
        }
        if record.prev_digest != self.head {
            return Err(AuditError::Unchained { seq: record.seq });
        }
        self.head = record.digest();
        self.records.push(record);
        Ok(())
    }

    /// The full file text including header and genesis lines.
    pub fn to_text(&self, genesis: &Genesis) -> String {
        let mut out = String::new();
        out.push_str(AUDIT_HEADER);
        out.push('\n');
        out.push_str(&genesis.encode());
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.encode());
            out.push('\n');
        }
        out
    }
}

/// Appends `record` to `log`, returning the extended log.
pub fn append_audit(mut log: AuditLog, record: AuditRecord) -> Result<AuditLog, AuditError> {
    log.append(record)?;
    Ok(log)
}

/// Locates the corrupted record given each line's digest and claimed
/// predecessor digest. A record whose own prev field was altered breaks
/// both its incoming and outgoing link; one whose other bytes were altered
/// breaks only its outgoing link.
fn check_links(digests: &[Digest], prevs: &[Digest], anchor: Option<&AuditAnchor>) -> Result<(), ReplayError> {
    let n = digests.len();
    let expected_prev = |k: usize| if k == 0 { Digest::ZERO } else { digests[k - 1] };
    // Link k holds iff record k's prev equals the digest of record k-1;
    // link n is the anchor.
    let link_holds = |k: usize| -> Option<bool> {
        if k < n {
            Some(prevs[k] == expected_prev(k))
        } else {
            anchor.map(|a| n > 0 && a.head == digests[n - 1])
        }
    };
    for (k, prev) in prevs.iter().enumerate() {
        if *prev != expected_prev(k) {
            let culprit = if k == 0 || link_holds(k + 1) == Some(false) { k } else { k - 1 };
            return Err(ReplayError::at(culprit as u64 + 1, ReplayCause::DigestMismatch));
        }
    }
    if let Some(a) = anchor {
        if a.seq > n as u64 {
            return Err(ReplayError::at(n as u64 + 1, ReplayCause::Gap));
        }
        if a.seq < n as u64 {
            return Err(ReplayError::at(a.seq + 1, ReplayCause::Gap));
        }
        if n > 0 && a.head != digests[n - 1] {
            return Err(ReplayError::at(n as u64, ReplayCause::DigestMismatch));
        }
    }
    Ok(())
}

/// Parses and chain-verifies the text of an audit log file. With an
/// `anchor`, the final record is also checked against the trusted head.
pub fn parse_audit(text: &str, anchor: Option<&AuditAnchor>) -> Result<(Genesis, AuditLog), ReplayError> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or_default();
    if header != format!("{AUDIT_HEADER}\n") {
        return Err(ReplayError::at(0, ReplayCause::Header(format!("bad header {:?}", header.trim_end()))));
    }
    let genesis_line = lines.next().unwrap_or_default();
    let genesis = genesis_line
        .strip_suffix('\n')
        .and_then(Genesis::decode)
        .ok_or_else(|| ReplayError::at(0, ReplayCause::Header("bad genesis line".into())))?;

    let mut parsed = Vec::new();
    let mut digests = Vec::new();
    let mut prevs = Vec::new();
    for (i, raw) in lines.enumerate() {
        let seq = i as u64 + 1;
        let line = raw.strip_suffix('\n').ok_or_else(|| ReplayError::at(seq, ReplayCause::Malformed))?;
        let record = AuditRecord::decode(line).ok_or_else(|| ReplayError::at(seq, ReplayCause::Malformed))?;
        if record.seq != seq {
            return Err(ReplayError::at(seq, ReplayCause::Gap));
        }
        digests.push(Digest::of(line.as_bytes()));
        prevs.push(record.prev_digest);
        parsed.push(record);
    }
    check_links(&digests, &prevs, anchor)?;
    let head = digests.last().copied().unwrap_or_default();
    Ok((genesis, AuditLog { records: parsed, head }))
}

/// Re-executes every record from the genesis state and checks that each
/// reproduces its recorded verdict. Returns the final state.
pub fn replay_audit(records: &[AuditRecord], genesis: &Genesis) -> Result<PolicyState, ReplayError> {
    replay_prefix(records, genesis, records.len())
}

/// Like [`replay_audit`] but stops after the first `upto` records.
pub fn replay_prefix(records: &[AuditRecord], genesis: &Genesis, upto: usize) -> Result<PolicyState, ReplayError> {
    let digests: Vec<Digest> = records.iter().map(AuditRecord::digest).collect();
    let prevs: Vec<Digest> = records.iter().map(|r| r.prev_digest).collect();
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 + 1 {
            return Err(ReplayError::at(i as u64 + 1, ReplayCause::Gap));
        }
    }
    check_links(&digests, &prevs, None)?;

    let mut state = genesis.state();
    for r in records.iter().take(upto) {
        let outcome = execute(&state, &r.principal, &r.action);
        let verdict = AuditVerdict::of(&outcome.as_ref().map(|_| ()).map_err(Clone::clone));
        if verdict != r.verdict {
            return Err(ReplayError::at(
                r.seq,
                ReplayCause::Divergence(format!("recorded {}, re-executed {}", r.verdict.encode(), verdict.encode())),
            ));
        }
        if let Ok(done) = outcome {
            state = done.state;
        }
    }
    Ok(state)
}
