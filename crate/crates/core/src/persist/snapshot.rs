//! Canonical snapshot text format.
//!
//! ```text
//! ourbac-snapshot v1
//! audit<TAB>seq=<n><TAB>head=<hex>
//! ## config
//! ou_role_inheritance<TAB>true
//! ...
//! ## users
//! user<TAB>u.alice
//! ...
//! ```
//!
//! Sections appear in a fixed order; entries inside a section are sorted
//! by their identifier fields (byte order) and must be strictly
//! increasing, so every state has exactly one encoding.

use std::collections::BTreeSet;

use thiserror::Error;

use super::audit::{AuditAnchor, Digest};
use crate::admin::{AdminAssignment, Directive, DirectiveStatus, ManagerRole};
use crate::encoding::{decode_pattern, encode_pattern};
use crate::ids::{IdError, Name, OuId, PermId, PrincipalId, RoleId, UserId};
use crate::model::{EngineConfig, EntityKind, OrgUnit, Permission, PolicyState, SodConstraint};

pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 15] = [
    "config",
    "users",
    "roles",
    "perms",
    "ous",
    "ua_direct",
    "uo",
    "or_assign",
    "pa",
    "rh",
    "ssd",
    "dsd",
    "principals",
    "directives",
    "tombstones",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("line {line}, column {column}: {message}")]
    Format { line: usize, column: usize, message: String },
    #[error("unsupported snapshot format version {0}")]
    Version(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub format_version: u32,
    /// Audit log position this snapshot corresponds to.
    pub anchor: AuditAnchor,
    pub state: PolicyState,
}

impl Snapshot {
    pub fn new(state: PolicyState, anchor: AuditAnchor) -> Self {
        Self { format_version: FORMAT_VERSION, anchor, state }
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line(format!("ourbac-snapshot v{}", self.format_version));
        w.line(format!("audit\tseq={}\thead={}", self.anchor.seq, self.anchor.head));
        write_state(&mut w, &self.state);
        w.out
    }

    pub fn parse(text: &str) -> Result<Self, SnapshotError> {
        Parser::new(text).snapshot()
    }
}

/// Canonical bytes of `state` with an empty audit anchor.
pub fn serialize_snapshot(state: &PolicyState) -> Vec<u8> {
    Snapshot::new(state.clone(), AuditAnchor::default()).to_text().into_bytes()
}

pub fn parse_snapshot(bytes: &[u8]) -> Result<PolicyState, SnapshotError> {
    let text = std::str::from_utf8(bytes).map_err(|e| SnapshotError::Format {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count(),
        column: 1,
        message: "invalid UTF-8".into(),
    })?;
    Ok(Snapshot::parse(text)?.state)
}

#[derive(Default)]
struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn entry<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        for f in fields {
            if !first {
                self.out.push('\t');
            }
            first = false;
            self.out.push_str(f.as_ref());
        }
        self.out.push('\n');
    }
}

fn write_state(w: &mut Writer, s: &PolicyState) {
    let flag = |b: bool| if b { "true" } else { "false" };
    w.line("## config");
    w.entry(["directive_mode", flag(s.config.directive_mode)]);
    w.entry(["manager_ssd_enabled", flag(s.config.manager_ssd_enabled)]);
    w.entry(["ou_role_inheritance", flag(s.config.ou_role_inheritance)]);

    w.line("## users");
    for u in &s.users {
        w.entry(["user", u.as_str()]);
    }
    w.line("## roles");
    for r in &s.roles {
        w.entry(["role", r.as_str()]);
    }
    w.line("## perms");
    for p in s.perms.values() {
        w.entry(["perm", p.id.as_str(), p.operation.as_str(), p.object.as_str()]);
    }
    w.line("## ous");
    for o in s.ous.values() {
        let mut f = vec!["ou".to_string(), o.id.to_string()];
        if let Some(p) = &o.parent {
            f.push(format!("parent={p}"));
        }
        if let Some(d) = &o.department {
            f.push(format!("dept={d}"));
        }
        w.entry(f);
    }
    w.line("## ua_direct");
    for (u, r) in &s.ua_direct {
        w.entry(["ua", u.as_str(), r.as_str()]);
    }
    w.line("## uo");
    for (u, o) in &s.uo {
        w.entry(["uo", u.as_str(), o.as_str()]);
    }
    w.line("## or_assign");
    for (o, r) in &s.or_assign {
        w.entry(["or", o.as_str(), r.as_str()]);
    }
    w.line("## pa");
    let pa: BTreeSet<(&PermId, &RoleId)> = s.pa.iter().map(|(r, p)| (p, r)).collect();
    for (p, r) in pa {
        w.entry(["pa", p.as_str(), r.as_str()]);
    }
    w.line("## rh");
    for (a, b) in &s.rh {
        w.entry(["rh", a.as_str(), b.as_str()]);
    }
    for (section, table) in [("ssd", &s.ssd), ("dsd", &s.dsd)] {
        w.line(format!("## {section}"));
        for c in table.values() {
            let mut f = vec![section.to_string(), c.id.to_string(), c.cardinality.to_string()];
            f.extend(c.roles.iter().map(|r| r.to_string()));
            w.entry(f);
        }
    }
    w.line("## principals");
    for a in &s.principals {
        let mut f = vec!["principal".to_string(), a.principal.to_string(), a.role.to_string()];
        if let Some(scope) = &a.scope {
            f.push(format!("scope={scope}"));
        }
        w.entry(f);
    }
    w.line("## directives");
    for d in s.directives.values() {
        w.entry([
            "directive",
            d.id.as_str(),
            d.issued_by.as_str(),
            d.status.as_str(),
            &encode_pattern(&d.pattern),
        ]);
    }
    w.line("## tombstones");
    for (kind, id) in &s.tombstones {
        w.entry(["tombstone", kind.as_str(), id.as_str()]);
    }
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

/// One tab-separated entry line with its 1-based line number.
struct Entry<'a> {
    line: usize,
    raw: &'a str,
    fields: Vec<&'a str>,
}

impl<'a> Entry<'a> {
    fn column(&self, idx: usize) -> usize {
        1 + self.fields[..idx].iter().map(|f| f.chars().count() + 1).sum::<usize>()
    }

    fn err(&self, idx: usize, message: impl Into<String>) -> SnapshotError {
        SnapshotError::Format { line: self.line, column: self.column(idx.min(self.fields.len())), message: message.into() }
    }

    fn arity(&self, n: impl std::ops::RangeBounds<usize>, what: &str) -> Result<(), SnapshotError> {
        if n.contains(&self.fields.len()) {
            Ok(())
        } else {
            Err(self.err(0, format!("wrong number of fields for {what} entry")))
        }
    }

    fn id<T>(&self, idx: usize, make: impl Fn(&'a str) -> Result<T, IdError>) -> Result<T, SnapshotError> {
        make(self.fields[idx]).map_err(|e| self.err(idx, e.to_string()))
    }

    fn option<T>(
        &self,
        idx: usize,
        key: &str,
        make: impl Fn(&'a str) -> Result<T, IdError>,
    ) -> Result<Option<T>, SnapshotError> {
        match self.fields.get(idx) {
            None => Ok(None),
            Some(f) => match f.strip_prefix(key).and_then(|r| r.strip_prefix('=')) {
                Some(v) => Ok(Some(make(v).map_err(|e| self.err(idx, e.to_string()))?)),
                None => Err(self.err(idx, format!("expected {key}=..."))),
            },
        }
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        let mut lines: Vec<&str> = text.split('\n').collect();
        // A trailing LF leaves one empty final piece.
        if lines.last() == Some(&"") {
            lines.pop();
        }
        Self { lines, pos: 0 }
    }

    fn err_at(&self, line: usize, message: impl Into<String>) -> SnapshotError {
        SnapshotError::Format { line, column: 1, message: message.into() }
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), SnapshotError> {
        let line = self.pos + 1;
        let raw = *self.lines.get(self.pos).ok_or_else(|| self.err_at(line, format!("unexpected end, expected {what}")))?;
        self.pos += 1;
        Ok((line, raw))
    }

    fn snapshot(mut self) -> Result<Snapshot, SnapshotError> {
        let (ln, header) = self.next_line("header")?;
        let version = header
            .strip_prefix("ourbac-snapshot v")
            .ok_or_else(|| self.err_at(ln, "missing ourbac-snapshot header"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(SnapshotError::Version(version.to_string()));
        }
        let anchor = self.anchor()?;
        let mut state = PolicyState::default();
        for name in SECTIONS {
            let entries = self.section(name)?;
            self.fill(&mut state, name, entries)?;
        }
        if self.pos < self.lines.len() {
            return Err(self.err_at(self.pos + 1, "trailing content after tombstones section"));
        }
        Ok(Snapshot { format_version: FORMAT_VERSION, anchor, state })
    }

    fn anchor(&mut self) -> Result<AuditAnchor, SnapshotError> {
        let (line, raw) = self.next_line("audit line")?;
        let e = Entry { line, raw, fields: raw.split('\t').collect() };
        if e.fields.len() != 3 || e.fields[0] != "audit" {
            return Err(e.err(0, "expected audit<TAB>seq=..<TAB>head=.."));
        }
        let seq = e.fields[1]
            .strip_prefix("seq=")
            .and_then(|s| s.parse::<u64>().ok().filter(|n| n.to_string() == s))
            .ok_or_else(|| e.err(1, "bad seq"))?;
        let head = e.fields[2]
            .strip_prefix("head=")
            .and_then(Digest::from_hex)
            .ok_or_else(|| e.err(2, "bad head digest"))?;
        Ok(AuditAnchor { seq, head })
    }

    fn section(&mut self, name: &str) -> Result<Vec<Entry<'a>>, SnapshotError> {
        let (ln, raw) = self.next_line(&format!("section {name}"))?;
        if raw != format!("## {name}") {
            return Err(self.err_at(ln, format!("expected section header `## {name}`")));
        }
        let mut out = Vec::new();
        while let Some(raw) = self.lines.get(self.pos) {
            if raw.starts_with("## ") {
                break;
            }
            let line = self.pos + 1;
            self.pos += 1;
            let e = Entry { line, raw, fields: raw.split('\t').collect() };
            if e.fields.iter().any(|f| f.is_empty()) {
                return Err(e.err(0, "empty field"));
            }
            out.push(e);
        }
        Ok(out)
    }

    fn fill(&self, s: &mut PolicyState, section: &str, entries: Vec<Entry<'a>>) -> Result<(), SnapshotError> {
        let tag = match section {
            "config" => "",
            "users" => "user",
            "roles" => "role",
            "perms" => "perm",
            "ous" => "ou",
            "ua_direct" => "ua",
            "uo" => "uo",
            "or_assign" => "or",
            "pa" => "pa",
            "rh" => "rh",
            "ssd" => "ssd",
            "dsd" => "dsd",
            "principals" => "principal",
            "directives" => "directive",
            "tombstones" => "tombstone",
            _ => unreachable!("fixed section list"),
        };
        if section == "config" {
            return self.config(s, entries);
        }
        let mut prev_key: Option<Vec<String>> = None;
        for e in entries {
            if e.fields[0] != tag {
                return Err(e.err(0, format!("expected `{tag}` entry in section {section}")));
            }
            let key = self.entry(s, section, &e)?;
            if let Some(prev) = &prev_key {
                if *prev == key {
                    return Err(e.err(1, format!("duplicate {tag} entry: {}", e.raw.replace('\t', " "))));
                }
                if *prev > key {
                    return Err(e.err(1, format!("{tag} entries out of order")));
                }
            }
            prev_key = Some(key);
        }
        Ok(())
    }

    fn config(&self, s: &mut PolicyState, entries: Vec<Entry<'a>>) -> Result<(), SnapshotError> {
        let keys = ["directive_mode", "manager_ssd_enabled", "ou_role_inheritance"];
        if entries.len() != keys.len() {
            let line = entries.last().map_or(self.pos, |e| e.line);
            return Err(self.err_at(line, "config section needs exactly three entries"));
        }
        let mut cfg = EngineConfig::default();
        for (e, key) in entries.iter().zip(keys) {
            e.arity(2..=2, "config")?;
            if e.fields[0] != key {
                return Err(e.err(0, format!("expected config key {key}")));
            }
            let v = match e.fields[1] {
                "true" => true,
                "false" => false,
                _ => return Err(e.err(1, "expected true or false")),
            };
            match key {
                "directive_mode" => cfg.directive_mode = v,
                "manager_ssd_enabled" => cfg.manager_ssd_enabled = v,
                _ => cfg.ou_role_inheritance = v,
            }
        }
        s.config = cfg;
        Ok(())
    }

    /// Inserts one entry and returns its sort key.
    fn entry(&self, s: &mut PolicyState, section: &str, e: &Entry<'a>) -> Result<Vec<String>, SnapshotError> {
        let key = |idx: &[usize]| idx.iter().map(|i| e.fields[*i].to_string()).collect::<Vec<_>>();
        match section {
            "users" => {
                e.arity(2..=2, "user")?;
                s.users.insert(e.id(1, UserId::new)?);
                Ok(key(&[1]))
            }
            "roles" => {
                e.arity(2..=2, "role")?;
                s.roles.insert(e.id(1, RoleId::new)?);
                Ok(key(&[1]))
            }
            "perms" => {
                e.arity(4..=4, "perm")?;
                let p = Permission { id: e.id(1, PermId::new)?, operation: e.id(2, Name::new)?, object: e.id(3, Name::new)? };
                let k = (p.operation.clone(), p.object.clone());
                if let Some(existing) = s.perm_keys.get(&k) {
                    return Err(e.err(2, format!("({}, {}) already used by {existing}", k.0, k.1)));
                }
                s.perm_keys.insert(k, p.id.clone());
                s.perms.insert(p.id.clone(), p);
                Ok(key(&[1]))
            }
            "ous" => {
                e.arity(2..=4, "ou")?;
                let id = e.id(1, OuId::new)?;
                let (parent, department) = match e.fields.len() {
                    2 => (None, None),
                    3 if e.fields[2].starts_with("parent=") => (e.option(2, "parent", OuId::new)?, None),
                    3 => (None, e.option(2, "dept", Name::new)?),
                    _ => (e.option(2, "parent", OuId::new)?, e.option(3, "dept", Name::new)?),
                };
                if let Some(p) = &parent {
                    s.ou_children.insert((p.clone(), id.clone()));
                }
                s.ous.insert(id.clone(), OrgUnit { id, parent, department });
                Ok(key(&[1]))
            }
            "ua_direct" => {
                e.arity(3..=3, "ua")?;
                s.ua_direct.insert((e.id(1, UserId::new)?, e.id(2, RoleId::new)?));
                Ok(key(&[1, 2]))
            }
            "uo" => {
                e.arity(3..=3, "uo")?;
                let (u, o) = (e.id(1, UserId::new)?, e.id(2, OuId::new)?);
                s.ou_members.insert((o.clone(), u.clone()));
                s.uo.insert((u, o));
                Ok(key(&[1, 2]))
            }
            "or_assign" => {
                e.arity(3..=3, "or")?;
                s.or_assign.insert((e.id(1, OuId::new)?, e.id(2, RoleId::new)?));
                Ok(key(&[1, 2]))
            }
            "pa" => {
                e.arity(3..=3, "pa")?;
                s.pa.insert((e.id(2, RoleId::new)?, e.id(1, PermId::new)?));
                Ok(key(&[1, 2]))
            }
            "rh" => {
                e.arity(3..=3, "rh")?;
                s.rh.insert((e.id(1, RoleId::new)?, e.id(2, RoleId::new)?));
                Ok(key(&[1, 2]))
            }
            "ssd" | "dsd" => {
                e.arity(3.., section)?;
                let id = e.id(1, Name::new)?;
                let cardinality = e.fields[2]
                    .parse::<usize>()
                    .ok()
                    .filter(|n| n.to_string() == e.fields[2])
                    .ok_or_else(|| e.err(2, "bad cardinality"))?;
                let mut roles = BTreeSet::new();
                for i in 3..e.fields.len() {
                    let r = e.id(i, RoleId::new)?;
                    if roles.last().is_some_and(|last| *last >= r) {
                        return Err(e.err(i, "constraint roles must be sorted and distinct"));
                    }
                    roles.insert(r);
                }
                let c = SodConstraint { id: id.clone(), roles, cardinality };
                if section == "ssd" {
                    s.ssd.insert(id, c);
                } else {
                    s.dsd.insert(id, c);
                }
                Ok(key(&[1]))
            }
            "principals" => {
                e.arity(3..=4, "principal")?;
                let role = ManagerRole::parse(e.fields[2]).ok_or_else(|| e.err(2, "unknown manager role"))?;
                let a = AdminAssignment {
                    principal: e.id(1, PrincipalId::new)?,
                    role,
                    scope: e.option(3, "scope", Name::new)?,
                };
                let k = vec![a.principal.to_string(), format!("{:?}", role as u8), a.scope.as_ref().map(|x| x.to_string()).unwrap_or_default()];
                s.principals.insert(a);
                Ok(k)
            }
            "directives" => {
                e.arity(5..=5, "directive")?;
                let status = DirectiveStatus::parse(e.fields[3]).ok_or_else(|| e.err(3, "unknown directive status"))?;
                let pattern = decode_pattern(e.fields[4]).map_err(|err| e.err(4, err.to_string()))?;
                let d = Directive { id: e.id(1, Name::new)?, issued_by: e.id(2, PrincipalId::new)?, pattern, status };
                s.directives.insert(d.id.clone(), d);
                Ok(key(&[1]))
            }
            "tombstones" => {
                e.arity(3..=3, "tombstone")?;
                let kind = EntityKind::parse(e.fields[1]).ok_or_else(|| e.err(1, "unknown entity kind"))?;
                e.id(2, Name::new)?;
                s.tombstones.insert((kind, e.fields[2].to_string()));
                Ok(vec![format!("{:?}", kind as u8), e.fields[2].to_string()])
            }
            _ => unreachable!("fixed section list"),
        }
    }
}
