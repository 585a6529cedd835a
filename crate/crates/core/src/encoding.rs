//! Canonical single-line text encoding of [`AdminAction`]s.
//!
//! Tokens are separated by single spaces: the variant name, its positional
//! fields, then optional `key=value` fields in a fixed order. Identifiers
//! never contain whitespace, so the encoding is unambiguous. `decode` only
//! accepts the canonical form, so `encode(decode(s)) == s` whenever
//! decoding succeeds.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::admin::{AdminAction, DirectivePattern, ManagerRole};
use crate::ids::{IdError, Name, OuId, PermId, PrincipalId, RoleId, UserId};
use crate::model::{Change, ChangeKind, SodConstraint};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty action")]
    Empty,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("{action}: expected {expected} field(s), found {found}")]
    Arity { action: String, expected: String, found: usize },
    #[error("bad identifier: {0}")]
    Id(#[from] IdError),
    #[error("unknown manager role {0:?}")]
    UnknownRole(String),
    #[error("bad cardinality {0:?}")]
    Cardinality(String),
    #[error("bad option {0:?}")]
    Option(String),
    #[error("not in canonical form")]
    NotCanonical,
}

pub fn encode_change(change: &Change) -> String {
    use Change::*;
    let name = change.kind().as_str();
    let fields: Vec<String> = match change {
        AddUser { user } | DeleteUser { user } => vec![user.to_string()],
        AddRole { role } | DeleteRole { role } => vec![role.to_string()],
        AddPerm { perm, operation, object } => vec![perm.to_string(), operation.to_string(), object.to_string()],
        DeletePerm { perm } => vec![perm.to_string()],
        GrantPermToRole { perm, role } | RevokePermFromRole { perm, role } => vec![perm.to_string(), role.to_string()],
        AssignUserToRoleDirect { user, role } | RevokeUserFromRoleDirect { user, role } => {
            vec![user.to_string(), role.to_string()]
        }
        CreateOu { ou, parent, department } => {
            let mut v = vec![ou.to_string()];
            if let Some(p) = parent {
                v.push(format!("parent={p}"));
            }
            if let Some(d) = department {
                v.push(format!("dept={d}"));
            }
            v
        }
        DeleteOu { ou } => vec![ou.to_string()],
        AssignUserToOu { user, ou } | RemoveUserFromOu { user, ou } => vec![user.to_string(), ou.to_string()],
        MoveUserOu { user, from, to } => vec![user.to_string(), from.to_string(), to.to_string()],
        AssignOuToRole { ou, role } | RevokeOuFromRole { ou, role } => vec![ou.to_string(), role.to_string()],
        AddRoleInheritance { senior, junior } | RemoveRoleInheritance { senior, junior } => {
            vec![senior.to_string(), junior.to_string()]
        }
        AddSsd { constraint } | AddDsd { constraint } => encode_constraint(constraint),
        RemoveSsd { id } | RemoveDsd { id } => vec![id.to_string()],
    };
    join(name, &fields)
}

fn encode_constraint(c: &SodConstraint) -> Vec<String> {
    let mut v = vec![c.id.to_string(), c.cardinality.to_string()];
    v.extend(c.roles.iter().map(|r| r.to_string()));
    v
}

fn join(head: &str, fields: &[String]) -> String {
    let mut s = head.to_string();
    for f in fields {
        s.push(' ');
        s.push_str(f);
    }
    s
}

pub fn encode_pattern(pattern: &DirectivePattern) -> String {
    let fields: Vec<String> = pattern.bindings().map(|(k, v)| format!("{k}={v}")).collect();
    join(pattern.kind().as_str(), &fields)
}

pub fn encode_action(action: &AdminAction) -> String {
    match action {
        AdminAction::Change(c) => encode_change(c),
        AdminAction::AppointManager { principal, role, scope } | AdminAction::RevokeManager { principal, role, scope } => {
            let mut v = vec![principal.to_string(), role.to_string()];
            if let Some(s) = scope {
                v.push(format!("scope={s}"));
            }
            join(action.kind_name(), &v)
        }
        AdminAction::IssueDirective { pattern } => format!("IssueDirective {}", encode_pattern(pattern)),
        AdminAction::RevokeDirective { id } => format!("RevokeDirective {id}"),
    }
}

fn tokens(text: &str) -> Result<Vec<&str>, DecodeError> {
    if text.is_empty() {
        return Err(DecodeError::Empty);
    }
    let toks: Vec<&str> = text.split(' ').collect();
    if toks.iter().any(|t| t.is_empty()) {
        return Err(DecodeError::NotCanonical);
    }
    Ok(toks)
}

fn arity(action: &str, args: &[&str], n: usize) -> Result<(), DecodeError> {
    if args.len() != n {
        return Err(DecodeError::Arity { action: action.to_string(), expected: n.to_string(), found: args.len() });
    }
    Ok(())
}

/// Splits trailing `key=value` options off `args`, in the order given by
/// `keys`; each key may appear at most once.
fn options<'a>(args: &[&'a str], keys: &[&str]) -> Result<Vec<Option<&'a str>>, DecodeError> {
    let mut out = vec![None; keys.len()];
    let mut last = None;
    for a in args {
        let (k, v) = a.split_once('=').ok_or_else(|| DecodeError::Option(a.to_string()))?;
        let idx = keys.iter().position(|x| *x == k).ok_or_else(|| DecodeError::Option(a.to_string()))?;
        if last.is_some_and(|l| idx <= l) {
            return Err(DecodeError::NotCanonical);
        }
        last = Some(idx);
        out[idx] = Some(v);
    }
    Ok(out)
}

fn decode_constraint(action: &str, args: &[&str]) -> Result<SodConstraint, DecodeError> {
    if args.len() < 2 {
        return Err(DecodeError::Arity { action: action.to_string(), expected: "2+".into(), found: args.len() });
    }
    let cardinality = args[1].parse::<usize>().map_err(|_| DecodeError::Cardinality(args[1].to_string()))?;
    if cardinality.to_string() != args[1] {
        return Err(DecodeError::NotCanonical);
    }
    let roles: Vec<RoleId> = args[2..].iter().map(RoleId::new).collect::<Result<_, _>>()?;
    let set: BTreeSet<RoleId> = roles.iter().cloned().collect();
    if set.len() != roles.len() || !roles.windows(2).all(|w| w[0] < w[1]) {
        return Err(DecodeError::NotCanonical);
    }
    Ok(SodConstraint { id: Name::new(args[0])?, roles: set, cardinality })
}

pub fn decode_change(text: &str) -> Result<Change, DecodeError> {
    let toks = tokens(text)?;
    let (head, args) = (toks[0], &toks[1..]);
    let kind = ChangeKind::parse(head).ok_or_else(|| DecodeError::UnknownAction(head.to_string()))?;
    use ChangeKind as K;
    let change = match kind {
        K::AddUser | K::DeleteUser => {
            arity(head, args, 1)?;
            let user = UserId::new(args[0])?;
            if kind == K::AddUser { Change::AddUser { user } } else { Change::DeleteUser { user } }
        }
        K::AddRole | K::DeleteRole => {
            arity(head, args, 1)?;
            let role = RoleId::new(args[0])?;
            if kind == K::AddRole { Change::AddRole { role } } else { Change::DeleteRole { role } }
        }
        K::AddPerm => {
            arity(head, args, 3)?;
            Change::AddPerm { perm: PermId::new(args[0])?, operation: Name::new(args[1])?, object: Name::new(args[2])? }
        }
        K::DeletePerm => {
            arity(head, args, 1)?;
            Change::DeletePerm { perm: PermId::new(args[0])? }
        }
        K::GrantPermToRole | K::RevokePermFromRole => {
            arity(head, args, 2)?;
            let (perm, role) = (PermId::new(args[0])?, RoleId::new(args[1])?);
            if kind == K::GrantPermToRole {
                Change::GrantPermToRole { perm, role }
            } else {
                Change::RevokePermFromRole { perm, role }
            }
        }
        K::AssignUserToRoleDirect | K::RevokeUserFromRoleDirect => {
            arity(head, args, 2)?;
            let (user, role) = (UserId::new(args[0])?, RoleId::new(args[1])?);
            if kind == K::AssignUserToRoleDirect {
                Change::AssignUserToRoleDirect { user, role }
            } else {
                Change::RevokeUserFromRoleDirect { user, role }
            }
        }
        K::CreateOu => {
            if args.is_empty() || args.len() > 3 {
                return Err(DecodeError::Arity { action: head.into(), expected: "1-3".into(), found: args.len() });
            }
            let opts = options(&args[1..], &["parent", "dept"])?;
            Change::CreateOu {
                ou: OuId::new(args[0])?,
                parent: opts[0].map(OuId::new).transpose()?,
                department: opts[1].map(Name::new).transpose()?,
            }
        }
        K::DeleteOu => {
            arity(head, args, 1)?;
            Change::DeleteOu { ou: OuId::new(args[0])? }
        }
        K::AssignUserToOu | K::RemoveUserFromOu => {
            arity(head, args, 2)?;
            let (user, ou) = (UserId::new(args[0])?, OuId::new(args[1])?);
            if kind == K::AssignUserToOu {
                Change::AssignUserToOu { user, ou }
            } else {
                Change::RemoveUserFromOu { user, ou }
            }
        }
        K::MoveUserOu => {
            arity(head, args, 3)?;
            Change::MoveUserOu { user: UserId::new(args[0])?, from: OuId::new(args[1])?, to: OuId::new(args[2])? }
        }
        K::AssignOuToRole | K::RevokeOuFromRole => {
            arity(head, args, 2)?;
            let (ou, role) = (OuId::new(args[0])?, RoleId::new(args[1])?);
            if kind == K::AssignOuToRole {
                Change::AssignOuToRole { ou, role }
            } else {
                Change::RevokeOuFromRole { ou, role }
            }
        }
        K::AddRoleInheritance | K::RemoveRoleInheritance => {
            arity(head, args, 2)?;
            let (senior, junior) = (RoleId::new(args[0])?, RoleId::new(args[1])?);
            if kind == K::AddRoleInheritance {
                Change::AddRoleInheritance { senior, junior }
            } else {
                Change::RemoveRoleInheritance { senior, junior }
            }
        }
        K::AddSsd => Change::AddSsd { constraint: decode_constraint(head, args)? },
        K::AddDsd => Change::AddDsd { constraint: decode_constraint(head, args)? },
        K::RemoveSsd | K::RemoveDsd => {
            arity(head, args, 1)?;
            let id = Name::new(args[0])?;
            if kind == K::RemoveSsd { Change::RemoveSsd { id } } else { Change::RemoveDsd { id } }
        }
    };
    Ok(change)
}

pub fn decode_pattern(text: &str) -> Result<DirectivePattern, DecodeError> {
    let toks = tokens(text)?;
    let kind = ChangeKind::parse(toks[0]).ok_or_else(|| DecodeError::UnknownAction(toks[0].to_string()))?;
    let mut pattern = DirectivePattern::new(kind);
    let mut prev: Option<&str> = None;
    for t in &toks[1..] {
        let (k, v) = t.split_once('=').ok_or_else(|| DecodeError::Option(t.to_string()))?;
        if prev.is_some_and(|p| p >= k) {
            return Err(DecodeError::NotCanonical);
        }
        prev = Some(k);
        pattern = pattern.bind(k, Name::new(v)?).map_err(|_| DecodeError::Option(t.to_string()))?;
    }
    Ok(pattern)
}

fn decode_assignment(head: &str, args: &[&str]) -> Result<(PrincipalId, ManagerRole, Option<Name>), DecodeError> {
    if args.len() < 2 || args.len() > 3 {
        return Err(DecodeError::Arity { action: head.into(), expected: "2-3".into(), found: args.len() });
    }
    let role = ManagerRole::parse(args[1]).ok_or_else(|| DecodeError::UnknownRole(args[1].to_string()))?;
    let opts = options(&args[2..], &["scope"])?;
    Ok((PrincipalId::new(args[0])?, role, opts[0].map(Name::new).transpose()?))
}

pub fn decode_action(text: &str) -> Result<AdminAction, DecodeError> {
    let toks = tokens(text)?;
    let (head, args) = (toks[0], &toks[1..]);
    let action = match head {
        "AppointManager" => {
            let (principal, role, scope) = decode_assignment(head, args)?;
            AdminAction::AppointManager { principal, role, scope }
        }
        "RevokeManager" => {
            let (principal, role, scope) = decode_assignment(head, args)?;
            AdminAction::RevokeManager { principal, role, scope }
        }
        "IssueDirective" => {
            let rest = text.strip_prefix("IssueDirective ").ok_or(DecodeError::Arity {
                action: head.into(),
                expected: "1+".into(),
                found: 0,
            })?;
            AdminAction::IssueDirective { pattern: decode_pattern(rest)? }
        }
        "RevokeDirective" => {
            arity(head, args, 1)?;
            AdminAction::RevokeDirective { id: Name::new(args[0])? }
        }
        _ => AdminAction::Change(decode_change(text)?),
    };
    if encode_action(&action) != text {
        return Err(DecodeError::NotCanonical);
    }
    Ok(action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    #[test]
    fn examples() {
        let a = AdminAction::Change(Change::CreateOu {
            ou: ou("ou.cs.sem1"),
            parent: Some(ou("ou.cs")),
            department: None,
        });
        assert_eq!(encode_action(&a), "CreateOu ou.cs.sem1 parent=ou.cs");
        assert_eq!(decode_action("CreateOu ou.cs.sem1 parent=ou.cs").unwrap(), a);

        let ssd = AdminAction::Change(Change::AddSsd {
            constraint: SodConstraint {
                id: name("ssd1"),
                roles: [role("r.b"), role("r.a")].into_iter().collect(),
                cardinality: 2,
            },
        });
        assert_eq!(encode_action(&ssd), "AddSsd ssd1 2 r.a r.b");
        assert_eq!(decode_action("AddSsd ssd1 2 r.a r.b").unwrap(), ssd);

        let appoint = AdminAction::AppointManager {
            principal: principal("c.cs"),
            role: ManagerRole::ItCoordinator,
            scope: Some(name("CS")),
        };
        assert_eq!(encode_action(&appoint), "AppointManager c.cs ItCoordinator scope=CS");

        let issue = decode_action("IssueDirective GrantPermToRole perm=p.lab role=r.student").unwrap();
        match &issue {
            AdminAction::IssueDirective { pattern } => assert_eq!(pattern.kind(), ChangeKind::GrantPermToRole),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_canonical() {
        assert_eq!(decode_action("AddUser  u.x"), Err(DecodeError::NotCanonical));
        assert_eq!(decode_action("CreateOu ou.x dept=CS parent=ou.cs"), Err(DecodeError::NotCanonical));
        assert_eq!(decode_action("AddSsd s 2 r.b r.a"), Err(DecodeError::NotCanonical));
        assert_eq!(decode_action("AddSsd s 02 r.a r.b"), Err(DecodeError::NotCanonical));
        assert_eq!(decode_action("IssueDirective GrantPermToRole role=r perm=p"), Err(DecodeError::NotCanonical));
        assert!(matches!(decode_action("AddUser"), Err(DecodeError::Arity { .. })));
        assert!(matches!(decode_action("Frobnicate x"), Err(DecodeError::UnknownAction(_))));
        assert!(matches!(decode_action("AppointManager p Boss"), Err(DecodeError::UnknownRole(_))));
        assert_eq!(decode_action(""), Err(DecodeError::Empty));
    }
}
