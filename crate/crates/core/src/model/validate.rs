use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{EntityKind, PolicyState, Relation};
use crate::admin::ManagerRole;
use crate::ids::{Name, OuId, PrincipalId, RoleId, UserId};
use crate::resolver;

/// One broken invariant, naming the witnessing entities.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InvariantViolation {
    /// A cycle in `rh` or in the OU parent relation; one report per
    /// strongly connected component, naming its smallest edge.
    Cycle { relation: Relation, from: String, to: String },
    /// A stored `rh` edge implied by other edges.
    NotReduced { senior: RoleId, junior: RoleId },
    /// A relation row or reference whose endpoint is not a live entity.
    Dangling { relation: Relation, left: String, right: String },
    DepartmentMismatch { ou: OuId, label: Name, inherited: Name },
    SsdViolation { constraint: Name, user: UserId, roles: Vec<RoleId> },
    MalformedConstraint { kind: EntityKind, id: Name, reason: String },
    ManagerSsd { principal: PrincipalId, first: ManagerRole, second: ManagerRole },
    InvalidScope { principal: PrincipalId, role: ManagerRole, scope: Option<Name> },
    TombstoneReuse { kind: EntityKind, id: String },
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use InvariantViolation::*;
        match self {
            Cycle { relation, from, to } => write!(f, "CycleError({relation}, {from}, {to})"),
            NotReduced { senior, junior } => write!(f, "NotReduced(rh, {senior}, {junior})"),
            Dangling { relation, left, right } => write!(f, "Dangling({relation}, {left}, {right})"),
            DepartmentMismatch { ou, label, inherited } => {
                write!(f, "DepartmentMismatch({ou}, {label}, inherits {inherited})")
            }
            SsdViolation { constraint, user, roles } => {
                let roles: Vec<&str> = roles.iter().map(|r| r.as_str()).collect();
                write!(f, "SsdViolation({constraint}, {user}, {})", roles.join(" "))
            }
            MalformedConstraint { kind, id, reason } => write!(f, "MalformedConstraint({kind} {id}: {reason})"),
            ManagerSsd { principal, first, second } => write!(f, "ManagerSsd({principal}, {first}, {second})"),
            InvalidScope { principal, role, scope } => match scope {
                Some(s) => write!(f, "InvalidScope({principal}, {role}, {s})"),
                None => write!(f, "InvalidScope({principal}, {role}, -)"),
            },
            TombstoneReuse { kind, id } => write!(f, "TombstoneReuse({kind}, {id})"),
        }
    }
}

/// Checks every state invariant. Total: never panics, even on states
/// with cycles or dangling rows injected through the snapshot parser.
pub fn validate(state: &PolicyState) -> Vec<InvariantViolation> {
    let mut out = Vec::new();
    dangling(state, &mut out);
    let cyclic = role_cycles(state, &mut out);
    reduction(state, &cyclic, &mut out);
    ou_forest(state, &mut out);
    departments(state, &mut out);
    constraints(state, &mut out);
    managers(state, &mut out);
    tombstones(state, &mut out);
    if out.is_empty() {
        // SSD is only meaningful once the structure is sound.
        ssd(state, &mut out);
    }
    out
}

fn dangling(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    let mut row = |relation, left: &dyn fmt::Display, right: &dyn fmt::Display| {
        out.push(InvariantViolation::Dangling { relation, left: left.to_string(), right: right.to_string() })
    };
    for (u, r) in &s.ua_direct {
        if !s.users.contains(u) || !s.roles.contains(r) {
            row(Relation::UaDirect, u, r);
        }
    }
    for (u, o) in &s.uo {
        if !s.users.contains(u) || !s.ous.contains_key(o) {
            row(Relation::Uo, u, o);
        }
    }
    for (o, r) in &s.or_assign {
        if !s.ous.contains_key(o) || !s.roles.contains(r) {
            row(Relation::OrAssign, o, r);
        }
    }
    for (r, p) in &s.pa {
        if !s.perms.contains_key(p) || !s.roles.contains(r) {
            row(Relation::Pa, p, r);
        }
    }
    for (a, b) in &s.rh {
        if !s.roles.contains(a) || !s.roles.contains(b) {
            row(Relation::Rh, a, b);
        }
    }
    for o in s.ous.values() {
        if let Some(p) = &o.parent {
            if !s.ous.contains_key(p) {
                row(Relation::OuParent, &o.id, p);
            }
        }
    }
}

/// Reports one cycle per non-trivial SCC of `rh` and returns the roles on
/// cycles.
fn role_cycles(s: &PolicyState, out: &mut Vec<InvariantViolation>) -> BTreeSet<RoleId> {
    let nodes: BTreeSet<&RoleId> = s.rh.iter().flat_map(|(a, b)| [a, b]).collect();
    let reach: BTreeMap<&RoleId, BTreeSet<RoleId>> = nodes
        .iter()
        .map(|r| {
            let juniors: Vec<&RoleId> = s.juniors(r).collect();
            (*r, resolver::role_closure(s, juniors))
        })
        .collect();
    let mut cyclic = BTreeSet::new();
    let mut reported: BTreeSet<BTreeSet<RoleId>> = BTreeSet::new();
    for (a, b) in &s.rh {
        // Edge a→b is on a cycle iff b reaches back to a (or a == b).
        if a != b && !reach[b].contains(a) {
            continue;
        }
        let scc: BTreeSet<RoleId> =
            reach[a].iter().filter(|x| reach.get(x).is_some_and(|rx| rx.contains(a))).cloned().collect();
        cyclic.extend(scc.iter().cloned());
        if reported.insert(scc) {
            out.push(InvariantViolation::Cycle { relation: Relation::Rh, from: a.to_string(), to: b.to_string() });
        }
    }
    cyclic
}

fn reduction(s: &PolicyState, cyclic: &BTreeSet<RoleId>, out: &mut Vec<InvariantViolation>) {
    for (a, b) in &s.rh {
        if cyclic.contains(a) || cyclic.contains(b) {
            continue;
        }
        let implied = s.juniors(a).filter(|c| *c != b).any(|c| resolver::role_closure(s, [c]).contains(b));
        if implied {
            out.push(InvariantViolation::NotReduced { senior: a.clone(), junior: b.clone() });
        }
    }
}

fn ou_forest(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    let mut reported: BTreeSet<OuId> = BTreeSet::new();
    for start in s.ous.keys() {
        let mut path: Vec<&OuId> = vec![start];
        let mut cursor = s.ous.get(start).and_then(|o| o.parent.as_ref());
        while let Some(p) = cursor {
            if let Some(i) = path.iter().position(|x| *x == p) {
                let cycle = &path[i..];
                let min = (**cycle.iter().min().expect("non-empty")).clone();
                if reported.insert(min.clone()) {
                    let parent = s.ous[&min].parent.clone().expect("on a cycle");
                    out.push(InvariantViolation::Cycle {
                        relation: Relation::OuParent,
                        from: min.to_string(),
                        to: parent.to_string(),
                    });
                }
                break;
            }
            path.push(p);
            cursor = s.ous.get(p).and_then(|o| o.parent.as_ref());
        }
    }
}

fn departments(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    for o in s.ous.values() {
        let Some(label) = &o.department else { continue };
        let inherited = s.ancestors(&o.id).iter().find_map(|a| s.ous.get(a).and_then(|x| x.department.clone()));
        if let Some(inherited) = inherited {
            if &inherited != label {
                out.push(InvariantViolation::DepartmentMismatch { ou: o.id.clone(), label: label.clone(), inherited });
            }
        }
    }
}

fn constraints(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    for (kind, table) in [(EntityKind::Ssd, &s.ssd), (EntityKind::Dsd, &s.dsd)] {
        for c in table.values() {
            if let Err(reason) = c.well_formed() {
                out.push(InvariantViolation::MalformedConstraint { kind, id: c.id.clone(), reason });
            }
            for r in c.roles.iter().filter(|r| !s.roles.contains(*r)) {
                out.push(InvariantViolation::MalformedConstraint {
                    kind,
                    id: c.id.clone(),
                    reason: format!("unknown role {r}"),
                });
            }
        }
    }
}

fn managers(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    let labels = s.departments();
    let mut held: BTreeMap<&PrincipalId, Vec<ManagerRole>> = BTreeMap::new();
    for a in &s.principals {
        let scope_ok = match (a.role, &a.scope) {
            (ManagerRole::ItCoordinator, Some(d)) => labels.contains(d),
            (ManagerRole::ItCoordinator, None) => false,
            (_, scope) => scope.is_none(),
        };
        if !scope_ok {
            out.push(InvariantViolation::InvalidScope {
                principal: a.principal.clone(),
                role: a.role,
                scope: a.scope.clone(),
            });
        }
        held.entry(&a.principal).or_default().push(a.role);
    }
    if !s.config.manager_ssd_enabled {
        return;
    }
    for (p, roles) in held {
        let distinct: BTreeSet<ManagerRole> = roles.into_iter().collect();
        let distinct: Vec<ManagerRole> = distinct.into_iter().collect();
        'pairs: for (i, first) in distinct.iter().enumerate() {
            for second in &distinct[i + 1..] {
                let clash = *first == ManagerRole::RbacManager
                    || *second == ManagerRole::RbacManager
                    || (first.is_sub_manager() && second.is_sub_manager());
                if clash {
                    out.push(InvariantViolation::ManagerSsd { principal: p.clone(), first: *first, second: *second });
                    break 'pairs;
                }
            }
        }
    }
}

fn tombstones(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    for (kind, id) in &s.tombstones {
        let live = match kind {
            EntityKind::User => s.users.iter().any(|u| u.as_str() == id),
            EntityKind::Role => s.roles.iter().any(|r| r.as_str() == id),
            EntityKind::Perm => s.perms.keys().any(|p| p.as_str() == id),
            EntityKind::Ou => s.ous.keys().any(|o| o.as_str() == id),
            EntityKind::Ssd => s.ssd.keys().any(|c| c.as_str() == id),
            EntityKind::Dsd => s.dsd.keys().any(|c| c.as_str() == id),
            EntityKind::Principal => s.principals.iter().any(|a| a.principal.as_str() == id),
            EntityKind::Directive => s.directives.keys().any(|d| d.as_str() == id),
        };
        if live {
            out.push(InvariantViolation::TombstoneReuse { kind: *kind, id: id.clone() });
        }
    }
}

fn ssd(s: &PolicyState, out: &mut Vec<InvariantViolation>) {
    if s.ssd.is_empty() {
        return;
    }
    for u in &s.users {
        let held = resolver::authorized_roles_unchecked(s, u);
        for c in s.ssd.values() {
            if let Some(roles) = c.violated_by(&held) {
                out.push(InvariantViolation::SsdViolation { constraint: c.id.clone(), user: u.clone(), roles });
            }
        }
    }
}
