//! Effective roles and permissions through user → OU → role → permission,
//! plus the role hierarchy; sessions and access decisions on top.
//!
//! Everything here is a pure function of a [`PolicyState`] snapshot.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::ids::{Name, OuId, PermId, RoleId, UserId};
use crate::model::PolicyState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AccessError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("role {role} is not authorized for {user}")]
    NotAuthorizedRole { user: UserId, role: RoleId },
    #[error("DSD constraint {constraint} forbids activating {role} alongside {active:?}")]
    DsdViolation { constraint: Name, role: RoleId, active: Vec<RoleId> },
}

impl AccessError {
    pub fn code(&self) -> &'static str {
        match self {
            AccessError::UnknownUser(_) => "UnknownEntity",
            AccessError::NotAuthorizedRole { .. } => "NotAuthorizedRole",
            AccessError::DsdViolation { .. } => "DsdViolation",
        }
    }
}

fn require_user(state: &PolicyState, user: &UserId) -> Result<(), AccessError> {
    if state.has_user(user) {
        Ok(())
    } else {
        Err(AccessError::UnknownUser(user.clone()))
    }
}

/// OUs whose role assignments apply to `user`: memberships, plus their
/// ancestors when OU role inheritance is on.
pub fn ou_closure(state: &PolicyState, user: &UserId) -> Result<BTreeSet<OuId>, AccessError> {
    require_user(state, user)?;
    Ok(ou_closure_unchecked(state, user))
}

pub(crate) fn ou_closure_unchecked(state: &PolicyState, user: &UserId) -> BTreeSet<OuId> {
    let mut out = BTreeSet::new();
    for ou in state.memberships(user) {
        if out.insert(ou.clone()) && state.config().ou_role_inheritance {
            out.extend(state.ancestors(ou));
        }
    }
    out
}

/// Downward closure of `roots` under the role hierarchy (a senior
/// role carries all of its juniors).
pub fn role_closure<'a>(state: &PolicyState, roots: impl IntoIterator<Item = &'a RoleId>) -> BTreeSet<RoleId> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<RoleId> = roots.into_iter().cloned().collect();
    while let Some(r) = stack.pop() {
        if out.insert(r.clone()) {
            stack.extend(state.juniors(&r).filter(|j| !out.contains(*j)).cloned());
        }
    }
    out
}

pub fn authorized_roles(state: &PolicyState, user: &UserId) -> Result<BTreeSet<RoleId>, AccessError> {
    require_user(state, user)?;
    Ok(authorized_roles_unchecked(state, user))
}

pub(crate) fn authorized_roles_unchecked(state: &PolicyState, user: &UserId) -> BTreeSet<RoleId> {
    let ous = ou_closure_unchecked(state, user);
    let seeds: BTreeSet<RoleId> =
        state.direct_roles(user).chain(ous.iter().flat_map(|ou| state.ou_roles(ou))).cloned().collect();
    role_closure(state, &seeds)
}

pub fn effective_permissions(state: &PolicyState, user: &UserId) -> Result<BTreeSet<PermId>, AccessError> {
    require_user(state, user)?;
    Ok(perms_of_roles(state, &authorized_roles_unchecked(state, user)))
}

/// Permissions reachable from direct user-role assignments alone.
pub fn direct_permissions(state: &PolicyState, user: &UserId) -> Result<BTreeSet<PermId>, AccessError> {
    require_user(state, user)?;
    Ok(perms_of_roles(state, &role_closure(state, state.direct_roles(user))))
}

pub(crate) fn perms_of_roles(state: &PolicyState, roles: &BTreeSet<RoleId>) -> BTreeSet<PermId> {
    roles.iter().flat_map(|r| state.role_perms(r)).cloned().collect()
}

/// One edge of an explanation path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TraceStep {
    /// `ua_direct` row.
    Direct { user: UserId, role: RoleId },
    /// `uo` row.
    Member { user: UserId, ou: OuId },
    /// OU parent link (only meaningful with OU role inheritance on).
    Parent { child: OuId, parent: OuId },
    /// `or_assign` row.
    OuRole { ou: OuId, role: RoleId },
    /// Role activated in the session.
    Activated { user: UserId, role: RoleId },
    /// `rh` row, senior ≥ junior.
    Inherits { senior: RoleId, junior: RoleId },
    /// `pa` row.
    Grants { role: RoleId, perm: PermId },
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceStep::Direct { user, role } => write!(f, "{user}→{role} (direct)"),
            TraceStep::Member { user, ou } => write!(f, "{user}→{ou}"),
            TraceStep::Parent { child, parent } => write!(f, "{child}→{parent}"),
            TraceStep::OuRole { ou, role } => write!(f, "{ou}→{role}"),
            TraceStep::Activated { user, role } => write!(f, "{user}→session[{role}]"),
            TraceStep::Inherits { senior, junior } => write!(f, "{senior}≥{junior}"),
            TraceStep::Grants { role, perm } => write!(f, "{role}→{perm}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyCause {
    NoActiveRoles,
    UnknownPermission,
    NotGranted,
    /// The session's user no longer exists.
    Revoked,
}

impl DenyCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            DenyCause::NoActiveRoles => "no-active-roles",
            DenyCause::UnknownPermission => "unknown-permission",
            DenyCause::NotGranted => "not-granted",
            DenyCause::Revoked => "revoked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub allowed: bool,
    /// Edges used, in order from the user to the permission. Empty on deny.
    pub trace: Vec<TraceStep>,
    pub denial: Option<DenyCause>,
}

impl Decision {
    fn deny(cause: DenyCause) -> Self {
        Self { allowed: false, trace: Vec::new(), denial: Some(cause) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: Name,
    pub user: UserId,
    pub active_roles: BTreeSet<RoleId>,
}

/// Sessions start with no active roles.
pub fn create_session(state: &PolicyState, user: &UserId) -> Result<Session, AccessError> {
    require_user(state, user)?;
    Ok(Session {
        id: Name::new(format!("session.{user}")).expect("derived from a valid id"),
        user: user.clone(),
        active_roles: BTreeSet::new(),
    })
}

pub fn activate_role(state: &PolicyState, session: &Session, role: &RoleId) -> Result<Session, AccessError> {
    require_user(state, &session.user)?;
    if !authorized_roles_unchecked(state, &session.user).contains(role) {
        return Err(AccessError::NotAuthorizedRole { user: session.user.clone(), role: role.clone() });
    }
    let mut next = session.clone();
    next.active_roles.insert(role.clone());
    for c in state.dsd() {
        if c.violated_by(&next.active_roles).is_some() {
            return Err(AccessError::DsdViolation {
                constraint: c.id.clone(),
                role: role.clone(),
                active: session.active_roles.iter().cloned().collect(),
            });
        }
    }
    Ok(next)
}

pub fn drop_role(session: &Session, role: &RoleId) -> Session {
    let mut next = session.clone();
    next.active_roles.remove(role);
    next
}

/// Breadth-first search down the hierarchy from `seeds` for a role granted
/// `perm`; returns the inheritance chain plus the final grant.
fn grant_path(state: &PolicyState, seeds: &BTreeSet<RoleId>, perm: &PermId) -> Option<(RoleId, Vec<TraceStep>)> {
    let mut came_from: BTreeMap<RoleId, Option<RoleId>> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for s in seeds {
        came_from.insert(s.clone(), None);
        queue.push_back(s.clone());
    }
    while let Some(role) = queue.pop_front() {
        if state.role_perms(&role).any(|p| p == perm) {
            let mut steps = vec![TraceStep::Grants { role: role.clone(), perm: perm.clone() }];
            let mut cursor = role;
            while let Some(Some(senior)) = came_from.get(&cursor) {
                steps.push(TraceStep::Inherits { senior: senior.clone(), junior: cursor.clone() });
                cursor = senior.clone();
            }
            steps.reverse();
            return Some((cursor, steps));
        }
        for j in state.juniors(&role) {
            if !came_from.contains_key(j) {
                came_from.insert(j.clone(), Some(role.clone()));
                queue.push_back(j.clone());
            }
        }
    }
    None
}

pub fn check_access(state: &PolicyState, session: &Session, operation: &str, object: &str) -> Decision {
    if !state.has_user(&session.user) {
        return Decision::deny(DenyCause::Revoked);
    }
    let authorized = authorized_roles_unchecked(state, &session.user);
    let active: BTreeSet<RoleId> = session.active_roles.intersection(&authorized).cloned().collect();
    if active.is_empty() {
        return Decision::deny(DenyCause::NoActiveRoles);
    }
    let Some(perm) = state.perm_by_key(operation, object) else {
        return Decision::deny(DenyCause::UnknownPermission);
    };
    match grant_path(state, &active, perm) {
        Some((activated, chain)) => {
            let mut trace = vec![TraceStep::Activated { user: session.user.clone(), role: activated }];
            trace.extend(chain);
            Decision { allowed: true, trace, denial: None }
        }
        None => Decision::deny(DenyCause::NotGranted),
    }
}

/// A path from `user` to one of its authorized roles via direct assignment
/// or OU membership (preferring direct, then the shortest OU chain).
fn authorization_path(state: &PolicyState, user: &UserId, seeds: &BTreeSet<RoleId>) -> Option<Vec<TraceStep>> {
    if let Some(role) = state.direct_roles(user).find(|r| seeds.contains(*r)) {
        return Some(vec![TraceStep::Direct { user: user.clone(), role: role.clone() }]);
    }
    let mut best: Option<Vec<TraceStep>> = None;
    for ou in state.memberships(user) {
        let mut chain = vec![TraceStep::Member { user: user.clone(), ou: ou.clone() }];
        let mut current = ou.clone();
        let mut lineage = vec![ou.clone()];
        if state.config().ou_role_inheritance {
            lineage.extend(state.ancestors(ou));
        }
        for (i, unit) in lineage.iter().enumerate() {
            if i > 0 {
                chain.push(TraceStep::Parent { child: current.clone(), parent: unit.clone() });
                current = unit.clone();
            }
            if let Some(role) = state.ou_roles(unit).find(|r| seeds.contains(*r)) {
                chain.push(TraceStep::OuRole { ou: unit.clone(), role: role.clone() });
                if best.as_ref().is_none_or(|b| chain.len() < b.len()) {
                    best = Some(chain);
                }
                break;
            }
        }
    }
    best
}

/// Explains why `user` holds `perm`, from the user to the permission, or
/// `None` if it does not.
pub fn explain_permission(state: &PolicyState, user: &UserId, perm: &PermId) -> Option<Vec<TraceStep>> {
    if !state.has_user(user) {
        return None;
    }
    let ous = ou_closure_unchecked(state, user);
    let seeds: BTreeSet<RoleId> =
        state.direct_roles(user).chain(ous.iter().flat_map(|ou| state.ou_roles(ou))).cloned().collect();
    let (entry, chain) = grant_path(state, &seeds, perm)?;
    let mut steps = authorization_path(state, user, &BTreeSet::from([entry]))?;
    steps.extend(chain);
    Some(steps)
}

/// Re-checks a trace edge by edge against `state`. `session` is required
/// for traces that start with an activation.
pub fn trace_holds(
    state: &PolicyState,
    user: &UserId,
    session: Option<&Session>,
    trace: &[TraceStep],
    perm: &PermId,
) -> bool {
    #[derive(PartialEq)]
    enum Node<'a> {
        User(&'a UserId),
        Ou(&'a OuId),
        Role(&'a RoleId),
        Perm(&'a PermId),
    }
    let mut at = Node::User(user);
    for step in trace {
        let ok = match (&at, step) {
            (Node::User(u), TraceStep::Direct { user, role }) => {
                *u == user && state.direct_roles(user).any(|r| r == role)
            }
            (Node::User(u), TraceStep::Member { user, ou }) => *u == user && state.memberships(user).any(|o| o == ou),
            (Node::User(u), TraceStep::Activated { user, role }) => {
                *u == user
                    && session.is_some_and(|s| &s.user == user && s.active_roles.contains(role))
                    && authorized_roles_unchecked(state, user).contains(role)
            }
            (Node::Ou(o), TraceStep::Parent { child, parent }) => {
                *o == child
                    && state.config().ou_role_inheritance
                    && state.ou(child).and_then(|c| c.parent.as_ref()) == Some(parent)
            }
            (Node::Ou(o), TraceStep::OuRole { ou, role }) => *o == ou && state.ou_roles(ou).any(|r| r == role),
            (Node::Role(r), TraceStep::Inherits { senior, junior }) => {
                *r == senior && state.juniors(senior).any(|j| j == junior)
            }
            (Node::Role(r), TraceStep::Grants { role, perm }) => *r == role && state.role_perms(role).any(|p| p == perm),
            _ => false,
        };
        if !ok {
            return false;
        }
        at = match step {
            TraceStep::Direct { role, .. }
            | TraceStep::Activated { role, .. }
            | TraceStep::OuRole { role, .. } => Node::Role(role),
            TraceStep::Member { ou, .. } => Node::Ou(ou),
            TraceStep::Parent { parent, .. } => Node::Ou(parent),
            TraceStep::Inherits { junior, .. } => Node::Role(junior),
            TraceStep::Grants { perm, .. } => Node::Perm(perm),
        };
    }
    at == Node::Perm(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{campus, perm, role, user};

    #[test]
    fn ou_closure_walks_parents() {
        let s = campus();
        let got = ou_closure(&s, &user("u.alice")).unwrap();
        let names: Vec<_> = got.iter().map(|o| o.as_str()).collect();
        assert_eq!(names, ["ou.cs", "ou.cs.sem1"]);
        assert!(ou_closure(&s, &user("u.bob")).unwrap().is_empty());
    }

    #[test]
    fn ou_closure_without_inheritance() {
        let mut s = campus();
        s.config.ou_role_inheritance = false;
        let names: Vec<_> = ou_closure(&s, &user("u.alice")).unwrap().into_iter().map(|o| o.to_string()).collect();
        assert_eq!(names, ["ou.cs.sem1"]);
    }

    #[test]
    fn unknown_user_is_an_error() {
        let s = campus();
        assert_eq!(
            authorized_roles(&s, &user("u.ghost")),
            Err(AccessError::UnknownUser(user("u.ghost")))
        );
    }

    #[test]
    fn campus_roles_and_perms() {
        let s = campus();
        assert_eq!(
            authorized_roles(&s, &user("u.alice")).unwrap(),
            BTreeSet::from([role("r.student"), role("r.labuser")])
        );
        assert_eq!(
            authorized_roles(&s, &user("u.bob")).unwrap(),
            BTreeSet::from([role("r.gradstudent"), role("r.student")])
        );
        assert_eq!(
            effective_permissions(&s, &user("u.alice")).unwrap(),
            BTreeSet::from([perm("p.internet"), perm("p.lms"), perm("p.lab")])
        );
        assert_eq!(
            effective_permissions(&s, &user("u.bob")).unwrap(),
            BTreeSet::from([perm("p.internet"), perm("p.lms")])
        );
    }

    #[test]
    fn explanation_replays() {
        let s = campus();
        let why = explain_permission(&s, &user("u.alice"), &perm("p.lms")).unwrap();
        let text: Vec<String> = why.iter().map(|t| t.to_string()).collect();
        assert_eq!(text, ["u.alice→ou.cs.sem1", "ou.cs.sem1→ou.cs", "ou.cs→r.student", "r.student→p.lms"]);
        assert!(trace_holds(&s, &user("u.alice"), None, &why, &perm("p.lms")));

        let why = explain_permission(&s, &user("u.bob"), &perm("p.internet")).unwrap();
        let text: Vec<String> = why.iter().map(|t| t.to_string()).collect();
        assert_eq!(text, ["u.bob→r.gradstudent (direct)", "r.gradstudent≥r.student", "r.student→p.internet"]);
        assert!(explain_permission(&s, &user("u.bob"), &perm("p.lab")).is_none());
    }

    #[test]
    fn session_flow() {
        let s = campus();
        let alice = user("u.alice");
        let sess = create_session(&s, &alice).unwrap();
        assert!(sess.active_roles.is_empty());
        let d = check_access(&s, &sess, "use", "lab-pc");
        assert!(!d.allowed);
        assert_eq!(d.denial, Some(DenyCause::NoActiveRoles));

        let sess = activate_role(&s, &sess, &role("r.labuser")).unwrap();
        let d = check_access(&s, &sess, "use", "lab-pc");
        assert!(d.allowed);
        let text: Vec<String> = d.trace.iter().map(|t| t.to_string()).collect();
        assert_eq!(text, ["u.alice→session[r.labuser]", "r.labuser→p.lab"]);
        assert!(trace_holds(&s, &alice, Some(&sess), &d.trace, &perm("p.lab")));

        let d = check_access(&s, &sess, "read", "lms");
        assert!(!d.allowed);
        assert!(d.trace.is_empty());
        assert_eq!(d.denial, Some(DenyCause::NotGranted));

        assert_eq!(
            activate_role(&s, &sess, &role("r.gradstudent")),
            Err(AccessError::NotAuthorizedRole { user: alice.clone(), role: role("r.gradstudent") })
        );
        let dropped = drop_role(&sess, &role("r.labuser"));
        assert!(dropped.active_roles.is_empty());
    }

    #[test]
    fn inherited_grant_is_traced() {
        let s = campus();
        let bob = user("u.bob");
        let sess = activate_role(&s, &create_session(&s, &bob).unwrap(), &role("r.gradstudent")).unwrap();
        let d = check_access(&s, &sess, "read", "lms");
        assert!(d.allowed);
        let text: Vec<String> = d.trace.iter().map(|t| t.to_string()).collect();
        assert_eq!(text, ["u.bob→session[r.gradstudent]", "r.gradstudent≥r.student", "r.student→p.lms"]);
        assert!(trace_holds(&s, &bob, Some(&sess), &d.trace, &perm("p.lms")));
    }

    #[test]
    fn deleted_user_session_is_revoked() {
        let s = campus();
        let alice = user("u.alice");
        let sess = activate_role(&s, &create_session(&s, &alice).unwrap(), &role("r.labuser")).unwrap();
        let s2 = s.apply(&crate::model::Change::DeleteUser { user: alice }).unwrap();
        let d = check_access(&s2, &sess, "use", "lab-pc");
        assert!(!d.allowed);
        assert_eq!(d.denial, Some(DenyCause::Revoked));
    }
}
