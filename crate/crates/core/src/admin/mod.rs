//! Delegated administration.
//!
//! Every mutation is requested by an authenticated principal and checked
//! against a fixed capability matrix, department scopes for IT
//! coordinators, manager separation of duty, and (in directive mode) an
//! open directive from the RBAC manager before it is executed and audited.

mod authorize;
mod engine;
mod execute;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::ids::{Name, PrincipalId};
use crate::model::{Change, ChangeKind, ConstraintError};

pub use authorize::{authorize_admin, DenyReason, Verdict};
pub use engine::{Engine, ExecReport};
pub use execute::{execute, issue_directive, Executed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ManagerRole {
    RbacManager,
    PermissionManager,
    RoleManager,
    OuManager,
    ItCoordinator,
}

impl ManagerRole {
    pub const ALL: [ManagerRole; 5] = [
        ManagerRole::RbacManager,
        ManagerRole::PermissionManager,
        ManagerRole::RoleManager,
        ManagerRole::OuManager,
        ManagerRole::ItCoordinator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ManagerRole::RbacManager => "RbacManager",
            ManagerRole::PermissionManager => "PermissionManager",
            ManagerRole::RoleManager => "RoleManager",
            ManagerRole::OuManager => "OuManager",
            ManagerRole::ItCoordinator => "ItCoordinator",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// The three structural managers working under the RBAC manager.
    pub fn is_sub_manager(self) -> bool {
        matches!(self, ManagerRole::PermissionManager | ManagerRole::RoleManager | ManagerRole::OuManager)
    }

    /// Change variants this role may request. Fixed; not configurable.
    pub fn change_capabilities(self) -> &'static [ChangeKind] {
        use ChangeKind::*;
        match self {
            ManagerRole::RbacManager => &ChangeKind::ALL,
            ManagerRole::PermissionManager => &[AddPerm, DeletePerm],
            ManagerRole::RoleManager => &[
                AddRole,
                DeleteRole,
                GrantPermToRole,
                RevokePermFromRole,
                AssignOuToRole,
                RevokeOuFromRole,
                AddRoleInheritance,
                RemoveRoleInheritance,
                AddSsd,
                RemoveSsd,
                AddDsd,
                RemoveDsd,
            ],
            ManagerRole::OuManager => &[CreateOu, DeleteOu],
            ManagerRole::ItCoordinator => &[AddUser, DeleteUser, AssignUserToOu, RemoveUserFromOu, MoveUserOu],
        }
    }

    /// Whether this role's capability set admits `action`, before scope
    /// and directive checks.
    pub fn permits(self, action: &AdminAction) -> bool {
        match action {
            AdminAction::Change(c) => self.change_capabilities().contains(&c.kind()),
            AdminAction::AppointManager { role, .. } | AdminAction::RevokeManager { role, .. } => match self {
                ManagerRole::RbacManager => true,
                ManagerRole::OuManager => *role == ManagerRole::ItCoordinator,
                _ => false,
            },
            AdminAction::IssueDirective { .. } | AdminAction::RevokeDirective { .. } => {
                self == ManagerRole::RbacManager
            }
        }
    }
}

impl fmt::Display for ManagerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manager role held by one principal. A principal may hold several
/// (subject to manager SSD); coordinators carry their department scope.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AdminAssignment {
    pub principal: PrincipalId,
    pub role: ManagerRole,
    pub scope: Option<Name>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DirectiveStatus {
    Open,
    Consumed,
    Revoked,
}

impl DirectiveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DirectiveStatus::Open => "open",
            DirectiveStatus::Consumed => "consumed",
            DirectiveStatus::Revoked => "revoked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(DirectiveStatus::Open),
            "consumed" => Some(DirectiveStatus::Consumed),
            "revoked" => Some(DirectiveStatus::Revoked),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct PatternError(pub String);

/// One change variant plus optional field bindings; unbound fields match
/// anything.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectivePattern {
    kind: ChangeKind,
    bindings: BTreeMap<&'static str, Name>,
}

impl DirectivePattern {
    pub fn new(kind: ChangeKind) -> Self {
        Self { kind, bindings: BTreeMap::new() }
    }

    /// Binds `field` to `value`. Fails for fields the variant does not have.
    pub fn bind(mut self, field: &str, value: Name) -> Result<Self, PatternError> {
        let Some(key) = self.kind.bindable_fields().iter().find(|f| **f == field) else {
            return Err(PatternError(format!("{} has no bindable field {field:?}", self.kind)));
        };
        if self.bindings.insert(key, value).is_some() {
            return Err(PatternError(format!("field {field:?} bound twice")));
        }
        Ok(self)
    }

    /// A pattern binding every bindable field of `change`.
    pub fn exact(change: &Change) -> Self {
        let kind = change.kind();
        let bindings = kind
            .bindable_fields()
            .iter()
            .filter_map(|f| change.field(f).map(|v| (*f, Name::new(v).expect("fields are identifiers"))))
            .collect();
        Self { kind, bindings }
    }

    pub fn kind(&self) -> ChangeKind {
        self.kind
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&'static str, &Name)> {
        self.bindings.iter().map(|(k, v)| (*k, v))
    }

    pub fn matches(&self, change: &Change) -> bool {
        change.kind() == self.kind && self.bindings.iter().all(|(f, v)| change.field(f) == Some(v.as_str()))
    }
}

/// A single-use instruction from the RBAC manager authorizing one
/// structural change by a sub-manager.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Directive {
    pub id: Name,
    pub issued_by: PrincipalId,
    pub pattern: DirectivePattern,
    pub status: DirectiveStatus,
}

/// Anything an administrative principal can ask the engine to do.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AdminAction {
    Change(Change),
    AppointManager { principal: PrincipalId, role: ManagerRole, scope: Option<Name> },
    RevokeManager { principal: PrincipalId, role: ManagerRole, scope: Option<Name> },
    IssueDirective { pattern: DirectivePattern },
    RevokeDirective { id: Name },
}

impl From<Change> for AdminAction {
    fn from(c: Change) -> Self {
        AdminAction::Change(c)
    }
}

impl AdminAction {
    /// Variant name, used for workload tallies and audit listings.
    pub fn kind_name(&self) -> &'static str {
        match self {
            AdminAction::Change(c) => c.kind().as_str(),
            AdminAction::AppointManager { .. } => "AppointManager",
            AdminAction::RevokeManager { .. } => "RevokeManager",
            AdminAction::IssueDirective { .. } => "IssueDirective",
            AdminAction::RevokeDirective { .. } => "RevokeDirective",
        }
    }

    pub fn as_change(&self) -> Option<&Change> {
        match self {
            AdminAction::Change(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdminError {
    #[error("denied: {0}")]
    Denied(DenyReason),
    #[error("rejected: {0}")]
    Rejected(#[from] ConstraintError),
}

impl AdminError {
    pub fn code(&self) -> &'static str {
        match self {
            AdminError::Denied(r) => r.as_str(),
            AdminError::Rejected(e) => e.code(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;

    #[test]
    fn coordinator_capabilities_never_touch_roles_or_perms() {
        for kind in ManagerRole::ItCoordinator.change_capabilities() {
            assert!(
                matches!(
                    kind,
                    ChangeKind::AddUser
                        | ChangeKind::DeleteUser
                        | ChangeKind::AssignUserToOu
                        | ChangeKind::RemoveUserFromOu
                        | ChangeKind::MoveUserOu
                ),
                "{kind}"
            );
        }
    }

    #[test]
    fn pattern_binding() {
        let grant = Change::GrantPermToRole { perm: perm("p.lab"), role: role("r.student") };
        let p = DirectivePattern::new(ChangeKind::GrantPermToRole).bind("perm", name("p.lab")).unwrap();
        assert!(p.matches(&grant));
        assert!(!p.matches(&Change::GrantPermToRole { perm: perm("p.lms"), role: role("r.student") }));
        assert!(!p.matches(&Change::RevokePermFromRole { perm: perm("p.lab"), role: role("r.student") }));
        assert!(DirectivePattern::new(ChangeKind::AddUser).bind("role", name("x")).is_err());
        assert!(DirectivePattern::exact(&grant).matches(&grant));
        assert_eq!(DirectivePattern::exact(&grant).bindings().count(), 2);
    }

    #[test]
    fn create_ou_pattern_binds_optional_fields() {
        let c = Change::CreateOu { ou: ou("ou.x"), parent: None, department: Some(name("X")) };
        let p = DirectivePattern::exact(&c);
        assert_eq!(p.bindings().map(|(k, _)| k).collect::<Vec<_>>(), ["dept", "ou"]);
        let bound_parent = DirectivePattern::new(ChangeKind::CreateOu).bind("parent", name("ou.cs")).unwrap();
        assert!(!bound_parent.matches(&c));
    }
}
