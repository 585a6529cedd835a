use std::collections::BTreeSet;
use std::fmt;

use im::OrdSet;
use thiserror::Error;

use super::{EntityKind, OrgUnit, Permission, PolicyState, Relation, SodConstraint};
use crate::admin::ManagerRole;
use crate::ids::{Name, OuId, PermId, PrincipalId, RoleId, UserId};
use crate::resolver;

/// A primitive mutation of the policy state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Change {
    AddUser { user: UserId },
    DeleteUser { user: UserId },
    AddRole { role: RoleId },
    DeleteRole { role: RoleId },
    AddPerm { perm: PermId, operation: Name, object: Name },
    DeletePerm { perm: PermId },
    GrantPermToRole { perm: PermId, role: RoleId },
    RevokePermFromRole { perm: PermId, role: RoleId },
    AssignUserToRoleDirect { user: UserId, role: RoleId },
    RevokeUserFromRoleDirect { user: UserId, role: RoleId },
    CreateOu { ou: OuId, parent: Option<OuId>, department: Option<Name> },
    DeleteOu { ou: OuId },
    AssignUserToOu { user: UserId, ou: OuId },
    RemoveUserFromOu { user: UserId, ou: OuId },
    MoveUserOu { user: UserId, from: OuId, to: OuId },
    AssignOuToRole { ou: OuId, role: RoleId },
    RevokeOuFromRole { ou: OuId, role: RoleId },
    AddRoleInheritance { senior: RoleId, junior: RoleId },
    RemoveRoleInheritance { senior: RoleId, junior: RoleId },
    AddSsd { constraint: SodConstraint },
    RemoveSsd { id: Name },
    AddDsd { constraint: SodConstraint },
    RemoveDsd { id: Name },
}

/// The variant tag of a [`Change`], used by the capability matrix and by
/// directive patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChangeKind {
    AddUser,
    DeleteUser,
    AddRole,
    DeleteRole,
    AddPerm,
    DeletePerm,
    GrantPermToRole,
    RevokePermFromRole,
    AssignUserToRoleDirect,
    RevokeUserFromRoleDirect,
    CreateOu,
    DeleteOu,
    AssignUserToOu,
    RemoveUserFromOu,
    MoveUserOu,
    AssignOuToRole,
    RevokeOuFromRole,
    AddRoleInheritance,
    RemoveRoleInheritance,
    AddSsd,
    RemoveSsd,
    AddDsd,
    RemoveDsd,
}

impl ChangeKind {
    pub const ALL: [ChangeKind; 23] = [
        ChangeKind::AddUser,
        ChangeKind::DeleteUser,
        ChangeKind::AddRole,
        ChangeKind::DeleteRole,
        ChangeKind::AddPerm,
        ChangeKind::DeletePerm,
        ChangeKind::GrantPermToRole,
        ChangeKind::RevokePermFromRole,
        ChangeKind::AssignUserToRoleDirect,
        ChangeKind::RevokeUserFromRoleDirect,
        ChangeKind::CreateOu,
        ChangeKind::DeleteOu,
        ChangeKind::AssignUserToOu,
        ChangeKind::RemoveUserFromOu,
        ChangeKind::MoveUserOu,
        ChangeKind::AssignOuToRole,
        ChangeKind::RevokeOuFromRole,
        ChangeKind::AddRoleInheritance,
        ChangeKind::RemoveRoleInheritance,
        ChangeKind::AddSsd,
        ChangeKind::RemoveSsd,
        ChangeKind::AddDsd,
        ChangeKind::RemoveDsd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::AddUser => "AddUser",
            ChangeKind::DeleteUser => "DeleteUser",
            ChangeKind::AddRole => "AddRole",
            ChangeKind::DeleteRole => "DeleteRole",
            ChangeKind::AddPerm => "AddPerm",
            ChangeKind::DeletePerm => "DeletePerm",
            ChangeKind::GrantPermToRole => "GrantPermToRole",
            ChangeKind::RevokePermFromRole => "RevokePermFromRole",
            ChangeKind::AssignUserToRoleDirect => "AssignUserToRoleDirect",
            ChangeKind::RevokeUserFromRoleDirect => "RevokeUserFromRoleDirect",
            ChangeKind::CreateOu => "CreateOu",
            ChangeKind::DeleteOu => "DeleteOu",
            ChangeKind::AssignUserToOu => "AssignUserToOu",
            ChangeKind::RemoveUserFromOu => "RemoveUserFromOu",
            ChangeKind::MoveUserOu => "MoveUserOu",
            ChangeKind::AssignOuToRole => "AssignOuToRole",
            ChangeKind::RevokeOuFromRole => "RevokeOuFromRole",
            ChangeKind::AddRoleInheritance => "AddRoleInheritance",
            ChangeKind::RemoveRoleInheritance => "RemoveRoleInheritance",
            ChangeKind::AddSsd => "AddSsd",
            ChangeKind::RemoveSsd => "RemoveSsd",
            ChangeKind::AddDsd => "AddDsd",
            ChangeKind::RemoveDsd => "RemoveDsd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Field names a directive pattern may bind for this variant.
    pub fn bindable_fields(self) -> &'static [&'static str] {
        match self {
            ChangeKind::AddUser | ChangeKind::DeleteUser => &["user"],
            ChangeKind::AddRole | ChangeKind::DeleteRole => &["role"],
            ChangeKind::AddPerm => &["perm", "operation", "object"],
            ChangeKind::DeletePerm => &["perm"],
            ChangeKind::GrantPermToRole | ChangeKind::RevokePermFromRole => &["perm", "role"],
            ChangeKind::AssignUserToRoleDirect | ChangeKind::RevokeUserFromRoleDirect => &["user", "role"],
            ChangeKind::CreateOu => &["ou", "parent", "dept"],
            ChangeKind::DeleteOu => &["ou"],
            ChangeKind::AssignUserToOu | ChangeKind::RemoveUserFromOu => &["user", "ou"],
            ChangeKind::MoveUserOu => &["user", "from", "to"],
            ChangeKind::AssignOuToRole | ChangeKind::RevokeOuFromRole => &["ou", "role"],
            ChangeKind::AddRoleInheritance | ChangeKind::RemoveRoleInheritance => &["senior", "junior"],
            ChangeKind::AddSsd | ChangeKind::RemoveSsd | ChangeKind::AddDsd | ChangeKind::RemoveDsd => &["id"],
        }
    }
}

impl fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Change {
    pub fn kind(&self) -> ChangeKind {
        match self {
            Change::AddUser { .. } => ChangeKind::AddUser,
            Change::DeleteUser { .. } => ChangeKind::DeleteUser,
            Change::AddRole { .. } => ChangeKind::AddRole,
            Change::DeleteRole { .. } => ChangeKind::DeleteRole,
            Change::AddPerm { .. } => ChangeKind::AddPerm,
            Change::DeletePerm { .. } => ChangeKind::DeletePerm,
            Change::GrantPermToRole { .. } => ChangeKind::GrantPermToRole,
            Change::RevokePermFromRole { .. } => ChangeKind::RevokePermFromRole,
            Change::AssignUserToRoleDirect { .. } => ChangeKind::AssignUserToRoleDirect,
            Change::RevokeUserFromRoleDirect { .. } => ChangeKind::RevokeUserFromRoleDirect,
            Change::CreateOu { .. } => ChangeKind::CreateOu,
            Change::DeleteOu { .. } => ChangeKind::DeleteOu,
            Change::AssignUserToOu { .. } => ChangeKind::AssignUserToOu,
            Change::RemoveUserFromOu { .. } => ChangeKind::RemoveUserFromOu,
            Change::MoveUserOu { .. } => ChangeKind::MoveUserOu,
            Change::AssignOuToRole { .. } => ChangeKind::AssignOuToRole,
            Change::RevokeOuFromRole { .. } => ChangeKind::RevokeOuFromRole,
            Change::AddRoleInheritance { .. } => ChangeKind::AddRoleInheritance,
            Change::RemoveRoleInheritance { .. } => ChangeKind::RemoveRoleInheritance,
            Change::AddSsd { .. } => ChangeKind::AddSsd,
            Change::RemoveSsd { .. } => ChangeKind::RemoveSsd,
            Change::AddDsd { .. } => ChangeKind::AddDsd,
            Change::RemoveDsd { .. } => ChangeKind::RemoveDsd,
        }
    }

    /// The value of a bindable field, as matched by directive patterns.
    /// Absent optional fields yield `None`.
    pub fn field(&self, name: &str) -> Option<&str> {
        let v: Option<&str> = match (self, name) {
            (Change::AddUser { user } | Change::DeleteUser { user }, "user") => Some(user.as_str()),
            (Change::AddRole { role } | Change::DeleteRole { role }, "role") => Some(role.as_str()),
            (Change::AddPerm { perm, .. } | Change::DeletePerm { perm }, "perm") => Some(perm.as_str()),
            (Change::AddPerm { operation, .. }, "operation") => Some(operation.as_str()),
            (Change::AddPerm { object, .. }, "object") => Some(object.as_str()),
            (Change::GrantPermToRole { perm, .. } | Change::RevokePermFromRole { perm, .. }, "perm") => {
                Some(perm.as_str())
            }
            (Change::GrantPermToRole { role, .. } | Change::RevokePermFromRole { role, .. }, "role") => {
                Some(role.as_str())
            }
            (
                Change::AssignUserToRoleDirect { user, .. } | Change::RevokeUserFromRoleDirect { user, .. },
                "user",
            ) => Some(user.as_str()),
            (
                Change::AssignUserToRoleDirect { role, .. } | Change::RevokeUserFromRoleDirect { role, .. },
                "role",
            ) => Some(role.as_str()),
            (Change::CreateOu { ou, .. } | Change::DeleteOu { ou }, "ou") => Some(ou.as_str()),
            (Change::CreateOu { parent, .. }, "parent") => parent.as_ref().map(|p| p.as_str()),
            (Change::CreateOu { department, .. }, "dept") => department.as_ref().map(|d| d.as_str()),
            (Change::AssignUserToOu { user, .. } | Change::RemoveUserFromOu { user, .. }, "user") => {
                Some(user.as_str())
            }
            (Change::AssignUserToOu { ou, .. } | Change::RemoveUserFromOu { ou, .. }, "ou") => Some(ou.as_str()),
            (Change::MoveUserOu { user, .. }, "user") => Some(user.as_str()),
            (Change::MoveUserOu { from, .. }, "from") => Some(from.as_str()),
            (Change::MoveUserOu { to, .. }, "to") => Some(to.as_str()),
            (Change::AssignOuToRole { ou, .. } | Change::RevokeOuFromRole { ou, .. }, "ou") => Some(ou.as_str()),
            (Change::AssignOuToRole { role, .. } | Change::RevokeOuFromRole { role, .. }, "role") => {
                Some(role.as_str())
            }
            (
                Change::AddRoleInheritance { senior, .. } | Change::RemoveRoleInheritance { senior, .. },
                "senior",
            ) => Some(senior.as_str()),
            (
                Change::AddRoleInheritance { junior, .. } | Change::RemoveRoleInheritance { junior, .. },
                "junior",
            ) => Some(junior.as_str()),
            (Change::AddSsd { constraint } | Change::AddDsd { constraint }, "id") => Some(constraint.id.as_str()),
            (Change::RemoveSsd { id } | Change::RemoveDsd { id }, "id") => Some(id.as_str()),
            _ => None,
        };
        v
    }

    /// OUs this change names explicitly (for scope checks).
    pub fn referenced_ous(&self) -> Vec<&OuId> {
        match self {
            Change::CreateOu { ou, parent, .. } => std::iter::once(ou).chain(parent.as_ref()).collect(),
            Change::DeleteOu { ou }
            | Change::AssignUserToOu { ou, .. }
            | Change::RemoveUserFromOu { ou, .. }
            | Change::AssignOuToRole { ou, .. }
            | Change::RevokeOuFromRole { ou, .. } => vec![ou],
            Change::MoveUserOu { from, to, .. } => vec![from, to],
            _ => Vec::new(),
        }
    }
}

/// Why a change (or admin meta-action) was refused by the state's
/// invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("unknown {kind} {id:?}")]
    UnknownEntity { kind: EntityKind, id: String },
    #[error("{kind} {id:?} already exists")]
    DuplicateEntity { kind: EntityKind, id: String },
    #[error("no {relation} row ({left}, {right})")]
    UnknownRelation { relation: Relation, left: String, right: String },
    #[error("{relation} row ({left}, {right}) already present")]
    DuplicateRelation { relation: Relation, left: String, right: String },
    #[error("permission ({operation}, {object}) already exists as {existing}")]
    DuplicatePermissionKey { operation: Name, object: Name, existing: PermId },
    #[error("SSD constraint {constraint} violated for {user}: holds {roles:?}")]
    SsdViolation { constraint: Name, user: UserId, roles: Vec<RoleId> },
    #[error("manager separation of duty: {principal} already holds {held}, cannot also hold {requested}")]
    ManagerSsdViolation { principal: PrincipalId, held: ManagerRole, requested: ManagerRole },
    #[error("{relation} edge ({from}, {to}) would create a cycle")]
    CycleError { relation: Relation, from: String, to: String },
    #[error("OU {ou} is not empty ({detail})")]
    NonEmptyOu { ou: OuId, detail: String },
    #[error("{kind} identifier {id:?} was deleted earlier and cannot be reused")]
    TombstoneReuse { kind: EntityKind, id: String },
    #[error("OU {ou} labeled {label} but inherits department {inherited}")]
    DepartmentMismatch { ou: OuId, label: Name, inherited: Name },
    #[error("constraint {id} malformed: {reason}")]
    InvalidConstraint { id: Name, reason: String },
    #[error("department scope {scope:?} is invalid: {reason}")]
    InvalidScope { scope: Option<Name>, reason: String },
    #[error("department {department} is the scope of coordinator {principal}")]
    ScopeInUse { department: Name, principal: PrincipalId },
    #[error("cannot revoke the last RBAC manager {principal}")]
    LastRbacManager { principal: PrincipalId },
    #[error("directive {id} is {status}, not open")]
    DirectiveNotOpen { id: Name, status: &'static str },
    #[error("invalid directive pattern: {0}")]
    InvalidPattern(String),
}

impl ConstraintError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ConstraintError::UnknownEntity { .. } | ConstraintError::UnknownRelation { .. } => "UnknownEntity",
            ConstraintError::DuplicateEntity { .. }
            | ConstraintError::DuplicateRelation { .. }
            | ConstraintError::DuplicatePermissionKey { .. } => "DuplicateEntity",
            ConstraintError::SsdViolation { .. } | ConstraintError::ManagerSsdViolation { .. } => "SsdViolation",
            ConstraintError::CycleError { .. } => "CycleError",
            ConstraintError::NonEmptyOu { .. } => "NonEmptyOu",
            ConstraintError::TombstoneReuse { .. } => "TombstoneReuse",
            ConstraintError::DepartmentMismatch { .. } => "DepartmentMismatch",
            ConstraintError::InvalidConstraint { .. } => "InvalidConstraint",
            ConstraintError::InvalidScope { .. } => "InvalidScope",
            ConstraintError::ScopeInUse { .. } => "ScopeInUse",
            ConstraintError::LastRbacManager { .. } => "LastRbacManager",
            ConstraintError::DirectiveNotOpen { .. } => "DirectiveNotOpen",
            ConstraintError::InvalidPattern(_) => "InvalidPattern",
        }
    }
}

/// Removes every element failing `keep`, preserving structural sharing.
fn retain<T: Ord + Clone>(set: &mut OrdSet<T>, keep: impl Fn(&T) -> bool) {
    let drop: Vec<T> = set.iter().filter(|x| !keep(x)).cloned().collect();
    for x in drop {
        set.remove(&x);
    }
}

fn unknown(kind: EntityKind, id: impl fmt::Display) -> ConstraintError {
    ConstraintError::UnknownEntity { kind, id: id.to_string() }
}

fn duplicate(kind: EntityKind, id: impl fmt::Display) -> ConstraintError {
    ConstraintError::DuplicateEntity { kind, id: id.to_string() }
}

fn no_row(relation: Relation, left: impl fmt::Display, right: impl fmt::Display) -> ConstraintError {
    ConstraintError::UnknownRelation { relation, left: left.to_string(), right: right.to_string() }
}

fn dup_row(relation: Relation, left: impl fmt::Display, right: impl fmt::Display) -> ConstraintError {
    ConstraintError::DuplicateRelation { relation, left: left.to_string(), right: right.to_string() }
}

/// Users whose authorized roles may have grown and must be re-checked
/// against SSD.
enum SsdScope {
    Nobody,
    Users(BTreeSet<UserId>),
    Everyone,
}

/// Applies `change` to `state`, returning the new state. `state` itself is
/// never modified.
pub fn apply_change(state: &PolicyState, change: &Change) -> Result<PolicyState, ConstraintError> {
    let mut next = state.clone();
    let scope = next.mutate(change)?;
    next.check_ssd(scope)?;
    Ok(next)
}

impl PolicyState {
    /// Convenience wrapper around [`apply_change`].
    pub fn apply(&self, change: &Change) -> Result<PolicyState, ConstraintError> {
        apply_change(self, change)
    }

    fn require_user(&self, user: &UserId) -> Result<(), ConstraintError> {
        if self.users.contains(user) { Ok(()) } else { Err(unknown(EntityKind::User, user)) }
    }

    fn require_role(&self, role: &RoleId) -> Result<(), ConstraintError> {
        if self.roles.contains(role) { Ok(()) } else { Err(unknown(EntityKind::Role, role)) }
    }

    fn require_perm(&self, perm: &PermId) -> Result<(), ConstraintError> {
        if self.perms.contains_key(perm) { Ok(()) } else { Err(unknown(EntityKind::Perm, perm)) }
    }

    fn require_ou(&self, ou: &OuId) -> Result<(), ConstraintError> {
        if self.ous.contains_key(ou) { Ok(()) } else { Err(unknown(EntityKind::Ou, ou)) }
    }

    fn require_fresh(&self, kind: EntityKind, id: &str, exists: bool) -> Result<(), ConstraintError> {
        if exists {
            return Err(duplicate(kind, id));
        }
        if self.is_tombstoned(kind, id) {
            return Err(ConstraintError::TombstoneReuse { kind, id: id.to_string() });
        }
        Ok(())
    }

    fn tombstone(&mut self, kind: EntityKind, id: &str) {
        self.tombstones.insert((kind, id.to_string()));
    }

    /// True if `junior` is reachable from `senior` through `rh` (reflexive).
    pub(crate) fn role_dominates(&self, senior: &RoleId, junior: &RoleId) -> bool {
        resolver::role_closure(self, std::iter::once(senior)).contains(junior)
    }

    fn mutate(&mut self, change: &Change) -> Result<SsdScope, ConstraintError> {
        use Change::*;
        match change {
            AddUser { user } => {
                self.require_fresh(EntityKind::User, user.as_str(), self.users.contains(user))?;
                self.users.insert(user.clone());
                Ok(SsdScope::Nobody)
            }
            DeleteUser { user } => {
                self.require_user(user)?;
                let roles: Vec<RoleId> = self.direct_roles(user).cloned().collect();
                for r in roles {
                    self.ua_direct.remove(&(user.clone(), r));
                }
                let ous: Vec<OuId> = self.memberships(user).cloned().collect();
                for ou in ous {
                    self.uo.remove(&(user.clone(), ou.clone()));
                    self.ou_members.remove(&(ou, user.clone()));
                }
                self.users.remove(user);
                self.tombstone(EntityKind::User, user.as_str());
                Ok(SsdScope::Nobody)
            }
            AddRole { role } => {
                self.require_fresh(EntityKind::Role, role.as_str(), self.roles.contains(role))?;
                self.roles.insert(role.clone());
                Ok(SsdScope::Nobody)
            }
            DeleteRole { role } => {
                self.require_role(role)?;
                retain(&mut self.ua_direct, |(_, r)| r != role);
                retain(&mut self.or_assign, |(_, r)| r != role);
                retain(&mut self.pa, |(r, _)| r != role);
                retain(&mut self.rh, |(s, j)| s != role && j != role);
                for table in [&mut self.ssd, &mut self.dsd] {
                    let touched: Vec<Name> =
                        table.values().filter(|c| c.roles.contains(role)).map(|c| c.id.clone()).collect();
                    for id in touched {
                        let mut c = table.remove(&id).expect("present");
                        c.roles.remove(role);
                        // A constraint that can no longer be violated is dropped.
                        if c.roles.len() >= c.cardinality.max(2) {
                            table.insert(id, c);
                        }
                    }
                }
                self.roles.remove(role);
                self.tombstone(EntityKind::Role, role.as_str());
                Ok(SsdScope::Nobody)
            }
            AddPerm { perm, operation, object } => {
                self.require_fresh(EntityKind::Perm, perm.as_str(), self.perms.contains_key(perm))?;
                let key = (operation.clone(), object.clone());
                if let Some(existing) = self.perm_keys.get(&key) {
                    return Err(ConstraintError::DuplicatePermissionKey {
                        operation: operation.clone(),
                        object: object.clone(),
                        existing: existing.clone(),
                    });
                }
                self.perm_keys.insert(key, perm.clone());
                self.perms.insert(
                    perm.clone(),
                    Permission { id: perm.clone(), operation: operation.clone(), object: object.clone() },
                );
                Ok(SsdScope::Nobody)
            }
            DeletePerm { perm } => {
                self.require_perm(perm)?;
                retain(&mut self.pa, |(_, p)| p != perm);
                let p = self.perms.remove(perm).expect("checked");
                self.perm_keys.remove(&(p.operation, p.object));
                self.tombstone(EntityKind::Perm, perm.as_str());
                Ok(SsdScope::Nobody)
            }
            GrantPermToRole { perm, role } => {
                self.require_perm(perm)?;
                self.require_role(role)?;
                if self.pa.insert((role.clone(), perm.clone())).is_some() {
                    return Err(dup_row(Relation::Pa, perm, role));
                }
                Ok(SsdScope::Nobody)
            }
            RevokePermFromRole { perm, role } => {
                self.require_perm(perm)?;
                self.require_role(role)?;
                if self.pa.remove(&(role.clone(), perm.clone())).is_none() {
                    return Err(no_row(Relation::Pa, perm, role));
                }
                Ok(SsdScope::Nobody)
            }
            AssignUserToRoleDirect { user, role } => {
                self.require_user(user)?;
                self.require_role(role)?;
                if self.ua_direct.insert((user.clone(), role.clone())).is_some() {
                    return Err(dup_row(Relation::UaDirect, user, role));
                }
                Ok(SsdScope::Users(BTreeSet::from([user.clone()])))
            }
            RevokeUserFromRoleDirect { user, role } => {
                self.require_user(user)?;
                self.require_role(role)?;
                if self.ua_direct.remove(&(user.clone(), role.clone())).is_none() {
                    return Err(no_row(Relation::UaDirect, user, role));
                }
                Ok(SsdScope::Nobody)
            }
            CreateOu { ou, parent, department } => {
                self.require_fresh(EntityKind::Ou, ou.as_str(), self.ous.contains_key(ou))?;
                if let Some(p) = parent {
                    self.require_ou(p)?;
                    if let (Some(label), Some(inherited)) = (department, self.department_of(p)) {
                        if label != inherited {
                            return Err(ConstraintError::DepartmentMismatch {
                                ou: ou.clone(),
                                label: label.clone(),
                                inherited: inherited.clone(),
                            });
                        }
                    }
                    self.ou_children.insert((p.clone(), ou.clone()));
                }
                self.ous.insert(
                    ou.clone(),
                    OrgUnit { id: ou.clone(), parent: parent.clone(), department: department.clone() },
                );
                Ok(SsdScope::Nobody)
            }
            DeleteOu { ou } => {
                self.require_ou(ou)?;
                if let Some(child) = self.children(ou).next() {
                    return Err(ConstraintError::NonEmptyOu { ou: ou.clone(), detail: format!("child OU {child}") });
                }
                if let Some(member) = self.members(ou).next() {
                    return Err(ConstraintError::NonEmptyOu { ou: ou.clone(), detail: format!("member {member}") });
                }
                let unit = self.ous.get(ou).cloned().expect("checked");
                if let Some(label) = &unit.department {
                    let still_labeled =
                        self.ous.values().any(|o| o.id != *ou && o.department.as_ref() == Some(label));
                    if !still_labeled {
                        if let Some(a) = self
                            .principals
                            .iter()
                            .find(|a| a.role == ManagerRole::ItCoordinator && a.scope.as_ref() == Some(label))
                        {
                            return Err(ConstraintError::ScopeInUse {
                                department: label.clone(),
                                principal: a.principal.clone(),
                            });
                        }
                    }
                }
                let roles: Vec<RoleId> = self.ou_roles(ou).cloned().collect();
                for r in roles {
                    self.or_assign.remove(&(ou.clone(), r));
                }
                if let Some(p) = &unit.parent {
                    self.ou_children.remove(&(p.clone(), ou.clone()));
                }
                self.ous.remove(ou);
                self.tombstone(EntityKind::Ou, ou.as_str());
                Ok(SsdScope::Nobody)
            }
            AssignUserToOu { user, ou } => {
                self.require_user(user)?;
                self.require_ou(ou)?;
                if self.uo.insert((user.clone(), ou.clone())).is_some() {
                    return Err(dup_row(Relation::Uo, user, ou));
                }
                self.ou_members.insert((ou.clone(), user.clone()));
                Ok(SsdScope::Users(BTreeSet::from([user.clone()])))
            }
            RemoveUserFromOu { user, ou } => {
                self.require_user(user)?;
                self.require_ou(ou)?;
                if self.uo.remove(&(user.clone(), ou.clone())).is_none() {
                    return Err(no_row(Relation::Uo, user, ou));
                }
                self.ou_members.remove(&(ou.clone(), user.clone()));
                Ok(SsdScope::Nobody)
            }
            MoveUserOu { user, from, to } => {
                self.require_user(user)?;
                self.require_ou(from)?;
                self.require_ou(to)?;
                if !self.uo.contains(&(user.clone(), from.clone())) {
                    return Err(no_row(Relation::Uo, user, from));
                }
                if self.uo.contains(&(user.clone(), to.clone())) {
                    return Err(dup_row(Relation::Uo, user, to));
                }
                self.uo.remove(&(user.clone(), from.clone()));
                self.ou_members.remove(&(from.clone(), user.clone()));
                self.uo.insert((user.clone(), to.clone()));
                self.ou_members.insert((to.clone(), user.clone()));
                Ok(SsdScope::Users(BTreeSet::from([user.clone()])))
            }
            AssignOuToRole { ou, role } => {
                self.require_ou(ou)?;
                self.require_role(role)?;
                if self.or_assign.insert((ou.clone(), role.clone())).is_some() {
                    return Err(dup_row(Relation::OrAssign, ou, role));
                }
                if self.ssd.is_empty() {
                    return Ok(SsdScope::Nobody);
                }
                let affected_ous =
                    if self.config.ou_role_inheritance { self.subtree(ou) } else { BTreeSet::from([ou.clone()]) };
                let users = affected_ous.iter().flat_map(|o| self.members(o).cloned().collect::<Vec<_>>()).collect();
                Ok(SsdScope::Users(users))
            }
            RevokeOuFromRole { ou, role } => {
                self.require_ou(ou)?;
                self.require_role(role)?;
                if self.or_assign.remove(&(ou.clone(), role.clone())).is_none() {
                    return Err(no_row(Relation::OrAssign, ou, role));
                }
                Ok(SsdScope::Nobody)
            }
            AddRoleInheritance { senior, junior } => {
                self.require_role(senior)?;
                self.require_role(junior)?;
                if senior == junior || self.role_dominates(junior, senior) {
                    return Err(ConstraintError::CycleError {
                        relation: Relation::Rh,
                        from: senior.to_string(),
                        to: junior.to_string(),
                    });
                }
                if self.role_dominates(senior, junior) {
                    return Err(dup_row(Relation::Rh, senior, junior));
                }
                self.insert_reduced_edge(senior, junior);
                Ok(SsdScope::Everyone)
            }
            RemoveRoleInheritance { senior, junior } => {
                self.require_role(senior)?;
                self.require_role(junior)?;
                if self.rh.remove(&(senior.clone(), junior.clone())).is_none() {
                    return Err(no_row(Relation::Rh, senior, junior));
                }
                Ok(SsdScope::Nobody)
            }
            AddSsd { constraint } => {
                self.add_constraint(EntityKind::Ssd, constraint)?;
                Ok(SsdScope::Everyone)
            }
            AddDsd { constraint } => {
                self.add_constraint(EntityKind::Dsd, constraint)?;
                Ok(SsdScope::Nobody)
            }
            RemoveSsd { id } => {
                self.ssd.remove(id).ok_or_else(|| unknown(EntityKind::Ssd, id))?;
                Ok(SsdScope::Nobody)
            }
            RemoveDsd { id } => {
                self.dsd.remove(id).ok_or_else(|| unknown(EntityKind::Dsd, id))?;
                Ok(SsdScope::Nobody)
            }
        }
    }

    fn add_constraint(&mut self, kind: EntityKind, constraint: &SodConstraint) -> Result<(), ConstraintError> {
        let table = if kind == EntityKind::Ssd { &self.ssd } else { &self.dsd };
        if table.contains_key(&constraint.id) {
            return Err(duplicate(kind, &constraint.id));
        }
        constraint
            .well_formed()
            .map_err(|reason| ConstraintError::InvalidConstraint { id: constraint.id.clone(), reason })?;
        for r in &constraint.roles {
            self.require_role(r)?;
        }
        let table = if kind == EntityKind::Ssd { &mut self.ssd } else { &mut self.dsd };
        table.insert(constraint.id.clone(), constraint.clone());
        Ok(())
    }

    /// Inserts senior→junior and drops every stored edge the new one makes
    /// redundant, keeping `rh` a transitive reduction.
    fn insert_reduced_edge(&mut self, senior: &RoleId, junior: &RoleId) {
        let mut above: BTreeSet<RoleId> = BTreeSet::from([senior.clone()]);
        let mut stack = vec![senior.clone()];
        while let Some(r) = stack.pop() {
            for s in self.seniors(&r).cloned().collect::<Vec<_>>() {
                if above.insert(s.clone()) {
                    stack.push(s);
                }
            }
        }
        let below = resolver::role_closure(self, std::iter::once(junior));
        retain(&mut self.rh, |(s, j)| !(above.contains(s) && below.contains(j)));
        self.rh.insert((senior.clone(), junior.clone()));
    }

    fn check_ssd(&self, scope: SsdScope) -> Result<(), ConstraintError> {
        if self.ssd.is_empty() {
            return Ok(());
        }
        let users: Box<dyn Iterator<Item = &UserId>> = match &scope {
            SsdScope::Nobody => return Ok(()),
            SsdScope::Users(users) => Box::new(users.iter()),
            SsdScope::Everyone => Box::new(self.users.iter()),
        };
        for user in users {
            let held = resolver::authorized_roles_unchecked(self, user);
            for c in self.ssd.values() {
                if let Some(roles) = c.violated_by(&held) {
                    return Err(ConstraintError::SsdViolation {
                        constraint: c.id.clone(),
                        user: user.clone(),
                        roles,
                    });
                }
            }
        }
        Ok(())
    }
}
