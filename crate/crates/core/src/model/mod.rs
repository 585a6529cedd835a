//! The authorization universe and its constraint-checked mutations.
//!
//! [`PolicyState`] is an immutable value. Every mutation goes through
//! [`apply_change`], which returns a fresh state with all invariants
//! re-established or a [`ConstraintError`] leaving the input untouched.
//! Collections are persistent (`im`) so cloning a state with tens of
//! thousands of rows is O(1).

mod change;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use im::{OrdMap, OrdSet};

use crate::admin::{AdminAssignment, Directive, ManagerRole};
use crate::ids::{Bottom, Name, OuId, PermId, PrincipalId, RoleId, UserId};

pub use change::{apply_change, Change, ChangeKind, ConstraintError};
pub use validate::{validate, InvariantViolation};

/// An atomic grantable right: an operation on an object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Permission {
    pub id: PermId,
    pub operation: Name,
    pub object: Name,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrgUnit {
    pub id: OuId,
    pub parent: Option<OuId>,
    /// Department scope label; set on subtree roots and inherited downward.
    pub department: Option<Name>,
}

/// A separation-of-duty constraint: at most `cardinality - 1` roles of
/// `roles` may be held (SSD) or active (DSD) at once.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SodConstraint {
    pub id: Name,
    pub roles: BTreeSet<RoleId>,
    pub cardinality: usize,
}

impl SodConstraint {
    /// Roles of this constraint present in `held`, if there are at least
    /// `cardinality` of them.
    pub fn violated_by<'a, I>(&self, held: I) -> Option<Vec<RoleId>>
    where
        I: IntoIterator<Item = &'a RoleId>,
    {
        let hits: Vec<RoleId> = held.into_iter().filter(|r| self.roles.contains(*r)).cloned().collect();
        (hits.len() >= self.cardinality).then_some(hits)
    }

    pub(crate) fn well_formed(&self) -> Result<(), String> {
        if self.roles.len() < 2 {
            return Err(format!("role set has {} member(s), need at least 2", self.roles.len()));
        }
        if self.cardinality < 2 || self.cardinality > self.roles.len() {
            return Err(format!(
                "cardinality {} outside 2..={}",
                self.cardinality,
                self.roles.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EngineConfig {
    /// Roles assigned to an OU also apply to members of its descendants.
    pub ou_role_inheritance: bool,
    /// Sub-managers need an open RBAC-manager directive for every change.
    pub directive_mode: bool,
    /// Pairwise exclusion among the three sub-manager roles; RBAC manager
    /// exclusive of everything.
    pub manager_ssd_enabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { ou_role_inheritance: true, directive_mode: true, manager_ssd_enabled: true }
    }
}

/// Entity classes whose identifiers are tombstoned on deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    User,
    Role,
    Perm,
    Ou,
    Ssd,
    Dsd,
    Principal,
    Directive,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Role => "role",
            EntityKind::Perm => "perm",
            EntityKind::Ou => "ou",
            EntityKind::Ssd => "ssd",
            EntityKind::Dsd => "dsd",
            EntityKind::Principal => "principal",
            EntityKind::Directive => "directive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "user" => EntityKind::User,
            "role" => EntityKind::Role,
            "perm" => EntityKind::Perm,
            "ou" => EntityKind::Ou,
            "ssd" => EntityKind::Ssd,
            "dsd" => EntityKind::Dsd,
            "principal" => EntityKind::Principal,
            "directive" => EntityKind::Directive,
            _ => return None,
        })
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary relations of the state, named as in the snapshot format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    UaDirect,
    Uo,
    OrAssign,
    Pa,
    Rh,
    OuParent,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::UaDirect => "ua_direct",
            Relation::Uo => "uo",
            Relation::OrAssign => "or_assign",
            Relation::Pa => "pa",
            Relation::Rh => "rh",
            Relation::OuParent => "ou",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The complete authorization universe.
///
/// Fields are crate-private; reads go through the accessor methods and
/// writes through [`apply_change`] or the admin meta-action handlers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PolicyState {
    pub(crate) config: EngineConfig,
    pub(crate) users: OrdSet<UserId>,
    pub(crate) roles: OrdSet<RoleId>,
    pub(crate) perms: OrdMap<PermId, Permission>,
    pub(crate) perm_keys: OrdMap<(Name, Name), PermId>,
    pub(crate) ous: OrdMap<OuId, OrgUnit>,
    /// (parent, child) index over `ous`.
    pub(crate) ou_children: OrdSet<(OuId, OuId)>,
    pub(crate) ua_direct: OrdSet<(UserId, RoleId)>,
    pub(crate) uo: OrdSet<(UserId, OuId)>,
    /// (ou, user) index over `uo`.
    pub(crate) ou_members: OrdSet<(OuId, UserId)>,
    pub(crate) or_assign: OrdSet<(OuId, RoleId)>,
    /// Stored role-first for resolution; serialized perm-first.
    pub(crate) pa: OrdSet<(RoleId, PermId)>,
    /// (senior, junior), transitively reduced.
    pub(crate) rh: OrdSet<(RoleId, RoleId)>,
    pub(crate) ssd: OrdMap<Name, SodConstraint>,
    pub(crate) dsd: OrdMap<Name, SodConstraint>,
    pub(crate) principals: OrdSet<AdminAssignment>,
    pub(crate) directives: OrdMap<Name, Directive>,
    pub(crate) tombstones: OrdSet<(EntityKind, String)>,
}

/// Iterates the second component of every pair in `set` whose first
/// component equals `key`.
pub(crate) fn right_of<'a, A, B>(set: &'a OrdSet<(A, B)>, key: &'a A) -> impl Iterator<Item = &'a B> + 'a
where
    A: Ord + Clone,
    B: Ord + Clone + Bottom,
{
    set.range((key.clone(), B::bottom())..)
        .take_while(move |(a, _)| a == key)
        .map(|(_, b)| b)
}

impl PolicyState {
    pub fn new(config: EngineConfig) -> Self {
        Self { config, ..Self::default() }
    }

    /// A fresh system administered by exactly one RBAC manager.
    pub fn bootstrap(rbac_manager: PrincipalId, config: EngineConfig) -> Self {
        let mut state = Self::new(config);
        state.principals.insert(AdminAssignment {
            principal: rbac_manager,
            role: ManagerRole::RbacManager,
            scope: None,
        });
        state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.users.iter()
    }

    pub fn roles(&self) -> impl Iterator<Item = &RoleId> {
        self.roles.iter()
    }

    pub fn perms(&self) -> impl Iterator<Item = &Permission> {
        self.perms.values()
    }

    pub fn ous(&self) -> impl Iterator<Item = &OrgUnit> {
        self.ous.values()
    }

    pub fn has_user(&self, user: &UserId) -> bool {
        self.users.contains(user)
    }

    pub fn has_role(&self, role: &RoleId) -> bool {
        self.roles.contains(role)
    }

    pub fn perm(&self, id: &PermId) -> Option<&Permission> {
        self.perms.get(id)
    }

    pub fn perm_by_key(&self, operation: &str, object: &str) -> Option<&PermId> {
        let key = (Name::new(operation).ok()?, Name::new(object).ok()?);
        self.perm_keys.get(&key)
    }

    pub fn ou(&self, id: &OuId) -> Option<&OrgUnit> {
        self.ous.get(id)
    }

    pub fn ua_direct(&self) -> impl Iterator<Item = &(UserId, RoleId)> {
        self.ua_direct.iter()
    }

    pub fn uo(&self) -> impl Iterator<Item = &(UserId, OuId)> {
        self.uo.iter()
    }

    pub fn or_assign(&self) -> impl Iterator<Item = &(OuId, RoleId)> {
        self.or_assign.iter()
    }

    /// Permission-to-role rows as (perm, role).
    pub fn pa(&self) -> impl Iterator<Item = (&PermId, &RoleId)> {
        self.pa.iter().map(|(r, p)| (p, r))
    }

    /// Immediate inheritance edges as (senior, junior).
    pub fn rh(&self) -> impl Iterator<Item = &(RoleId, RoleId)> {
        self.rh.iter()
    }

    pub fn ssd(&self) -> impl Iterator<Item = &SodConstraint> {
        self.ssd.values()
    }

    pub fn dsd(&self) -> impl Iterator<Item = &SodConstraint> {
        self.dsd.values()
    }

    pub fn assignments(&self) -> impl Iterator<Item = &AdminAssignment> {
        self.principals.iter()
    }

    pub fn assignments_of<'a>(&'a self, principal: &'a PrincipalId) -> impl Iterator<Item = &'a AdminAssignment> + 'a {
        self.principals.iter().filter(move |a| &a.principal == principal)
    }

    pub fn directives(&self) -> impl Iterator<Item = &Directive> {
        self.directives.values()
    }

    pub fn directive(&self, id: &Name) -> Option<&Directive> {
        self.directives.get(id)
    }

    pub fn tombstones(&self) -> impl Iterator<Item = &(EntityKind, String)> {
        self.tombstones.iter()
    }

    pub fn is_tombstoned(&self, kind: EntityKind, id: &str) -> bool {
        self.tombstones.contains(&(kind, id.to_string()))
    }

    pub fn direct_roles<'a>(&'a self, user: &'a UserId) -> impl Iterator<Item = &'a RoleId> + 'a {
        right_of(&self.ua_direct, user)
    }

    pub fn memberships<'a>(&'a self, user: &'a UserId) -> impl Iterator<Item = &'a OuId> + 'a {
        right_of(&self.uo, user)
    }

    pub fn members<'a>(&'a self, ou: &'a OuId) -> impl Iterator<Item = &'a UserId> + 'a {
        right_of(&self.ou_members, ou)
    }

    pub fn children<'a>(&'a self, ou: &'a OuId) -> impl Iterator<Item = &'a OuId> + 'a {
        right_of(&self.ou_children, ou)
    }

    pub fn ou_roles<'a>(&'a self, ou: &'a OuId) -> impl Iterator<Item = &'a RoleId> + 'a {
        right_of(&self.or_assign, ou)
    }

    pub fn role_perms<'a>(&'a self, role: &'a RoleId) -> impl Iterator<Item = &'a PermId> + 'a {
        right_of(&self.pa, role)
    }

    /// Immediate juniors of `role`.
    pub fn juniors<'a>(&'a self, role: &'a RoleId) -> impl Iterator<Item = &'a RoleId> + 'a {
        right_of(&self.rh, role)
    }

    /// Immediate seniors of `role` (linear scan; the hierarchy is small).
    pub fn seniors<'a>(&'a self, role: &'a RoleId) -> impl Iterator<Item = &'a RoleId> + 'a {
        self.rh.iter().filter(move |(_, j)| j == role).map(|(s, _)| s)
    }

    /// Parent chain of `ou`, starting with its parent. Stops on a repeat so
    /// a corrupted (cyclic) state cannot loop forever.
    pub fn ancestors(&self, ou: &OuId) -> Vec<OuId> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        seen.insert(ou.clone());
        let mut cursor = self.ous.get(ou).and_then(|o| o.parent.clone());
        while let Some(p) = cursor {
            if !seen.insert(p.clone()) {
                break;
            }
            cursor = self.ous.get(&p).and_then(|o| o.parent.clone());
            out.push(p);
        }
        out
    }

    /// `ou` and every OU below it.
    pub fn subtree(&self, ou: &OuId) -> BTreeSet<OuId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![ou.clone()];
        while let Some(next) = stack.pop() {
            if out.insert(next.clone()) {
                stack.extend(self.children(&next).cloned());
            }
        }
        out
    }

    /// Department label of `ou`: its own label or the nearest labeled
    /// ancestor's.
    pub fn department_of(&self, ou: &OuId) -> Option<&Name> {
        let unit = self.ous.get(ou)?;
        if let Some(d) = &unit.department {
            return Some(d);
        }
        self.ancestors(ou).iter().find_map(|a| self.ous.get(a).and_then(|o| o.department.as_ref()))
    }

    /// All department labels carried explicitly by some OU.
    pub fn departments(&self) -> BTreeSet<Name> {
        self.ous.values().filter_map(|o| o.department.clone()).collect()
    }

    pub fn next_directive_id(&self) -> Name {
        Name::new(format!("d{}", self.directives.len() + 1)).expect("generated id is well-formed")
    }
}
