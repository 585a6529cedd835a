//! Bounded reachability over administrative action sequences, and the
//! closed-form bound on what an IT coordinator can confer.
//!
//! The explored action space is every [`Change`] the given principals are
//! capable of, over the entities of the current state plus one fresh
//! identifier per entity class. Meta-actions (appointments, directives)
//! and constraint additions are not explored.

use std::collections::{BTreeSet, HashSet, VecDeque};

use thiserror::Error;

use crate::admin::{execute, AdminAction, AdminError, ManagerRole};
use crate::ids::{Name, OuId, PermId, PrincipalId, RoleId, UserId};
use crate::model::{Change, ChangeKind, PolicyState};
use crate::persist::{serialize_snapshot, Digest};
use crate::resolver;

pub const DEFAULT_DEPTH: usize = 6;
pub const DEFAULT_STATE_CAP: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SafetyGoal {
    pub user: UserId,
    pub perm: PermId,
}

impl SafetyGoal {
    pub fn holds(&self, state: &PolicyState) -> bool {
        resolver::effective_permissions(state, &self.user).is_ok_and(|p| p.contains(&self.perm))
    }
}

/// An action sequence reaching a goal.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Witness {
    pub steps: Vec<(PrincipalId, AdminAction)>,
}

impl Witness {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Re-executes the steps from `state` through admin-control.
    pub fn replay(&self, state: &PolicyState) -> Result<PolicyState, AdminError> {
        let mut s = state.clone();
        for (p, a) in &self.steps {
            s = execute(&s, p, a)?.state;
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reach {
    Reached(Witness),
    /// No sequence of length ≤ `depth` reaches the goal; `explored` distinct
    /// states were visited.
    Unreachable { depth: usize, explored: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyzeError {
    #[error("state budget exceeded after {explored} states (frontier {frontier})")]
    BudgetExceeded { explored: usize, frontier: usize },
    #[error("{0} does not hold ItCoordinator")]
    NotACoordinator(PrincipalId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReachLimits {
    pub depth: usize,
    pub state_cap: usize,
}

impl Default for ReachLimits {
    fn default() -> Self {
        Self { depth: DEFAULT_DEPTH, state_cap: DEFAULT_STATE_CAP }
    }
}

/// Breadth-first search with the default state cap.
pub fn bounded_reach(
    state: &PolicyState,
    principals: &BTreeSet<PrincipalId>,
    goal: &SafetyGoal,
    depth: usize,
) -> Result<Reach, AnalyzeError> {
    bounded_reach_with(state, principals, goal, ReachLimits { depth, ..ReachLimits::default() })
}

struct Node {
    parent: Option<usize>,
    step: Option<(PrincipalId, AdminAction)>,
    depth: usize,
}

pub fn bounded_reach_with(
    state: &PolicyState,
    principals: &BTreeSet<PrincipalId>,
    goal: &SafetyGoal,
    limits: ReachLimits,
) -> Result<Reach, AnalyzeError> {
    if goal.holds(state) {
        return Ok(Reach::Reached(Witness::default()));
    }
    let fresh = FreshIds::for_goal(state, goal);
    let mut nodes = vec![Node { parent: None, step: None, depth: 0 }];
    let mut seen: HashSet<Digest> = HashSet::from([Digest::of(&serialize_snapshot(state))]);
    let mut queue: VecDeque<(usize, PolicyState)> = VecDeque::from([(0, state.clone())]);

    while let Some((idx, current)) = queue.pop_front() {
        let depth = nodes[idx].depth;
        if depth >= limits.depth {
            continue;
        }
        for principal in principals {
            for change in candidates(&current, principal, &fresh) {
                let action = AdminAction::Change(change);
                let Ok(done) = execute(&current, principal, &action) else { continue };
                if !seen.insert(Digest::of(&serialize_snapshot(&done.state))) {
                    continue;
                }
                nodes.push(Node { parent: Some(idx), step: Some((principal.clone(), action)), depth: depth + 1 });
                let child = nodes.len() - 1;
                if goal.holds(&done.state) {
                    return Ok(Reach::Reached(witness(&nodes, child)));
                }
                if seen.len() > limits.state_cap {
                    return Err(AnalyzeError::BudgetExceeded { explored: seen.len(), frontier: queue.len() + 1 });
                }
                queue.push_back((child, done.state));
            }
        }
    }
    Ok(Reach::Unreachable { depth: limits.depth, explored: seen.len() })
}

fn witness(nodes: &[Node], mut idx: usize) -> Witness {
    let mut steps = Vec::new();
    while let Some(step) = &nodes[idx].step {
        steps.push(step.clone());
        idx = nodes[idx].parent.expect("non-root nodes have parents");
    }
    steps.reverse();
    Witness { steps }
}

/// One symbolic fresh identifier per entity class. The goal's user and
/// permission serve as the fresh ids of their classes when absent.
struct FreshIds {
    user: UserId,
    role: RoleId,
    perm: PermId,
    ou: OuId,
}

impl FreshIds {
    fn for_goal(state: &PolicyState, goal: &SafetyGoal) -> Self {
        let id = |s: &str| s.to_string();
        Self {
            user: if state.has_user(&goal.user) { UserId::new(id("fresh.user")).expect("valid") } else { goal.user.clone() },
            role: RoleId::new("fresh.role").expect("valid"),
            perm: if state.perm(&goal.perm).is_some() { PermId::new("fresh.perm").expect("valid") } else { goal.perm.clone() },
            ou: OuId::new("fresh.ou").expect("valid"),
        }
    }
}

/// Candidate changes `principal` is capable of, skipping ones that would
/// trivially fail on duplicates or missing rows.
fn candidates(state: &PolicyState, principal: &PrincipalId, fresh: &FreshIds) -> Vec<Change> {
    let kinds: BTreeSet<ChangeKind> = state
        .assignments_of(principal)
        .flat_map(|a| a.role.change_capabilities().iter().copied())
        .filter(|k| !matches!(k, ChangeKind::AddSsd | ChangeKind::AddDsd))
        .collect();
    let users: Vec<UserId> = state.users().cloned().collect();
    let roles: Vec<RoleId> = state.roles().cloned().collect();
    let perms: Vec<PermId> = state.perms().map(|p| p.id.clone()).collect();
    let ous: Vec<OuId> = state.ous().map(|o| o.id.clone()).collect();
    let mut out = Vec::new();
    for kind in kinds {
        use ChangeKind as K;
        match kind {
            K::AddUser => out.push(Change::AddUser { user: fresh.user.clone() }),
            K::DeleteUser => out.extend(users.iter().map(|u| Change::DeleteUser { user: u.clone() })),
            K::AddRole => out.push(Change::AddRole { role: fresh.role.clone() }),
            K::DeleteRole => out.extend(roles.iter().map(|r| Change::DeleteRole { role: r.clone() })),
            K::AddPerm => out.push(Change::AddPerm {
                perm: fresh.perm.clone(),
                operation: Name::new("fresh.op").expect("valid"),
                object: Name::new("fresh.obj").expect("valid"),
            }),
            K::DeletePerm => out.extend(perms.iter().map(|p| Change::DeletePerm { perm: p.clone() })),
            K::GrantPermToRole => {
                for p in &perms {
                    for r in &roles {
                        if !state.role_perms(r).any(|x| x == p) {
                            out.push(Change::GrantPermToRole { perm: p.clone(), role: r.clone() });
                        }
                    }
                }
            }
            K::RevokePermFromRole => out.extend(
                state.pa().map(|(p, r)| Change::RevokePermFromRole { perm: p.clone(), role: r.clone() }),
            ),
            K::AssignUserToRoleDirect => {
                for u in &users {
                    for r in &roles {
                        if !state.direct_roles(u).any(|x| x == r) {
                            out.push(Change::AssignUserToRoleDirect { user: u.clone(), role: r.clone() });
                        }
                    }
                }
            }
            K::RevokeUserFromRoleDirect => out.extend(
                state
                    .ua_direct()
                    .map(|(u, r)| Change::RevokeUserFromRoleDirect { user: u.clone(), role: r.clone() }),
            ),
            K::CreateOu => {
                out.push(Change::CreateOu { ou: fresh.ou.clone(), parent: None, department: None });
                out.extend(ous.iter().map(|p| Change::CreateOu {
                    ou: fresh.ou.clone(),
                    parent: Some(p.clone()),
                    department: None,
                }));
            }
            K::DeleteOu => out.extend(ous.iter().map(|o| Change::DeleteOu { ou: o.clone() })),
            K::AssignUserToOu => {
                for u in &users {
                    for o in &ous {
                        if !state.memberships(u).any(|x| x == o) {
                            out.push(Change::AssignUserToOu { user: u.clone(), ou: o.clone() });
                        }
                    }
                }
            }
            K::RemoveUserFromOu => out.extend(
                state.uo().map(|(u, o)| Change::RemoveUserFromOu { user: u.clone(), ou: o.clone() }),
            ),
            K::MoveUserOu => {
                for (u, from) in state.uo() {
                    for to in &ous {
                        if !state.memberships(u).any(|x| x == to) {
                            out.push(Change::MoveUserOu { user: u.clone(), from: from.clone(), to: to.clone() });
                        }
                    }
                }
            }
            K::AssignOuToRole => {
                for o in &ous {
                    for r in &roles {
                        if !state.ou_roles(o).any(|x| x == r) {
                            out.push(Change::AssignOuToRole { ou: o.clone(), role: r.clone() });
                        }
                    }
                }
            }
            K::RevokeOuFromRole => out.extend(
                state.or_assign().map(|(o, r)| Change::RevokeOuFromRole { ou: o.clone(), role: r.clone() }),
            ),
            K::AddRoleInheritance => {
                for s in &roles {
                    for j in &roles {
                        if s != j {
                            out.push(Change::AddRoleInheritance { senior: s.clone(), junior: j.clone() });
                        }
                    }
                }
            }
            K::RemoveRoleInheritance => out.extend(
                state.rh().map(|(s, j)| Change::RemoveRoleInheritance { senior: s.clone(), junior: j.clone() }),
            ),
            K::RemoveSsd => out.extend(state.ssd().map(|c| Change::RemoveSsd { id: c.id.clone() })),
            K::RemoveDsd => out.extend(state.dsd().map(|c| Change::RemoveDsd { id: c.id.clone() })),
            K::AddSsd | K::AddDsd => {}
        }
    }
    out
}

/// OUs whose role assignments a coordinator can bring to bear: every OU
/// in the coordinator's departments, plus (with OU role inheritance) their
/// unlabeled ancestors, whose roles flow down to members.
pub fn coordinator_ous(state: &PolicyState, coordinator: &PrincipalId) -> Result<BTreeSet<OuId>, AnalyzeError> {
    let scopes: BTreeSet<&Name> = state
        .assignments_of(coordinator)
        .filter(|a| a.role == ManagerRole::ItCoordinator)
        .filter_map(|a| a.scope.as_ref())
        .collect();
    if scopes.is_empty() {
        return Err(AnalyzeError::NotACoordinator(coordinator.clone()));
    }
    let mut out = BTreeSet::new();
    for o in state.ous() {
        if state.department_of(&o.id).is_some_and(|d| scopes.contains(d)) {
            out.insert(o.id.clone());
            if state.config().ou_role_inheritance {
                out.extend(state.ancestors(&o.id));
            }
        }
    }
    Ok(out)
}

/// Closed-form upper bound on the permissions `coordinator` can confer on
/// any user beyond that user's existing entitlements.
pub fn containment_bound(state: &PolicyState, coordinator: &PrincipalId) -> Result<BTreeSet<PermId>, AnalyzeError> {
    let ous = coordinator_ous(state, coordinator)?;
    let seeds: BTreeSet<RoleId> = ous.iter().flat_map(|o| state.ou_roles(o)).cloned().collect();
    Ok(resolver::perms_of_roles(state, &resolver::role_closure(state, &seeds)))
}
