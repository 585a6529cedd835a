use std::fmt;

use super::{AdminAction, AdminAssignment, DirectiveStatus, ManagerRole};
use crate::ids::{Name, PrincipalId};
use crate::model::{Change, PolicyState};

/// Machine-readable reason for an authorization denial. Ordered by how far
/// the request got: a principal failing at several assignments reports
/// the furthest one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DenyReason {
    UnknownPrincipal,
    NoCapability,
    OutOfScope,
    NoDirective,
}

impl DenyReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DenyReason::UnknownPrincipal => "UnknownPrincipal",
            DenyReason::NoCapability => "NoCapability",
            DenyReason::OutOfScope => "OutOfScope",
            DenyReason::NoDirective => "NoDirective",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [DenyReason::UnknownPrincipal, DenyReason::NoCapability, DenyReason::OutOfScope, DenyReason::NoDirective]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    /// Allowed; `directive` names the open directive the execution will
    /// consume, if one was required.
    Allow { directive: Option<Name> },
    Deny(DenyReason),
}

impl Verdict {
    pub fn is_allow(&self) -> bool {
        matches!(self, Verdict::Allow { .. })
    }
}

/// Every OU the action touches lies under the coordinator's department.
/// Deleting a user touches all of that user's OUs.
fn within_scope(state: &PolicyState, scope: Option<&Name>, action: &AdminAction) -> bool {
    let Some(scope) = scope else { return false };
    let Some(change) = action.as_change() else { return false };
    let in_scope = |ou| state.department_of(ou) == Some(scope);
    if let Change::DeleteUser { user } = change {
        return state.memberships(user).all(in_scope);
    }
    change.referenced_ous().into_iter().all(in_scope)
}

fn needs_directive(state: &PolicyState, role: ManagerRole, action: &AdminAction) -> bool {
    state.config().directive_mode && role.is_sub_manager() && matches!(action, AdminAction::Change(_))
}

/// Oldest open directive matching the change, in issue order.
fn matching_directive(state: &PolicyState, change: &Change) -> Option<Name> {
    state
        .directives()
        .filter(|d| d.status == DirectiveStatus::Open && d.pattern.matches(change))
        .min_by_key(|d| (d.id.as_str().len(), d.id.clone()))
        .map(|d| d.id.clone())
}

fn judge(state: &PolicyState, assignment: &AdminAssignment, action: &AdminAction) -> Verdict {
    if !assignment.role.permits(action) {
        return Verdict::Deny(DenyReason::NoCapability);
    }
    if assignment.role == ManagerRole::ItCoordinator && !within_scope(state, assignment.scope.as_ref(), action) {
        return Verdict::Deny(DenyReason::OutOfScope);
    }
    if needs_directive(state, assignment.role, action) {
        let change = action.as_change().expect("directives gate changes only");
        return match matching_directive(state, change) {
            Some(id) => Verdict::Allow { directive: Some(id) },
            None => Verdict::Deny(DenyReason::NoDirective),
        };
    }
    Verdict::Allow { directive: None }
}

/// Decides whether `principal` may perform `action` against `state`.
///
/// A principal holding several assignments is allowed if any one of them
/// allows; an allowance that needs no directive is preferred over one that
/// would consume a directive.
pub fn authorize_admin(state: &PolicyState, principal: &PrincipalId, action: &AdminAction) -> Verdict {
    let mut best_allow: Option<Verdict> = None;
    let mut worst_deny: Option<DenyReason> = None;
    for assignment in state.assignments_of(principal) {
        match judge(state, assignment, action) {
            Verdict::Allow { directive: None } => return Verdict::Allow { directive: None },
            allow @ Verdict::Allow { .. } => {
                best_allow.get_or_insert(allow);
            }
            Verdict::Deny(r) => worst_deny = Some(worst_deny.map_or(r, |w| w.max(r))),
        }
    }
    best_allow.unwrap_or(Verdict::Deny(worst_deny.unwrap_or(DenyReason::UnknownPrincipal)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admin::{execute, DirectivePattern};
    use crate::model::ChangeKind;
    use crate::testutil::*;

    #[test]
    fn coordinator_cannot_grant() {
        let s = campus_with_coordinators();
        let action = AdminAction::Change(Change::GrantPermToRole { perm: perm("p.lab"), role: role("r.student") });
        assert_eq!(authorize_admin(&s, &principal("c.cs"), &action), Verdict::Deny(DenyReason::NoCapability));
    }

    #[test]
    fn coordinator_scope() {
        let s = campus_with_coordinators();
        let c = principal("c.cs");
        let into_ee = AdminAction::Change(Change::AssignUserToOu { user: user("u.bob"), ou: ou("ou.ee") });
        assert_eq!(authorize_admin(&s, &c, &into_ee), Verdict::Deny(DenyReason::OutOfScope));
        let into_sem1 = AdminAction::Change(Change::AssignUserToOu { user: user("u.bob"), ou: ou("ou.cs.sem1") });
        assert_eq!(authorize_admin(&s, &c, &into_sem1), Verdict::Allow { directive: None });
        // MoveUserOu needs both ends in scope.
        let cross = AdminAction::Change(Change::MoveUserOu {
            user: user("u.alice"),
            from: ou("ou.cs.sem1"),
            to: ou("ou.ee"),
        });
        assert_eq!(authorize_admin(&s, &c, &cross), Verdict::Deny(DenyReason::OutOfScope));
        assert_eq!(authorize_admin(&s, &principal("c.ee"), &cross), Verdict::Deny(DenyReason::OutOfScope));
        // AddUser names no OU.
        let add = AdminAction::Change(Change::AddUser { user: user("u.new") });
        assert!(authorize_admin(&s, &principal("c.ee"), &add).is_allow());
        // Alice sits in a CS OU, so the EE coordinator may not delete her.
        let del = AdminAction::Change(Change::DeleteUser { user: user("u.alice") });
        assert_eq!(authorize_admin(&s, &principal("c.ee"), &del), Verdict::Deny(DenyReason::OutOfScope));
        assert!(authorize_admin(&s, &c, &del).is_allow());
    }

    #[test]
    fn unknown_principal() {
        let s = campus();
        let add = AdminAction::Change(Change::AddUser { user: user("u.x") });
        assert_eq!(authorize_admin(&s, &principal("nobody"), &add), Verdict::Deny(DenyReason::UnknownPrincipal));
    }

    #[test]
    fn directive_gates_sub_managers() {
        let s = campus_with_managers();
        let add = AdminAction::Change(Change::AddPerm { perm: perm("p.x"), operation: name("op"), object: name("obj") });
        assert_eq!(authorize_admin(&s, &principal("pm"), &add), Verdict::Deny(DenyReason::NoDirective));

        let grant = AdminAction::Change(Change::GrantPermToRole { perm: perm("p.lab"), role: role("r.student") });
        assert_eq!(authorize_admin(&s, &principal("rm"), &grant), Verdict::Deny(DenyReason::NoDirective));
        let pattern = DirectivePattern::new(ChangeKind::GrantPermToRole)
            .bind("perm", name("p.lab"))
            .unwrap()
            .bind("role", name("r.student"))
            .unwrap();
        let s = execute(&s, &principal("admin"), &AdminAction::IssueDirective { pattern }).unwrap().state;
        assert_eq!(authorize_admin(&s, &principal("rm"), &grant), Verdict::Allow { directive: Some(name("d1")) });
        // Wrong manager still lacks the capability.
        assert_eq!(authorize_admin(&s, &principal("pm"), &grant), Verdict::Deny(DenyReason::NoCapability));

        let mut off = s.clone();
        off.config.directive_mode = false;
        assert_eq!(authorize_admin(&off, &principal("pm"), &add), Verdict::Allow { directive: None });
    }

    #[test]
    fn rbac_manager_needs_no_directive() {
        let s = campus_with_managers();
        let add = AdminAction::Change(Change::AddPerm { perm: perm("p.x"), operation: name("op"), object: name("obj") });
        assert_eq!(authorize_admin(&s, &principal("admin"), &add), Verdict::Allow { directive: None });
    }

    #[test]
    fn ou_manager_appoints_coordinators_only() {
        let s = campus_with_managers();
        let appoint_c = AdminAction::AppointManager {
            principal: principal("c.new"),
            role: ManagerRole::ItCoordinator,
            scope: Some(name("CS")),
        };
        assert!(authorize_admin(&s, &principal("om"), &appoint_c).is_allow());
        let appoint_rm =
            AdminAction::AppointManager { principal: principal("x"), role: ManagerRole::RoleManager, scope: None };
        assert_eq!(authorize_admin(&s, &principal("om"), &appoint_rm), Verdict::Deny(DenyReason::NoCapability));
    }
}
