use super::{
    authorize_admin, AdminAction, AdminAssignment, AdminError, Directive, DirectivePattern, DirectiveStatus,
    ManagerRole, Verdict,
};
use crate::ids::{Name, PrincipalId};
use crate::model::{apply_change, ConstraintError, EntityKind, PolicyState};

/// Result of a successful execution.
#[derive(Debug, Clone)]
pub struct Executed {
    pub state: PolicyState,
    /// Directive consumed by this execution.
    pub consumed: Option<Name>,
    /// Directive created by an `IssueDirective` action.
    pub issued: Option<Directive>,
}

/// Authorizes and applies `action`. Pure: the input state is untouched and
/// auditing is left to the caller (see [`super::Engine`]).
pub fn execute(state: &PolicyState, principal: &PrincipalId, action: &AdminAction) -> Result<Executed, AdminError> {
    let consumed = match authorize_admin(state, principal, action) {
        Verdict::Deny(reason) => return Err(AdminError::Denied(reason)),
        Verdict::Allow { directive } => directive,
    };
    let mut issued = None;
    let mut next = match action {
        AdminAction::Change(change) => apply_change(state, change)?,
        AdminAction::AppointManager { principal: who, role, scope } => appoint(state, who, *role, scope.as_ref())?,
        AdminAction::RevokeManager { principal: who, role, scope } => {
            revoke_manager(state, who, *role, scope.as_ref())?
        }
        AdminAction::IssueDirective { pattern } => {
            let (next, d) = new_directive(state, principal, pattern);
            issued = Some(d);
            next
        }
        AdminAction::RevokeDirective { id } => revoke_directive(state, id)?,
    };
    if let Some(id) = &consumed {
        let mut d = next.directives.get(id).cloned().expect("authorized directive exists");
        d.status = DirectiveStatus::Consumed;
        next.directives.insert(id.clone(), d);
    }
    Ok(Executed { state: next, consumed, issued })
}

/// Issues a directive as `principal`, returning the new state and the
/// open directive.
pub fn issue_directive(
    state: &PolicyState,
    principal: &PrincipalId,
    pattern: DirectivePattern,
) -> Result<(PolicyState, Directive), AdminError> {
    let out = execute(state, principal, &AdminAction::IssueDirective { pattern })?;
    let d = out.issued.expect("IssueDirective yields a directive");
    Ok((out.state, d))
}

fn new_directive(state: &PolicyState, issuer: &PrincipalId, pattern: &DirectivePattern) -> (PolicyState, Directive) {
    let mut next = state.clone();
    let d = Directive {
        id: state.next_directive_id(),
        issued_by: issuer.clone(),
        pattern: pattern.clone(),
        status: DirectiveStatus::Open,
    };
    next.directives.insert(d.id.clone(), d.clone());
    (next, d)
}

fn revoke_directive(state: &PolicyState, id: &Name) -> Result<PolicyState, ConstraintError> {
    let Some(d) = state.directives.get(id) else {
        return Err(ConstraintError::UnknownEntity { kind: EntityKind::Directive, id: id.to_string() });
    };
    if d.status != DirectiveStatus::Open {
        return Err(ConstraintError::DirectiveNotOpen { id: id.clone(), status: d.status.as_str() });
    }
    let mut next = state.clone();
    let mut d = d.clone();
    d.status = DirectiveStatus::Revoked;
    next.directives.insert(id.clone(), d);
    Ok(next)
}

/// Checks manager separation of duty for `who` taking on `role`.
pub(crate) fn manager_ssd_conflict(
    held: impl IntoIterator<Item = ManagerRole>,
    requested: ManagerRole,
) -> Option<ManagerRole> {
    held.into_iter().find(|h| {
        *h != requested
            && (*h == ManagerRole::RbacManager
                || requested == ManagerRole::RbacManager
                || (h.is_sub_manager() && requested.is_sub_manager()))
    })
}

fn appoint(
    state: &PolicyState,
    who: &PrincipalId,
    role: ManagerRole,
    scope: Option<&Name>,
) -> Result<PolicyState, ConstraintError> {
    match (role, scope) {
        (ManagerRole::ItCoordinator, None) => {
            return Err(ConstraintError::InvalidScope { scope: None, reason: "coordinators need a scope".into() });
        }
        (ManagerRole::ItCoordinator, Some(d)) if !state.departments().contains(d) => {
            return Err(ConstraintError::InvalidScope {
                scope: Some(d.clone()),
                reason: "no OU carries this department label".into(),
            });
        }
        (ManagerRole::ItCoordinator, Some(_)) => {}
        (_, Some(d)) => {
            return Err(ConstraintError::InvalidScope {
                scope: Some(d.clone()),
                reason: format!("{role} takes no scope"),
            });
        }
        (_, None) => {}
    }
    let assignment = AdminAssignment { principal: who.clone(), role, scope: scope.cloned() };
    if state.principals.contains(&assignment) {
        return Err(ConstraintError::DuplicateEntity {
            kind: EntityKind::Principal,
            id: format!("{who} {role}"),
        });
    }
    if state.config.manager_ssd_enabled {
        if let Some(held) = manager_ssd_conflict(state.assignments_of(who).map(|a| a.role), role) {
            return Err(ConstraintError::ManagerSsdViolation { principal: who.clone(), held, requested: role });
        }
    }
    let mut next = state.clone();
    next.principals.insert(assignment);
    Ok(next)
}

fn revoke_manager(
    state: &PolicyState,
    who: &PrincipalId,
    role: ManagerRole,
    scope: Option<&Name>,
) -> Result<PolicyState, ConstraintError> {
    let assignment = AdminAssignment { principal: who.clone(), role, scope: scope.cloned() };
    if !state.principals.contains(&assignment) {
        return Err(ConstraintError::UnknownEntity { kind: EntityKind::Principal, id: format!("{who} {role}") });
    }
    if role == ManagerRole::RbacManager
        && state.principals.iter().filter(|a| a.role == ManagerRole::RbacManager).count() == 1
    {
        return Err(ConstraintError::LastRbacManager { principal: who.clone() });
    }
    let mut next = state.clone();
    next.principals.remove(&assignment);
    Ok(next)
}
