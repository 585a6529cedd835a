//! OU-RBAC: role-based access control with an organizational-unit layer
//! between users and roles.
//!
//! Users are placed in organizational units (OUs), OUs are assigned to
//! roles, roles carry permissions. Administration is delegated: an RBAC
//! manager oversees permission, role and OU managers, and per-department
//! IT coordinators handle users within their department's OUs.
//!
//! ```
//! use ourbac::admin::{AdminAction, Engine};
//! use ourbac::ids::{PrincipalId, UserId};
//! use ourbac::model::{Change, EngineConfig};
//!
//! let admin = PrincipalId::new("admin").unwrap();
//! let mut engine = Engine::bootstrap(admin.clone(), EngineConfig::default());
//! let alice = UserId::new("u.alice").unwrap();
//! engine.execute(&admin, AdminAction::Change(Change::AddUser { user: alice.clone() })).unwrap();
//! assert!(engine.state().has_user(&alice));
//! assert_eq!(engine.log().len(), 1);
//! ```

pub mod admin;
pub mod analyze;
pub mod bench;
pub mod encoding;
pub mod ids;
pub mod model;
pub mod persist;
pub mod resolver;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::admin::{execute, AdminAction, ManagerRole};
    use crate::ids::{Name, OuId, PermId, PrincipalId, RoleId, UserId};
    use crate::model::{apply_change, Change, EngineConfig, PolicyState};

    pub fn user(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    pub fn role(s: &str) -> RoleId {
        RoleId::new(s).unwrap()
    }

    pub fn perm(s: &str) -> PermId {
        PermId::new(s).unwrap()
    }

    pub fn ou(s: &str) -> OuId {
        OuId::new(s).unwrap()
    }

    pub fn name(s: &str) -> Name {
        Name::new(s).unwrap()
    }

    pub fn principal(s: &str) -> PrincipalId {
        PrincipalId::new(s).unwrap()
    }

    /// The two-department university fixture, built through `apply_change`.
    pub fn campus() -> PolicyState {
        let changes = [
            Change::CreateOu { ou: ou("ou.cs"), parent: None, department: Some(name("CS")) },
            Change::CreateOu { ou: ou("ou.cs.sem1"), parent: Some(ou("ou.cs")), department: None },
            Change::CreateOu { ou: ou("ou.ee"), parent: None, department: Some(name("EE")) },
            Change::AddRole { role: role("r.student") },
            Change::AddRole { role: role("r.labuser") },
            Change::AddRole { role: role("r.gradstudent") },
            Change::AddRoleInheritance { senior: role("r.gradstudent"), junior: role("r.student") },
            Change::AddPerm { perm: perm("p.internet"), operation: name("access"), object: name("internet") },
            Change::AddPerm { perm: perm("p.lms"), operation: name("read"), object: name("lms") },
            Change::AddPerm { perm: perm("p.lab"), operation: name("use"), object: name("lab-pc") },
            Change::AssignOuToRole { ou: ou("ou.cs"), role: role("r.student") },
            Change::AssignOuToRole { ou: ou("ou.cs.sem1"), role: role("r.labuser") },
            Change::AssignOuToRole { ou: ou("ou.ee"), role: role("r.student") },
            Change::GrantPermToRole { perm: perm("p.internet"), role: role("r.student") },
            Change::GrantPermToRole { perm: perm("p.lms"), role: role("r.student") },
            Change::GrantPermToRole { perm: perm("p.lab"), role: role("r.labuser") },
            Change::AddUser { user: user("u.alice") },
            Change::AddUser { user: user("u.bob") },
            Change::AssignUserToOu { user: user("u.alice"), ou: ou("ou.cs.sem1") },
            Change::AssignUserToRoleDirect { user: user("u.bob"), role: role("r.gradstudent") },
        ];
        changes.iter().fold(PolicyState::bootstrap(principal("admin"), EngineConfig::default()), |s, c| {
            apply_change(&s, c).unwrap()
        })
    }

    fn appoint(s: PolicyState, who: &str, role: ManagerRole, scope: Option<&str>) -> PolicyState {
        let action = AdminAction::AppointManager { principal: principal(who), role, scope: scope.map(name) };
        execute(&s, &principal("admin"), &action).unwrap().state
    }

    /// The campus fixture plus coordinators `c.cs` (scope CS) and `c.ee` (scope EE).
    pub fn campus_with_coordinators() -> PolicyState {
        let s = appoint(campus(), "c.cs", ManagerRole::ItCoordinator, Some("CS"));
        appoint(s, "c.ee", ManagerRole::ItCoordinator, Some("EE"))
    }

    /// The campus fixture plus sub-managers `pm`, `rm` and `om`.
    pub fn campus_with_managers() -> PolicyState {
        let s = appoint(campus(), "pm", ManagerRole::PermissionManager, None);
        let s = appoint(s, "rm", ManagerRole::RoleManager, None);
        appoint(s, "om", ManagerRole::OuManager, None)
    }
}
