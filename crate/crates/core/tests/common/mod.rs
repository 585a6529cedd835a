#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use ourbac::admin::{execute, AdminAction, ManagerRole};
use ourbac::ids::{Name, OuId, PermId, PrincipalId, RoleId, UserId};
use ourbac::model::{apply_change, Change, EngineConfig, PolicyState, SodConstraint};
use rand::seq::SliceRandom;
use rand::Rng;

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

pub fn campus_changes() -> Vec<Change> {
    vec![
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
    ]
}

pub fn campus() -> PolicyState {
    campus_changes()
        .iter()
        .fold(PolicyState::bootstrap(principal("admin"), EngineConfig::default()), |s, c| apply_change(&s, c).unwrap())
}

pub fn appoint(s: &PolicyState, who: &str, role: ManagerRole, scope: Option<&str>) -> PolicyState {
    let action = AdminAction::AppointManager { principal: principal(who), role, scope: scope.map(name) };
    execute(s, &principal("admin"), &action).unwrap().state
}

pub fn campus_with_coordinators() -> PolicyState {
    let s = appoint(&campus(), "c.cs", ManagerRole::ItCoordinator, Some("CS"));
    appoint(&s, "c.ee", ManagerRole::ItCoordinator, Some("EE"))
}

/// Brute-force oracle: enumerates every path through the raw relations by
/// naive fixpoint iteration, sharing no code with the resolver.
pub struct Oracle {
    pub roles: BTreeMap<UserId, BTreeSet<RoleId>>,
    pub perms: BTreeMap<UserId, BTreeSet<PermId>>,
}

impl Oracle {
    pub fn compute(s: &PolicyState) -> Self {
        let inherit = s.config().ou_role_inheritance;
        let parent: Vec<(OuId, OuId)> =
            s.ous().filter_map(|o| o.parent.clone().map(|p| (o.id.clone(), p))).collect();
        let uo: Vec<(UserId, OuId)> = s.uo().cloned().collect();
        let or: Vec<(OuId, RoleId)> = s.or_assign().cloned().collect();
        let ua: Vec<(UserId, RoleId)> = s.ua_direct().cloned().collect();
        let rh: Vec<(RoleId, RoleId)> = s.rh().cloned().collect();
        let pa: Vec<(PermId, RoleId)> = s.pa().map(|(p, r)| (p.clone(), r.clone())).collect();

        let mut roles = BTreeMap::new();
        let mut perms = BTreeMap::new();
        for u in s.users() {
            let mut ous: BTreeSet<OuId> = uo.iter().filter(|(x, _)| x == u).map(|(_, o)| o.clone()).collect();
            if inherit {
                loop {
                    let before = ous.len();
                    for (c, p) in &parent {
                        if ous.contains(c) {
                            ous.insert(p.clone());
                        }
                    }
                    if ous.len() == before {
                        break;
                    }
                }
            }
            let mut held: BTreeSet<RoleId> = ua.iter().filter(|(x, _)| x == u).map(|(_, r)| r.clone()).collect();
            held.extend(or.iter().filter(|(o, _)| ous.contains(o)).map(|(_, r)| r.clone()));
            loop {
                let before = held.len();
                for (senior, junior) in &rh {
                    if held.contains(senior) {
                        held.insert(junior.clone());
                    }
                }
                if held.len() == before {
                    break;
                }
            }
            let p: BTreeSet<PermId> = pa.iter().filter(|(_, r)| held.contains(r)).map(|(p, _)| p.clone()).collect();
            roles.insert(u.clone(), held);
            perms.insert(u.clone(), p);
        }
        Oracle { roles, perms }
    }
}

/// Size limits for random states.
#[derive(Clone, Copy)]
pub struct Shape {
    pub users: usize,
    pub ous: usize,
    pub roles: usize,
    pub perms: usize,
}

pub const ORACLE_SHAPE: Shape = Shape { users: 50, ous: 10, roles: 10, perms: 20 };

fn pick<'a, T, R: Rng>(rng: &mut R, xs: &'a [T]) -> &'a T {
    xs.choose(rng).expect("non-empty pool")
}

/// A random valid state built only through `apply_change`. Roots of the OU
/// forest carry department labels D1..D3.
pub fn random_state<R: Rng>(rng: &mut R, shape: Shape) -> PolicyState {
    let config = EngineConfig {
        ou_role_inheritance: rng.gen_bool(0.8),
        directive_mode: true,
        manager_ssd_enabled: true,
    };
    let mut s = PolicyState::bootstrap(principal("admin"), config);
    let try_apply = |s: &mut PolicyState, c: Change| {
        if let Ok(next) = apply_change(s, &c) {
            *s = next;
        }
    };
    let n_users = rng.gen_range(1..=shape.users);
    let n_ous = rng.gen_range(1..=shape.ous);
    let n_roles = rng.gen_range(1..=shape.roles);
    let n_perms = rng.gen_range(1..=shape.perms);
    let users: Vec<UserId> = (0..n_users).map(|i| user(&format!("u{i:02}"))).collect();
    let roles: Vec<RoleId> = (0..n_roles).map(|i| role(&format!("r{i:02}"))).collect();
    let perms: Vec<PermId> = (0..n_perms).map(|i| perm(&format!("p{i:02}"))).collect();
    let ous: Vec<OuId> = (0..n_ous).map(|i| ou(&format!("o{i:02}"))).collect();

    for u in &users {
        try_apply(&mut s, Change::AddUser { user: u.clone() });
    }
    for r in &roles {
        try_apply(&mut s, Change::AddRole { role: r.clone() });
    }
    for (i, p) in perms.iter().enumerate() {
        try_apply(
            &mut s,
            Change::AddPerm { perm: p.clone(), operation: name(&format!("op{}", i % 4)), object: name(&format!("obj{i}")) },
        );
    }
    for (i, o) in ous.iter().enumerate() {
        let parent = if i > 0 && rng.gen_bool(0.6) { Some(ous[rng.gen_range(0..i)].clone()) } else { None };
        let department = if parent.is_none() && rng.gen_bool(0.8) {
            Some(name(&format!("D{}", rng.gen_range(1..=3))))
        } else {
            None
        };
        try_apply(&mut s, Change::CreateOu { ou: o.clone(), parent, department });
    }
    for _ in 0..rng.gen_range(0..=n_roles * 2) {
        let (a, b) = (pick(rng, &roles).clone(), pick(rng, &roles).clone());
        try_apply(&mut s, Change::AddRoleInheritance { senior: a, junior: b });
    }
    for _ in 0..rng.gen_range(0..=n_perms * 2) {
        try_apply(&mut s, Change::GrantPermToRole { perm: pick(rng, &perms).clone(), role: pick(rng, &roles).clone() });
    }
    for _ in 0..rng.gen_range(0..=n_ous * 2) {
        try_apply(&mut s, Change::AssignOuToRole { ou: pick(rng, &ous).clone(), role: pick(rng, &roles).clone() });
    }
    for _ in 0..rng.gen_range(0..=n_users * 2) {
        try_apply(&mut s, Change::AssignUserToOu { user: pick(rng, &users).clone(), ou: pick(rng, &ous).clone() });
    }
    for _ in 0..rng.gen_range(0..=n_users / 2) {
        try_apply(
            &mut s,
            Change::AssignUserToRoleDirect { user: pick(rng, &users).clone(), role: pick(rng, &roles).clone() },
        );
    }
    if n_roles >= 2 && rng.gen_bool(0.3) {
        let a = pick(rng, &roles).clone();
        let b = pick(rng, &roles).clone();
        if a != b {
            let c = SodConstraint { id: name("ssd.r"), roles: [a, b].into(), cardinality: 2 };
            try_apply(&mut s, Change::AddSsd { constraint: c });
        }
    }
    s
}

/// Appoints one coordinator `c.<dept>` per department label present.
pub fn with_coordinators(s: &PolicyState) -> PolicyState {
    let mut s = s.clone();
    for d in s.departments() {
        s = appoint(&s, &format!("c.{d}"), ManagerRole::ItCoordinator, Some(d.as_str()));
    }
    s
}

/// A random action from a coordinator's repertoire, over the state's users
/// and OUs plus a few fresh user names.
pub fn random_coordinator_action<R: Rng>(rng: &mut R, s: &PolicyState, fresh: &mut u32) -> AdminAction {
    let users: Vec<UserId> = s.users().cloned().collect();
    let ous: Vec<OuId> = s.ous().map(|o| o.id.clone()).collect();
    let any_user = |rng: &mut R| -> UserId {
        if users.is_empty() || rng.gen_bool(0.1) {
            user("u.nobody")
        } else {
            pick(rng, &users).clone()
        }
    };
    let change = match rng.gen_range(0..5) {
        0 => {
            *fresh += 1;
            Change::AddUser { user: user(&format!("u.fresh{fresh}")) }
        }
        1 => Change::DeleteUser { user: any_user(rng) },
        2 => Change::AssignUserToOu { user: any_user(rng), ou: pick(rng, &ous).clone() },
        3 => {
            let u = any_user(rng);
            let from = s.memberships(&u).next().cloned().unwrap_or_else(|| pick(rng, &ous).clone());
            Change::RemoveUserFromOu { user: u, ou: from }
        }
        _ => {
            let u = any_user(rng);
            let from = s.memberships(&u).next().cloned().unwrap_or_else(|| pick(rng, &ous).clone());
            Change::MoveUserOu { user: u, from, to: pick(rng, &ous).clone() }
        }
    };
    AdminAction::Change(change)
}
