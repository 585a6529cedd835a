//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use num_rational::Ratio;
use ourbac::admin::{execute, AdminAction, AdminError, DenyReason, DirectivePattern, Engine, ManagerRole};
use ourbac::analyze::{bounded_reach_with, containment_bound, Reach, ReachLimits, SafetyGoal};
use ourbac::bench::{run_paired, ChurnConfig, ChurnRun};
use ourbac::ids::{PermId, UserId};
use ourbac::model::{apply_change, Change, EngineConfig, EntityKind, PolicyState};
use ourbac::persist::{parse_audit, parse_snapshot, replay_audit, serialize_snapshot, AuditVerdict, Snapshot};
use ourbac::resolver;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    check(elapsed <= limit, || format!("{what} took {elapsed:.1?}, limit {limit:?}"))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut states, mut users, mut mismatches) = (0, 0, 0);
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&mut rng, ORACLE_SHAPE);
        let oracle = Oracle::compute(&s);
        for u in s.users() {
            users += 1;
            if resolver::authorized_roles(&s, u).unwrap() != oracle.roles[u]
                || resolver::effective_permissions(&s, u).unwrap() != oracle.perms[u]
            {
                mismatches += 1;
            }
        }
        states += 1;
    }
    let elapsed = start.elapsed();
    check(mismatches == 0, || format!("{mismatches} mismatching users"))?;
    within(elapsed, Duration::from_secs(60), "oracle run")?;
    Ok(format!("{states} states, {users} users, 0 mismatches, {elapsed:.1?}"))
}

fn coordinator_containment() -> Outcome {
    let start = Instant::now();
    let mut runs = 0;
    let mut executed = 0;
    let mut seed = 0u64;
    while runs < 200 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let base = random_state(&mut rng, ORACLE_SHAPE);
        if base.departments().is_empty() {
            continue;
        }
        let s0 = with_coordinators(&base);
        let dept = base.departments().into_iter().collect::<Vec<_>>()[rng.gen_range(0..base.departments().len())].clone();
        let coordinator = principal(&format!("c.{dept}"));
        let bound = containment_bound(&s0, &coordinator).map_err(|e| e.to_string())?;
        let prior: BTreeMap<UserId, BTreeSet<PermId>> =
            s0.users().map(|u| (u.clone(), resolver::effective_permissions(&s0, u).unwrap())).collect();
        let direct: BTreeMap<UserId, BTreeSet<PermId>> =
            s0.users().map(|u| (u.clone(), resolver::direct_permissions(&s0, u).unwrap())).collect();

        let mut s = s0.clone();
        let mut fresh = 0;
        for _ in 0..rng.gen_range(1..=20) {
            let action = random_coordinator_action(&mut rng, &s, &mut fresh);
            if let Ok(done) = execute(&s, &coordinator, &action) {
                s = done.state;
                executed += 1;
            }
        }
        let empty = BTreeSet::new();
        for u in s.users() {
            let post = resolver::effective_permissions(&s, u).unwrap();
            let before = prior.get(u).unwrap_or(&empty);
            let own = direct.get(u).unwrap_or(&empty);
            let escaped: Vec<&PermId> =
                post.iter().filter(|p| !bound.contains(*p) && !before.contains(*p) && !own.contains(*p)).collect();
            check(escaped.is_empty(), || format!("seed {seed}: {u} gained {escaped:?} outside the bound of {coordinator}"))?;
        }
        runs += 1;
    }
    let fuzz = start.elapsed();

    let s = campus_with_coordinators();
    let limits = ReachLimits { depth: 6, state_cap: 200_000 };
    let principals = BTreeSet::from([principal("c.ee")]);
    let t = Instant::now();
    let mut explored = Vec::new();
    for goal in [
        SafetyGoal { user: user("u.bob"), perm: perm("p.lab") },
        SafetyGoal { user: user("u.new"), perm: perm("p.lab") },
    ] {
        match bounded_reach_with(&s, &principals, &goal, limits).map_err(|e| e.to_string())? {
            Reach::Unreachable { depth: 6, explored: n } => explored.push(n),
            other => return Err(format!("goal ({}, {}) gave {other:?}", goal.user, goal.perm)),
        }
    }
    let reach = t.elapsed();
    within(reach, Duration::from_secs(120), "bounded reach")?;
    Ok(format!(
        "{runs} runs, {executed} executed coordinator actions, 0 escapes ({fuzz:.1?}); depth-6 reach for c.ee Unreachable, {explored:?} states ({reach:.1?})"
    ))
}

fn structural_script() -> Vec<(&'static str, Change)> {
    let mut out = Vec::new();
    for i in 1..=5 {
        out.push((
            "pm",
            Change::AddPerm { perm: perm(&format!("p.n{i}")), operation: name("use"), object: name(&format!("res{i}")) },
        ));
    }
    for i in 1..=5 {
        out.push(("rm", Change::AddRole { role: role(&format!("r.n{i}")) }));
    }
    for i in 1..=5 {
        out.push((
            "om",
            Change::CreateOu { ou: ou(&format!("ou.cs.n{i}")), parent: Some(ou("ou.cs")), department: None },
        ));
    }
    for i in 1..=5 {
        out.push(("rm", Change::GrantPermToRole { perm: perm(&format!("p.n{i}")), role: role(&format!("r.n{i}")) }));
    }
    out.push(("rm", Change::AddRoleInheritance { senior: role("r.n1"), junior: role("r.n2") }));
    out.push(("rm", Change::AddRoleInheritance { senior: role("r.n2"), junior: role("r.n3") }));
    for i in 1..=3 {
        out.push(("rm", Change::AssignOuToRole { ou: ou(&format!("ou.cs.n{i}")), role: role(&format!("r.n{i}")) }));
    }
    out
}

fn managed_campus(config: EngineConfig) -> Engine {
    let admin = principal("admin");
    let mut e = Engine::bootstrap(admin.clone(), config);
    for c in campus_changes() {
        e.execute(&admin, c.into()).unwrap();
    }
    for (who, role) in
        [("pm", ManagerRole::PermissionManager), ("rm", ManagerRole::RoleManager), ("om", ManagerRole::OuManager)]
    {
        e.execute(&admin, AdminAction::AppointManager { principal: principal(who), role, scope: None }).unwrap();
    }
    e
}

fn two_key() -> Outcome {
    let script = structural_script();
    let admin = principal("admin");

    let mut e = managed_campus(EngineConfig::default());
    let setup = e.log().len();
    for (who, change) in &script {
        e.execute(&admin, AdminAction::IssueDirective { pattern: DirectivePattern::exact(change) })
            .map_err(|err| err.to_string())?;
        e.execute(&principal(who), change.clone().into()).map_err(|err| format!("{who}: {err}"))?;
    }
    // Audit-only check: pair each executed sub-manager change with an
    // earlier, unused IssueDirective record by a distinct RBAC manager.
    let state = e.state();
    let is_rbac = |p: &ourbac::ids::PrincipalId| {
        state.assignments_of(p).any(|a| a.role == ManagerRole::RbacManager)
    };
    let mut open: Vec<(usize, &ourbac::ids::PrincipalId, &DirectivePattern)> = Vec::new();
    let mut paired = 0;
    for (i, r) in e.log().records().iter().enumerate().skip(setup) {
        check(r.verdict == AuditVerdict::Executed, || format!("record {} not executed", r.seq))?;
        match &r.action {
            AdminAction::IssueDirective { pattern } if is_rbac(&r.principal) => open.push((i, &r.principal, pattern)),
            AdminAction::Change(c) => {
                let k = open
                    .iter()
                    .position(|(_, issuer, p)| p.matches(c) && **issuer != r.principal)
                    .ok_or_else(|| format!("record {} has no matching directive", r.seq))?;
                open.remove(k);
                paired += 1;
            }
            other => return Err(format!("unexpected action {}", other.kind_name())),
        }
    }
    check(paired == 25, || format!("{paired} paired changes"))?;

    let mut off = managed_campus(EngineConfig { directive_mode: false, ..EngineConfig::default() });
    for (who, change) in &script {
        let r = off.execute(&principal(who), change.clone().into()).map_err(|err| format!("off: {who}: {err}"))?;
        check(r.consumed.is_none(), || "consumed a directive with directive mode off".into())?;
    }

    let mut bare = managed_campus(EngineConfig::default());
    let mut denied = 0;
    for (who, change) in &script {
        match bare.execute(&principal(who), change.clone().into()) {
            Err(AdminError::Denied(DenyReason::NoDirective)) => denied += 1,
            other => return Err(format!("without directive: {other:?}")),
        }
    }
    check(denied == 25, || format!("{denied} denied"))?;
    Ok("25/25 changes paired with a distinct issuer's directive; 25/25 execute with directives off; 25/25 denied NoDirective without".into())
}

fn manager_ssd() -> Outcome {
    let subs = [ManagerRole::PermissionManager, ManagerRole::RoleManager, ManagerRole::OuManager];
    let mut pairs = 0;
    for enabled in [true, false] {
        let config = EngineConfig { manager_ssd_enabled: enabled, ..EngineConfig::default() };
        for a in subs {
            for b in subs.into_iter().filter(|b| *b != a) {
                let s = PolicyState::bootstrap(principal("admin"), config);
                let appoint = |role| AdminAction::AppointManager { principal: principal("p"), role, scope: None };
                let s = execute(&s, &principal("admin"), &appoint(a)).map_err(|e| e.to_string())?.state;
                let second = execute(&s, &principal("admin"), &appoint(b));
                match (enabled, second) {
                    (true, Err(e)) if e.code() == "SsdViolation" => {}
                    (false, Ok(done)) => {
                        check(done.state.assignments_of(&principal("p")).count() == 2, || "second role missing".into())?
                    }
                    (_, other) => return Err(format!("{a}+{b} enabled={enabled}: {other:?}")),
                }
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} ordered role pairs: rejected with SsdViolation when enabled, accepted when disabled"))
}

fn campus_scale_config() -> ChurnConfig {
    ChurnConfig {
        departments: 8,
        courses_per_department: 5,
        semesters: 1,
        intake_per_course: 250,
        graduate_fraction: Ratio::new(1, 10),
        roles_per_student: 3,
        seed: 2024,
    }
}

fn load_sharing(keep: &mut Option<ChurnRun>) -> Outcome {
    let config = campus_scale_config();
    let start = Instant::now();
    let (report, _flat, ou) = run_paired(&config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let n = config.total_intake();
    let r = u64::from(config.roles_per_student);
    check(n == 10_000, || format!("{n} students"))?;
    let flat_assign = report.flat.ops_by_variant.get("AssignUserToRoleDirect").copied().unwrap_or(0);
    let ou_assign = report.ou.ops_by_variant.get("AssignUserToOu").copied().unwrap_or(0);
    check(flat_assign == n * r, || format!("flat role assignments {flat_assign}, expected {}", n * r))?;
    check(ou_assign == n, || format!("OU memberships {ou_assign}, expected {n}"))?;
    check(report.flat.assignment_ops == n * r && report.ou.assignment_ops == n, || "assignment_ops disagree".into())?;
    check(report.flat.student_ops - report.ou.student_ops == n * (r - 1), || {
        format!("student ops {} vs {}", report.flat.student_ops, report.ou.student_ops)
    })?;
    check(report.ou.central_admin_share < report.flat.central_admin_share, || {
        format!("shares {} vs {}", report.ou.central_admin_share, report.flat.central_admin_share)
    })?;
    check(report.mismatches.is_empty(), || format!("{} entitlement mismatches", report.mismatches.len()))?;
    within(elapsed, Duration::from_secs(300), "10,000-student run")?;
    let students = ou.students(0).count();
    *keep = Some(ou);
    Ok(format!(
        "{n} students: flat {flat_assign} role assignments vs OU {ou_assign} memberships (ratio {}); central share flat {} vs OU {} (~{:.3}); {students} students with identical permissions; {elapsed:.1?}",
        Ratio::new(flat_assign, ou_assign),
        report.flat.central_admin_share,
        report.ou.central_admin_share,
        *report.ou.central_admin_share.numer() as f64 / *report.ou.central_admin_share.denom() as f64
    ))
}

fn replay_determinism(run: Option<&ChurnRun>) -> Outcome {
    let run = run.ok_or("criterion 5 did not produce an OU run")?;
    let engine = run.engine();
    let anchor = engine.log().anchor();
    let text = engine.log().to_text(engine.genesis());
    let start = Instant::now();
    let (genesis, log) = parse_audit(&text, Some(&anchor)).map_err(|e| e.to_string())?;
    let replayed = replay_audit(log.records(), &genesis).map_err(|e| e.to_string())?;
    let live = engine.snapshot().to_text();
    let rebuilt = Snapshot::new(replayed, log.anchor()).to_text();
    check(live == rebuilt, || "replayed snapshot differs from live snapshot".into())?;
    let replay_time = start.elapsed();

    // Line boundaries of the record region.
    let body = text.match_indices('\n').nth(1).expect("header and genesis").0 + 1;
    let starts: Vec<usize> =
        std::iter::once(body).chain(text[body..].match_indices('\n').map(|(i, _)| body + i + 1)).collect();
    let seq_of = |pos: usize| starts.partition_point(|s| *s <= pos) as u64;
    let n = log.len();
    let mut positions: BTreeSet<usize> = BTreeSet::new();
    positions.extend(starts[1]..starts[2]);
    positions.extend(starts[n - 1]..starts[n]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    while positions.len() < (starts[2] - starts[1]) + (starts[n] - starts[n - 1]) + 64 {
        positions.insert(rng.gen_range(body..text.len()));
    }
    let bytes = text.as_bytes();
    for &pos in &positions {
        let replacement = if bytes[pos] == b'x' { b'y' } else { b'x' };
        let mut corrupt = bytes.to_vec();
        corrupt[pos] = replacement;
        let corrupt = String::from_utf8(corrupt).expect("ASCII log");
        let got = parse_audit(&corrupt, Some(&anchor)).and_then(|(g, l)| replay_audit(l.records(), &g).map(|_| ()));
        match got {
            Err(e) if e.seq == seq_of(pos) => {}
            other => return Err(format!("byte {pos} (record {}): {other:?}", seq_of(pos))),
        }
    }
    Ok(format!(
        "{n} records replayed byte-identically ({replay_time:.1?}); {} single-byte corruptions each located at their record",
        positions.len()
    ))
}

/// Rebuilds `s` from its final entity and relation sets in a shuffled
/// order.
fn rebuild_shuffled(s: &PolicyState, rng: &mut ChaCha8Rng) -> PolicyState {
    let mut out = PolicyState::bootstrap(principal("admin"), *s.config());
    let apply = |out: &mut PolicyState, c: Change| *out = apply_change(out, &c).unwrap();

    let mut tombs: Vec<(EntityKind, String)> = s.tombstones().cloned().collect();
    tombs.shuffle(rng);
    for (kind, id) in tombs {
        let (add, del) = match kind {
            EntityKind::User => (Change::AddUser { user: user(&id) }, Change::DeleteUser { user: user(&id) }),
            EntityKind::Role => (Change::AddRole { role: role(&id) }, Change::DeleteRole { role: role(&id) }),
            EntityKind::Perm => (
                Change::AddPerm { perm: perm(&id), operation: name("tomb"), object: name(&id) },
                Change::DeletePerm { perm: perm(&id) },
            ),
            EntityKind::Ou => {
                (Change::CreateOu { ou: ou(&id), parent: None, department: None }, Change::DeleteOu { ou: ou(&id) })
            }
            other => panic!("unexpected tombstone kind {other}"),
        };
        apply(&mut out, add);
        apply(&mut out, del);
    }

    let mut entities: Vec<Change> = Vec::new();
    entities.extend(s.users().map(|u| Change::AddUser { user: u.clone() }));
    entities.extend(s.roles().map(|r| Change::AddRole { role: r.clone() }));
    entities.extend(
        s.perms().map(|p| Change::AddPerm { perm: p.id.clone(), operation: p.operation.clone(), object: p.object.clone() }),
    );
    entities.shuffle(rng);
    for c in entities {
        apply(&mut out, c);
    }
    let mut pending: Vec<_> = s.ous().cloned().collect();
    while !pending.is_empty() {
        let ready: Vec<usize> = (0..pending.len())
            .filter(|i| pending[*i].parent.as_ref().is_none_or(|p| out.ou(p).is_some()))
            .collect();
        let o = pending.swap_remove(*ready.choose(rng).expect("forest"));
        apply(&mut out, Change::CreateOu { ou: o.id, parent: o.parent, department: o.department });
    }
    for c in s.ssd() {
        apply(&mut out, Change::AddSsd { constraint: c.clone() });
    }
    let mut rows: Vec<Change> = Vec::new();
    rows.extend(s.ua_direct().map(|(u, r)| Change::AssignUserToRoleDirect { user: u.clone(), role: r.clone() }));
    rows.extend(s.uo().map(|(u, o)| Change::AssignUserToOu { user: u.clone(), ou: o.clone() }));
    rows.extend(s.or_assign().map(|(o, r)| Change::AssignOuToRole { ou: o.clone(), role: r.clone() }));
    rows.extend(s.pa().map(|(p, r)| Change::GrantPermToRole { perm: p.clone(), role: r.clone() }));
    rows.extend(s.rh().map(|(a, b)| Change::AddRoleInheritance { senior: a.clone(), junior: b.clone() }));
    rows.shuffle(rng);
    for c in rows {
        apply(&mut out, c);
    }
    out
}

fn serialization() -> Outcome {
    let shape = Shape { users: 20, ous: 8, roles: 8, perms: 12 };
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(70_000 + seed);
        let mut s = random_state(&mut rng, shape);
        let users: Vec<UserId> = s.users().cloned().collect();
        for u in users.choose_multiple(&mut rng, 2) {
            s = apply_change(&s, &Change::DeleteUser { user: u.clone() }).unwrap();
        }
        let first_role = s.roles().next().cloned();
        if let Some(r) = first_role {
            s = apply_change(&s, &Change::DeleteRole { role: r }).unwrap();
        }
        let leaves: Vec<_> =
            s.ous().filter(|o| s.children(&o.id).next().is_none() && s.members(&o.id).next().is_none()).map(|o| o.id.clone()).collect();
        if let Some(o) = leaves.first() {
            s = apply_change(&s, &Change::DeleteOu { ou: o.clone() }).unwrap();
        }
        let bytes = serialize_snapshot(&s);
        let back = parse_snapshot(&bytes).map_err(|e| format!("seed {seed}: {e}"))?;
        check(back == s, || format!("seed {seed}: round trip changed the state"))?;
        check(serialize_snapshot(&back) == bytes, || format!("seed {seed}: re-serialization differs"))?;
        let permuted = rebuild_shuffled(&s, &mut rng);
        check(serialize_snapshot(&permuted) == bytes, || format!("seed {seed}: permuted construction differs"))?;
    }
    Ok("100 states: round trip identical, permuted construction byte-identical".into())
}

fn run(id: u32, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    match result {
        Ok(detail) => {
            println!("criterion {id} [{title}]: PASS - {detail}");
            true
        }
        Err(why) => {
            println!("criterion {id} [{title}]: FAIL - {why}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ou_run = None;
    let results = [
        run(1, "oracle equivalence", oracle_equivalence),
        run(2, "coordinator containment", coordinator_containment),
        run(3, "two-key audit", two_key),
        run(4, "manager separation of duty", manager_ssd),
        run(5, "load sharing at 10,000 students", || load_sharing(&mut ou_run)),
        run(6, "replay determinism", || replay_determinism(ou_run.as_ref())),
        run(7, "canonical serialization", serialization),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
