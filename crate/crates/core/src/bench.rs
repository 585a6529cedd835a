//! Administrative workload under flat user-role RBAC versus OU-RBAC,
//! driven by a synthetic, seeded semester churn.
//!
//! Both modes run a real [`Engine`] over the same event stream and target
//! identical entitlements: each (department, course, level) has
//! `roles_per_student` roles with one permission each, and a student at
//! level `l` of a course holds exactly that level's roles. Flat mode gives
//! every student those roles directly; OU mode puts each intake cohort in
//! its own OU and points the OU at the level's roles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::admin::{AdminAction, AdminError, DirectivePattern, Engine, ManagerRole};
use crate::ids::{Name, OuId, PermId, PrincipalId, RoleId, UserId};
use crate::model::{Change, ChangeKind, EngineConfig};
use crate::persist::AuditVerdict;
use crate::resolver;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChurnConfig {
    pub departments: u32,
    pub courses_per_department: u32,
    pub semesters: u32,
    pub intake_per_course: u32,
    /// Share of enrolled students graduating at the start of each
    /// semester after the first.
    pub graduate_fraction: Ratio<u64>,
    pub roles_per_student: u32,
    pub seed: u64,
}

impl ChurnConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let counts = [
            ("departments", self.departments),
            ("courses_per_department", self.courses_per_department),
            ("semesters", self.semesters),
            ("intake_per_course", self.intake_per_course),
            ("roles_per_student", self.roles_per_student),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(BenchError::Config(format!("{field} must be at least 1")));
            }
        }
        if self.graduate_fraction > Ratio::from_integer(1) {
            return Err(BenchError::Config("graduate_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total_intake(&self) -> u64 {
        u64::from(self.departments)
            * u64::from(self.courses_per_department)
            * u64::from(self.intake_per_course)
            * u64::from(self.semesters)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Flat,
    Ou,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Flat => "flat",
            Mode::Ou => "ou",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "flat" => Some(Mode::Flat),
            "ou" => Some(Mode::Ou),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("invalid churn config: {0}")]
    Config(String),
    #[error("bench step {principal} {action} failed: {error}")]
    Admin { principal: PrincipalId, action: String, error: AdminError },
}

/// A student's course placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Course {
    pub department: u32,
    pub course: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enrollment {
    pub student: UserId,
    pub course: Course,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemesterEvents {
    pub semester: u32,
    pub graduates: Vec<UserId>,
    pub enrollments: Vec<Enrollment>,
}

/// The full seeded event stream. Both modes consume the same stream.
pub fn generate_events(config: &ChurnConfig) -> Vec<SemesterEvents> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut enrolled: Vec<UserId> = Vec::new();
    let mut next_id = 0u64;
    let mut out = Vec::new();
    for semester in 0..config.semesters {
        let mut graduates = Vec::new();
        if semester > 0 {
            let n = (config.graduate_fraction * enrolled.len() as u64).to_integer() as usize;
            let mut chosen: Vec<UserId> = enrolled.choose_multiple(&mut rng, n).cloned().collect();
            chosen.sort();
            let gone: BTreeSet<&UserId> = chosen.iter().collect();
            enrolled.retain(|u| !gone.contains(u));
            graduates = chosen;
        }
        let mut slots: Vec<Course> = Vec::new();
        for department in 1..=config.departments {
            for course in 1..=config.courses_per_department {
                for _ in 0..config.intake_per_course {
                    slots.push(Course { department, course });
                }
            }
        }
        slots.shuffle(&mut rng);
        let enrollments: Vec<Enrollment> = slots
            .into_iter()
            .map(|course| {
                next_id += 1;
                Enrollment { student: UserId::new(format!("u.{next_id}")).expect("valid"), course }
            })
            .collect();
        enrolled.extend(enrollments.iter().map(|e| e.student.clone()));
        out.push(SemesterEvents { semester, graduates, enrollments });
    }
    out
}

fn id<T>(make: fn(String) -> Result<T, crate::ids::IdError>, s: String) -> T {
    make(s).expect("bench identifiers are well-formed")
}

fn role_id(c: Course, level: u32, k: u32) -> RoleId {
    id(RoleId::new, format!("r.d{}.c{}.l{level}.k{k}", c.department, c.course))
}

fn perm_id(c: Course, level: u32, k: u32) -> PermId {
    id(PermId::new, format!("p.d{}.c{}.l{level}.k{k}", c.department, c.course))
}

fn dept_ou(d: u32) -> OuId {
    id(OuId::new, format!("ou.d{d}"))
}

fn course_ou(c: Course) -> OuId {
    id(OuId::new, format!("ou.d{}.c{}", c.department, c.course))
}

fn cohort_ou(c: Course, intake: u32) -> OuId {
    id(OuId::new, format!("ou.d{}.c{}.s{intake}", c.department, c.course))
}

fn coordinator(d: u32) -> PrincipalId {
    id(PrincipalId::new, format!("c.d{d}"))
}

fn principal(s: &str) -> PrincipalId {
    id(PrincipalId::new, s.to_string())
}

/// Permissions a student of `course` at `level` is meant to hold.
pub fn target_entitlements(config: &ChurnConfig, course: Course, level: u32) -> BTreeSet<PermId> {
    (1..=config.roles_per_student).map(|k| perm_id(course, level, k)).collect()
}

/// An engine being driven through the churn.
pub struct ChurnRun {
    config: ChurnConfig,
    mode: Mode,
    engine: Engine,
    /// Live students with their course and intake semester.
    students: BTreeMap<UserId, (Course, u32)>,
    courses: Vec<Course>,
}

impl ChurnRun {
    pub fn new(config: &ChurnConfig, mode: Mode) -> Result<Self, BenchError> {
        config.validate()?;
        let courses = (1..=config.departments)
            .flat_map(|department| {
                (1..=config.courses_per_department).map(move |course| Course { department, course })
            })
            .collect();
        let mut run = Self {
            config: config.clone(),
            mode,
            engine: Engine::bootstrap(principal("rbac"), EngineConfig::default()),
            students: BTreeMap::new(),
            courses,
        };
        run.scaffold()?;
        Ok(run)
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Live students with their course and current level.
    pub fn students(&self, semester: u32) -> impl Iterator<Item = (&UserId, Course, u32)> {
        self.students.iter().map(move |(u, (c, intake))| (u, *c, semester - intake))
    }

    fn exec(&mut self, who: &PrincipalId, action: AdminAction) -> Result<(), BenchError> {
        let shown = crate::encoding::encode_action(&action);
        self.engine
            .execute(who, action)
            .map(|_| ())
            .map_err(|error| BenchError::Admin { principal: who.clone(), action: shown, error })
    }

    /// A structural change by a sub-manager, preceded by the RBAC
    /// manager's directive for it.
    fn directed(&mut self, who: &str, change: Change) -> Result<(), BenchError> {
        let pattern = DirectivePattern::exact(&change);
        self.exec(&principal("rbac"), AdminAction::IssueDirective { pattern })?;
        self.exec(&principal(who), AdminAction::Change(change))
    }

    fn scaffold(&mut self) -> Result<(), BenchError> {
        let rbac = principal("rbac");
        if self.mode == Mode::Ou {
            for (who, role) in [
                ("pm", ManagerRole::PermissionManager),
                ("rm", ManagerRole::RoleManager),
                ("om", ManagerRole::OuManager),
            ] {
                self.exec(&rbac, AdminAction::AppointManager { principal: principal(who), role, scope: None })?;
            }
        }
        let courses = self.courses.clone();
        for &c in &courses {
            for level in 0..self.config.semesters {
                for k in 1..=self.config.roles_per_student {
                    let (p, r) = (perm_id(c, level, k), role_id(c, level, k));
                    let add_perm = Change::AddPerm {
                        perm: p.clone(),
                        operation: id(Name::new, "use".to_string()),
                        object: id(Name::new, format!("d{}.c{}.l{level}.k{k}", c.department, c.course)),
                    };
                    let add_role = Change::AddRole { role: r.clone() };
                    let grant = Change::GrantPermToRole { perm: p, role: r };
                    match self.mode {
                        Mode::Flat => {
                            for change in [add_perm, add_role, grant] {
                                self.exec(&rbac, change.into())?;
                            }
                        }
                        Mode::Ou => {
                            self.directed("pm", add_perm)?;
                            self.directed("rm", add_role)?;
                            self.directed("rm", grant)?;
                        }
                    }
                }
            }
        }
        if self.mode == Mode::Ou {
            for d in 1..=self.config.departments {
                self.directed(
                    "om",
                    Change::CreateOu {
                        ou: dept_ou(d),
                        parent: None,
                        department: Some(id(Name::new, format!("D{d}"))),
                    },
                )?;
                self.exec(
                    &principal("om"),
                    AdminAction::AppointManager {
                        principal: coordinator(d),
                        role: ManagerRole::ItCoordinator,
                        scope: Some(id(Name::new, format!("D{d}"))),
                    },
                )?;
            }
            for &c in &courses {
                self.directed("om", Change::CreateOu { ou: course_ou(c), parent: Some(dept_ou(c.department)), department: None })?;
            }
        }
        Ok(())
    }

    /// Applies one semester's events.
    pub fn step(&mut self, events: &SemesterEvents) -> Result<(), BenchError> {
        let s = events.semester;
        for u in &events.graduates {
            let (c, _) = self.students.remove(u).expect("graduates are enrolled");
            let who = match self.mode {
                Mode::Flat => principal("rbac"),
                Mode::Ou => coordinator(c.department),
            };
            self.exec(&who, Change::DeleteUser { user: u.clone() }.into())?;
        }
        if s > 0 {
            self.advance(s)?;
        }
        if self.mode == Mode::Ou {
            let courses = self.courses.clone();
            for &c in &courses {
                let cohort = cohort_ou(c, s);
                self.directed("om", Change::CreateOu { ou: cohort.clone(), parent: Some(course_ou(c)), department: None })?;
                for k in 1..=self.config.roles_per_student {
                    self.directed("rm", Change::AssignOuToRole { ou: cohort.clone(), role: role_id(c, 0, k) })?;
                }
            }
        }
        for e in &events.enrollments {
            let c = e.course;
            match self.mode {
                Mode::Flat => {
                    let rbac = principal("rbac");
                    self.exec(&rbac, Change::AddUser { user: e.student.clone() }.into())?;
                    for k in 1..=self.config.roles_per_student {
                        let change = Change::AssignUserToRoleDirect { user: e.student.clone(), role: role_id(c, 0, k) };
                        self.exec(&rbac, change.into())?;
                    }
                }
                Mode::Ou => {
                    let who = coordinator(c.department);
                    self.exec(&who, Change::AddUser { user: e.student.clone() }.into())?;
                    let change = Change::AssignUserToOu { user: e.student.clone(), ou: cohort_ou(c, s) };
                    self.exec(&who, change.into())?;
                }
            }
            self.students.insert(e.student.clone(), (c, s));
        }
        Ok(())
    }

    /// Moves every continuing student from level `l - 1` to level `l`.
    fn advance(&mut self, semester: u32) -> Result<(), BenchError> {
        let rps = self.config.roles_per_student;
        match self.mode {
            Mode::Flat => {
                let rbac = principal("rbac");
                let students: Vec<(UserId, Course, u32)> =
                    self.students(semester).map(|(u, c, l)| (u.clone(), c, l)).collect();
                for (u, c, level) in students {
                    for k in 1..=rps {
                        let revoke = Change::RevokeUserFromRoleDirect { user: u.clone(), role: role_id(c, level - 1, k) };
                        self.exec(&rbac, revoke.into())?;
                        let assign = Change::AssignUserToRoleDirect { user: u.clone(), role: role_id(c, level, k) };
                        self.exec(&rbac, assign.into())?;
                    }
                }
            }
            Mode::Ou => {
                // Re-point every earlier cohort OU, empty or not.
                let courses = self.courses.clone();
                for intake in 0..semester {
                    let level = semester - intake;
                    for &c in &courses {
                        let cohort = cohort_ou(c, intake);
                        for k in 1..=rps {
                            self.directed("rm", Change::RevokeOuFromRole { ou: cohort.clone(), role: role_id(c, level - 1, k) })?;
                            self.directed("rm", Change::AssignOuToRole { ou: cohort.clone(), role: role_id(c, level, k) })?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Students whose effective permissions differ from their target.
    pub fn entitlement_mismatches(&self, semester: u32) -> Vec<UserId> {
        let state = self.engine.state();
        self.students(semester)
            .filter(|(u, c, l)| {
                resolver::effective_permissions(state, u).ok() != Some(target_entitlements(&self.config, *c, *l))
            })
            .map(|(u, _, _)| u.clone())
            .collect()
    }

    pub fn report(&self) -> BenchReport {
        BenchReport::from_engine(self.mode, &self.engine)
    }
}

/// Variants counted as per-student handling; everything else is
/// scaffolding.
const STUDENT_VARIANTS: [ChangeKind; 7] = [
    ChangeKind::AddUser,
    ChangeKind::DeleteUser,
    ChangeKind::AssignUserToOu,
    ChangeKind::RemoveUserFromOu,
    ChangeKind::MoveUserOu,
    ChangeKind::AssignUserToRoleDirect,
    ChangeKind::RevokeUserFromRoleDirect,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchReport {
    pub mode: Mode,
    /// Executed admin actions, directive issuance included.
    pub total_admin_ops: u64,
    pub ops_by_principal: BTreeMap<String, u64>,
    pub ops_by_variant: BTreeMap<String, u64>,
    pub student_ops: u64,
    pub scaffold_ops: u64,
    /// Per-student role assignments (flat) or OU memberships (OU).
    pub assignment_ops: u64,
    /// Fraction of ops executed by non-coordinator principals.
    pub central_admin_share: Ratio<u64>,
}

impl BenchReport {
    /// Tallies executed records from the engine's audit log.
    pub fn from_engine(mode: Mode, engine: &Engine) -> Self {
        let coordinators: BTreeSet<&PrincipalId> = engine
            .state()
            .assignments()
            .filter(|a| a.role == ManagerRole::ItCoordinator)
            .map(|a| &a.principal)
            .collect();
        let mut by_principal: BTreeMap<String, u64> = BTreeMap::new();
        let mut by_variant: BTreeMap<String, u64> = BTreeMap::new();
        let (mut total, mut central, mut student, mut assignment) = (0u64, 0u64, 0u64, 0u64);
        for r in engine.log().records().iter().filter(|r| r.verdict == AuditVerdict::Executed) {
            total += 1;
            *by_principal.entry(r.principal.to_string()).or_default() += 1;
            *by_variant.entry(r.action.kind_name().to_string()).or_default() += 1;
            if !coordinators.contains(&r.principal) {
                central += 1;
            }
            if let Some(c) = r.action.as_change() {
                if STUDENT_VARIANTS.contains(&c.kind()) {
                    student += 1;
                }
                if matches!(c.kind(), ChangeKind::AssignUserToOu | ChangeKind::AssignUserToRoleDirect) {
                    assignment += 1;
                }
            }
        }
        let share = if total == 0 { Ratio::from_integer(0) } else { Ratio::new(central, total) };
        BenchReport {
            mode,
            total_admin_ops: total,
            ops_by_principal: by_principal,
            ops_by_variant: by_variant,
            student_ops: student,
            scaffold_ops: total - student,
            assignment_ops: assignment,
            central_admin_share: share,
        }
    }

    /// (metric, value) rows in a fixed order.
    pub fn metrics(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("total_admin_ops".to_string(), self.total_admin_ops.to_string()),
            ("student_ops".to_string(), self.student_ops.to_string()),
            ("scaffold_ops".to_string(), self.scaffold_ops.to_string()),
            ("assignment_ops".to_string(), self.assignment_ops.to_string()),
            ("central_admin_share".to_string(), self.central_admin_share.to_string()),
        ];
        out.extend(self.ops_by_principal.iter().map(|(p, n)| (format!("principal:{p}"), n.to_string())));
        out.extend(self.ops_by_variant.iter().map(|(v, n)| (format!("variant:{v}"), n.to_string())));
        out
    }

    /// Sectioned text block in the style of the snapshot format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("ourbac-bench v1\n## summary\n");
        let _ = writeln!(out, "mode\t{}", self.mode);
        for (k, v) in &self.metrics()[..5] {
            let _ = writeln!(out, "{k}\t{v}");
        }
        out.push_str("## ops_by_principal\n");
        for (p, n) in &self.ops_by_principal {
            let _ = writeln!(out, "principal\t{p}\t{n}");
        }
        out.push_str("## ops_by_variant\n");
        for (v, n) in &self.ops_by_variant {
            let _ = writeln!(out, "variant\t{v}\t{n}");
        }
        out
    }
}

/// Drives one engine through the full churn.
pub fn run_churn(config: &ChurnConfig, mode: Mode) -> Result<BenchReport, BenchError> {
    Ok(run_churn_engine(config, mode)?.report())
}

/// Like [`run_churn`] but hands back the run for inspection.
pub fn run_churn_engine(config: &ChurnConfig, mode: Mode) -> Result<ChurnRun, BenchError> {
    let mut run = ChurnRun::new(config, mode)?;
    for events in generate_events(config) {
        run.step(&events)?;
    }
    Ok(run)
}

/// Both modes stepped in lockstep, with entitlements compared after every
/// semester.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedReport {
    pub flat: BenchReport,
    pub ou: BenchReport,
    pub semesters_checked: u32,
    /// (semester, student) pairs whose permissions differ between modes
    /// or from the target.
    pub mismatches: Vec<(u32, UserId)>,
}

pub fn run_paired(config: &ChurnConfig) -> Result<(PairedReport, ChurnRun, ChurnRun), BenchError> {
    let mut flat = ChurnRun::new(config, Mode::Flat)?;
    let mut ou = ChurnRun::new(config, Mode::Ou)?;
    let mut mismatches = Vec::new();
    let mut semesters_checked = 0;
    for events in generate_events(config) {
        flat.step(&events)?;
        ou.step(&events)?;
        let s = events.semester;
        semesters_checked += 1;
        let mut bad: BTreeSet<UserId> = BTreeSet::new();
        bad.extend(flat.entitlement_mismatches(s));
        bad.extend(ou.entitlement_mismatches(s));
        for (u, _, _) in flat.students(s) {
            let a = resolver::effective_permissions(flat.engine.state(), u).ok();
            let b = resolver::effective_permissions(ou.engine.state(), u).ok();
            if a != b {
                bad.insert(u.clone());
            }
        }
        mismatches.extend(bad.into_iter().map(|u| (s, u)));
    }
    let report = PairedReport { flat: flat.report(), ou: ou.report(), semesters_checked, mismatches };
    Ok((report, flat, ou))
}
