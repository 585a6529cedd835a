//! `ourbac`: operator command line for an OU-RBAC store.

mod store;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use num_rational::Ratio;
use ourbac::admin::{AdminAction, AdminError, Engine, ManagerRole};
use ourbac::analyze::{bounded_reach_with, containment_bound, Reach, ReachLimits, SafetyGoal};
use ourbac::bench::{run_churn, run_paired, BenchReport, ChurnConfig, Mode};
use ourbac::encoding::{decode_pattern, encode_action};
use ourbac::ids::{Name, OuId, PermId, PrincipalId, RoleId, UserId};
use ourbac::model::{Change, EngineConfig, SodConstraint};
use ourbac::persist::{parse_audit, Genesis};
use ourbac::resolver::{self, activate_role, check_access, create_session, explain_permission, Session};
use serde::Deserialize;
use store::Store;

#[derive(Parser)]
#[command(name = "ourbac", version, about = "Administer and query an OU-RBAC policy store")]
struct Cli {
    /// Store directory.
    #[arg(long, env = "OURBAC_STORE", global = true)]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a store holding a single RBAC manager.
    Init {
        #[arg(long)]
        rbac_manager: PrincipalId,
        #[arg(long)]
        no_ou_inheritance: bool,
        #[arg(long)]
        no_directive_mode: bool,
        #[arg(long)]
        no_manager_ssd: bool,
    },
    /// Execute an administrative action. Every attempt is audited.
    Admin {
        /// Acting principal.
        #[arg(long = "as", global = true, value_name = "PRINCIPAL")]
        actor: Option<PrincipalId>,
        #[command(subcommand)]
        action: AdminCmd,
    },
    /// Read-only queries.
    #[command(subcommand)]
    Query(QueryCmd),
    /// Activate roles in a fresh session and decide one access request.
    Check {
        #[arg(long)]
        user: UserId,
        /// Comma-separated roles to activate.
        #[arg(long, value_delimiter = ',')]
        activate: Vec<RoleId>,
        #[arg(long)]
        op: String,
        #[arg(long)]
        obj: String,
    },
    /// Activate roles in a fresh session and list what it may do.
    Session {
        #[arg(long)]
        user: UserId,
        #[arg(long, value_delimiter = ',')]
        activate: Vec<RoleId>,
    },
    #[command(subcommand)]
    Audit(AuditCmd),
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Run the semester-churn workload comparison.
    Bench {
        /// TOML file with the churn parameters.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: BenchMode,
        /// One `mode,metric,value` row per metric.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Subcommand)]
enum AdminCmd {
    AddUser { user: UserId },
    DeleteUser { user: UserId },
    AddRole { role: RoleId },
    DeleteRole { role: RoleId },
    AddPerm { perm: PermId, operation: Name, object: Name },
    DeletePerm { perm: PermId },
    GrantPerm { perm: PermId, role: RoleId },
    RevokePerm { perm: PermId, role: RoleId },
    AssignRole { user: UserId, role: RoleId },
    RevokeRole { user: UserId, role: RoleId },
    CreateOu {
        ou: OuId,
        #[arg(long)]
        parent: Option<OuId>,
        #[arg(long)]
        department: Option<Name>,
    },
    DeleteOu { ou: OuId },
    AssignOu { user: UserId, ou: OuId },
    RemoveOu { user: UserId, ou: OuId },
    MoveOu { user: UserId, from: OuId, to: OuId },
    AssignOuRole { ou: OuId, role: RoleId },
    RevokeOuRole { ou: OuId, role: RoleId },
    AddInheritance { senior: RoleId, junior: RoleId },
    RemoveInheritance { senior: RoleId, junior: RoleId },
    AddSsd(SodArgs),
    RemoveSsd { id: Name },
    AddDsd(SodArgs),
    RemoveDsd { id: Name },
    Appoint(ManagerArgs),
    RevokeManager(ManagerArgs),
    /// PATTERN is a change variant followed by optional field=value
    /// bindings, e.g. `GrantPermToRole role=r.student`.
    IssueDirective {
        #[arg(required = true, num_args = 1..)]
        pattern: Vec<String>,
    },
    RevokeDirective { id: Name },
}

#[derive(Args)]
struct SodArgs {
    id: Name,
    cardinality: usize,
    #[arg(required = true, num_args = 1..)]
    roles: Vec<RoleId>,
}

#[derive(Args)]
struct ManagerArgs {
    principal: PrincipalId,
    #[arg(value_parser = parse_manager_role)]
    role: ManagerRole,
    /// Department label (coordinators only).
    #[arg(long)]
    scope: Option<Name>,
}

fn parse_manager_role(s: &str) -> Result<ManagerRole, String> {
    ManagerRole::parse(s).ok_or_else(|| {
        let all: Vec<&str> = ManagerRole::ALL.iter().map(|r| r.as_str()).collect();
        format!("expected one of {}", all.join(", "))
    })
}

#[derive(Subcommand)]
enum QueryCmd {
    /// Effective permissions of a user.
    Perms { user: UserId },
    /// Authorized roles of a user.
    Roles { user: UserId },
    /// OUs whose role assignments apply to a user.
    Ous { user: UserId },
    /// Path by which a user holds a permission.
    Explain { user: UserId, perm: PermId },
    /// Manager appointments.
    Managers,
    /// Directives and their status.
    Directives,
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Check the digest chain and replay it against the snapshot.
    Verify,
    /// Print audit records.
    Log {
        #[arg(long, default_value_t = 1)]
        from: u64,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Bounded search for an action sequence granting `perm` to `user`.
    Reach {
        /// Principals whose actions are explored; repeatable.
        #[arg(long = "principal", required = true)]
        principals: Vec<PrincipalId>,
        #[arg(long)]
        user: UserId,
        #[arg(long)]
        perm: PermId,
        #[arg(long, default_value_t = ourbac::analyze::DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long, default_value_t = ourbac::analyze::DEFAULT_STATE_CAP)]
        state_cap: usize,
    },
    /// Permissions a coordinator can confer through OU membership.
    Bound { coordinator: PrincipalId },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchMode {
    Flat,
    Ou,
    Both,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchFile {
    departments: u32,
    courses_per_department: u32,
    semesters: u32,
    intake_per_course: u32,
    /// A fraction such as "1/10".
    #[serde(default = "no_graduates")]
    graduate_fraction: String,
    roles_per_student: u32,
    #[serde(default)]
    seed: u64,
}

fn no_graduates() -> String {
    "0".into()
}

/// Command result: stdout text, and on failure the machine-readable
/// reason and message for stderr.
struct Outcome {
    out: String,
    failure: Option<(String, String)>,
}

impl Outcome {
    fn ok(out: String) -> Self {
        Self { out, failure: None }
    }

    fn fail(out: String, code: &str, message: impl Into<String>) -> Self {
        Self { out, failure: Some((code.to_string(), message.into())) }
    }
}

fn usage(message: &str) -> ! {
    Cli::command().error(ErrorKind::MissingRequiredArgument, message).exit()
}

fn store_dir(cli_store: &Option<PathBuf>) -> &Path {
    match cli_store {
        Some(p) => p,
        None => usage("the store path is required: pass --store <DIR> or set OURBAC_STORE"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(o) => {
            print!("{}", o.out);
            let _ = std::io::stdout().flush();
            match o.failure {
                None => ExitCode::SUCCESS,
                Some((code, message)) => {
                    eprintln!("{code}\t{message}");
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error\t{e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Init { rbac_manager, no_ou_inheritance, no_directive_mode, no_manager_ssd } => {
            let config = EngineConfig {
                ou_role_inheritance: !no_ou_inheritance,
                directive_mode: !no_directive_mode,
                manager_ssd_enabled: !no_manager_ssd,
            };
            let dir = store_dir(&cli.store);
            Store::init(dir, Genesis { rbac_manager: rbac_manager.clone(), config })?;
            Ok(Outcome::ok(format!("initialized {} with RBAC manager {rbac_manager}\n", dir.display())))
        }
        Command::Admin { actor, action } => {
            let Some(principal) = actor else { usage("admin requires --as <PRINCIPAL>") };
            let action = admin_action(action)?;
            let store = Store::open(store_dir(&cli.store), true)?;
            let mut engine = store.load()?;
            let before = engine.log().len();
            let result = engine.execute(&principal, action);
            store.persist(&engine, before)?;
            Ok(admin_outcome(&engine, result))
        }
        Command::Query(q) => {
            let engine = Store::open(store_dir(&cli.store), false)?.load()?;
            query(&engine, q)
        }
        Command::Check { user, activate, op, obj } => {
            let engine = Store::open(store_dir(&cli.store), false)?.load()?;
            let session = match open_session(&engine, &user, &activate) {
                Ok(s) => s,
                Err(o) => return Ok(o),
            };
            let d = check_access(engine.state(), &session, &op, &obj);
            let mut out = String::new();
            if d.allowed {
                out.push_str("ALLOW\n");
                for step in &d.trace {
                    let _ = writeln!(out, "  {step}");
                }
                Ok(Outcome::ok(out))
            } else {
                let cause = d.denial.map(|c| c.as_str()).unwrap_or("denied");
                let _ = writeln!(out, "DENY {cause}");
                Ok(Outcome::fail(out, cause, format!("{user} may not {op} {obj}")))
            }
        }
        Command::Session { user, activate } => {
            let engine = Store::open(store_dir(&cli.store), false)?.load()?;
            let session = match open_session(&engine, &user, &activate) {
                Ok(s) => s,
                Err(o) => return Ok(o),
            };
            let state = engine.state();
            let mut out = format!("session {} user {}\n", session.id, session.user);
            for r in &session.active_roles {
                let _ = writeln!(out, "active\t{r}");
            }
            let mut available: BTreeSet<(String, String, String)> = BTreeSet::new();
            for p in state.perms() {
                if check_access(state, &session, p.operation.as_str(), p.object.as_str()).allowed {
                    available.insert((p.id.to_string(), p.operation.to_string(), p.object.to_string()));
                }
            }
            for (id, op, obj) in available {
                let _ = writeln!(out, "perm\t{id}\t{op}\t{obj}");
            }
            Ok(Outcome::ok(out))
        }
        Command::Audit(AuditCmd::Verify) => {
            let store = Store::open(store_dir(&cli.store), false)?;
            match store.verify() {
                Ok((seq, head)) => Ok(Outcome::ok(format!("ok\t{seq} records\thead {head}\n"))),
                Err(e) => Ok(Outcome::fail(String::new(), "AuditCorrupt", format!("{e:#}"))),
            }
        }
        Command::Audit(AuditCmd::Log { from, limit }) => {
            let store = Store::open(store_dir(&cli.store), false)?;
            let (_, log) = parse_audit(&store.read_audit_text()?, None)
                .map_err(|e| anyhow!("{} seq {}: {:?}", store::AUDIT, e.seq, e.cause))?;
            let mut out = String::new();
            let records = log.records().iter().filter(|r| r.seq >= from);
            for r in records.take(limit.unwrap_or(usize::MAX)) {
                let _ = writeln!(out, "{}\t{}\t{}\t{}", r.seq, r.principal, r.verdict.encode(), encode_action(&r.action));
            }
            Ok(Outcome::ok(out))
        }
        Command::Analyze(cmd) => {
            let engine = Store::open(store_dir(&cli.store), false)?.load()?;
            analyze(&engine, cmd)
        }
        Command::Bench { config, mode, csv } => bench(&config, mode, csv),
    }
}

fn open_session(engine: &Engine, user: &UserId, roles: &[RoleId]) -> Result<Session, Outcome> {
    let state = engine.state();
    let mut session = create_session(state, user).map_err(|e| Outcome::fail(String::new(), e.code(), e.to_string()))?;
    for r in roles {
        session = activate_role(state, &session, r).map_err(|e| Outcome::fail(String::new(), e.code(), e.to_string()))?;
    }
    Ok(session)
}

fn admin_action(cmd: AdminCmd) -> Result<AdminAction> {
    use AdminCmd as A;
    let sod = |a: SodArgs| SodConstraint { id: a.id, roles: a.roles.into_iter().collect(), cardinality: a.cardinality };
    let change = match cmd {
        A::AddUser { user } => Change::AddUser { user },
        A::DeleteUser { user } => Change::DeleteUser { user },
        A::AddRole { role } => Change::AddRole { role },
        A::DeleteRole { role } => Change::DeleteRole { role },
        A::AddPerm { perm, operation, object } => Change::AddPerm { perm, operation, object },
        A::DeletePerm { perm } => Change::DeletePerm { perm },
        A::GrantPerm { perm, role } => Change::GrantPermToRole { perm, role },
        A::RevokePerm { perm, role } => Change::RevokePermFromRole { perm, role },
        A::AssignRole { user, role } => Change::AssignUserToRoleDirect { user, role },
        A::RevokeRole { user, role } => Change::RevokeUserFromRoleDirect { user, role },
        A::CreateOu { ou, parent, department } => Change::CreateOu { ou, parent, department },
        A::DeleteOu { ou } => Change::DeleteOu { ou },
        A::AssignOu { user, ou } => Change::AssignUserToOu { user, ou },
        A::RemoveOu { user, ou } => Change::RemoveUserFromOu { user, ou },
        A::MoveOu { user, from, to } => Change::MoveUserOu { user, from, to },
        A::AssignOuRole { ou, role } => Change::AssignOuToRole { ou, role },
        A::RevokeOuRole { ou, role } => Change::RevokeOuFromRole { ou, role },
        A::AddInheritance { senior, junior } => Change::AddRoleInheritance { senior, junior },
        A::RemoveInheritance { senior, junior } => Change::RemoveRoleInheritance { senior, junior },
        A::AddSsd(a) => Change::AddSsd { constraint: sod(a) },
        A::RemoveSsd { id } => Change::RemoveSsd { id },
        A::AddDsd(a) => Change::AddDsd { constraint: sod(a) },
        A::RemoveDsd { id } => Change::RemoveDsd { id },
        A::Appoint(m) => {
            return Ok(AdminAction::AppointManager { principal: m.principal, role: m.role, scope: m.scope })
        }
        A::RevokeManager(m) => {
            return Ok(AdminAction::RevokeManager { principal: m.principal, role: m.role, scope: m.scope })
        }
        A::IssueDirective { pattern } => {
            let text = pattern.join(" ");
            let pattern = decode_pattern(&text).unwrap_or_else(|e| {
                Cli::command().error(ErrorKind::ValueValidation, format!("invalid PATTERN {text:?}: {e}")).exit()
            });
            return Ok(AdminAction::IssueDirective { pattern });
        }
        A::RevokeDirective { id } => return Ok(AdminAction::RevokeDirective { id }),
    };
    Ok(AdminAction::Change(change))
}

fn admin_outcome(engine: &Engine, result: Result<ourbac::admin::ExecReport, AdminError>) -> Outcome {
    match result {
        Ok(report) => {
            let mut out = format!("ok\tseq {}", report.seq);
            if let Some(d) = &report.consumed {
                let _ = write!(out, "\tconsumed {d}");
            }
            if let Some(d) = &report.issued {
                let _ = write!(out, "\tissued {}", d.id);
            }
            out.push('\n');
            Outcome::ok(out)
        }
        Err(e) => {
            let seq = engine.log().len();
            Outcome::fail(format!("refused\tseq {seq}\n"), e.code(), e.to_string())
        }
    }
}

fn lines<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| format!("{x}\n")).collect()
}

fn query(engine: &Engine, q: QueryCmd) -> Result<Outcome> {
    let state = engine.state();
    let access = |e: resolver::AccessError| Outcome::fail(String::new(), e.code(), e.to_string());
    Ok(match q {
        QueryCmd::Perms { user } => match resolver::effective_permissions(state, &user) {
            Ok(perms) => {
                let ids: Vec<String> = perms.iter().map(ToString::to_string).collect();
                Outcome::ok(format!("{}\n", ids.join(" ")))
            }
            Err(e) => access(e),
        },
        QueryCmd::Roles { user } => match resolver::authorized_roles(state, &user) {
            Ok(roles) => Outcome::ok(lines(roles)),
            Err(e) => access(e),
        },
        QueryCmd::Ous { user } => match resolver::ou_closure(state, &user) {
            Ok(ous) => Outcome::ok(lines(ous)),
            Err(e) => access(e),
        },
        QueryCmd::Explain { user, perm } => match explain_permission(state, &user, &perm) {
            Some(trace) => Outcome::ok(lines(trace)),
            None => Outcome::fail(String::new(), "NotGranted", format!("{user} does not hold {perm}")),
        },
        QueryCmd::Managers => Outcome::ok(lines(state.assignments().map(|a| match &a.scope {
            Some(s) => format!("{}\t{}\t{s}", a.principal, a.role),
            None => format!("{}\t{}\t-", a.principal, a.role),
        }))),
        QueryCmd::Directives => Outcome::ok(lines(state.directives().map(|d| {
            format!("{}\t{}\t{}\t{}", d.id, d.status.as_str(), d.issued_by, ourbac::encoding::encode_pattern(&d.pattern))
        }))),
    })
}

fn analyze(engine: &Engine, cmd: AnalyzeCmd) -> Result<Outcome> {
    let state = engine.state();
    match cmd {
        AnalyzeCmd::Reach { principals, user, perm, depth, state_cap } => {
            let principals: BTreeSet<PrincipalId> = principals.into_iter().collect();
            let goal = SafetyGoal { user, perm };
            match bounded_reach_with(state, &principals, &goal, ReachLimits { depth, state_cap }) {
                Ok(Reach::Reached(w)) => {
                    let mut out = format!("REACHABLE in {} steps\n", w.len());
                    for (who, action) in &w.steps {
                        let _ = writeln!(out, "  {who}\t{}", encode_action(action));
                    }
                    Ok(Outcome::ok(out))
                }
                Ok(Reach::Unreachable { depth, explored }) => {
                    Ok(Outcome::ok(format!("UNREACHABLE\tdepth {depth}\texplored {explored}\n")))
                }
                Err(e) => Ok(Outcome::fail(String::new(), "AnalyzeError", e.to_string())),
            }
        }
        AnalyzeCmd::Bound { coordinator } => match containment_bound(state, &coordinator) {
            Ok(perms) => Ok(Outcome::ok(lines(perms))),
            Err(e) => Ok(Outcome::fail(String::new(), "AnalyzeError", e.to_string())),
        },
    }
}

fn bench(path: &Path, mode: BenchMode, csv: bool) -> Result<Outcome> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: BenchFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let graduate_fraction: Ratio<u64> = file
        .graduate_fraction
        .parse()
        .map_err(|e| anyhow!("{}: graduate_fraction {:?}: {e}", path.display(), file.graduate_fraction))?;
    let config = ChurnConfig {
        departments: file.departments,
        courses_per_department: file.courses_per_department,
        semesters: file.semesters,
        intake_per_course: file.intake_per_course,
        graduate_fraction,
        roles_per_student: file.roles_per_student,
        seed: file.seed,
    };
    let reports: Vec<BenchReport> = match mode {
        BenchMode::Flat => vec![run_churn(&config, Mode::Flat)?],
        BenchMode::Ou => vec![run_churn(&config, Mode::Ou)?],
        BenchMode::Both => {
            let (paired, _, _) = run_paired(&config)?;
            if !paired.mismatches.is_empty() {
                return Ok(Outcome::fail(
                    String::new(),
                    "EntitlementMismatch",
                    format!("{} students differ between modes", paired.mismatches.len()),
                ));
            }
            vec![paired.flat, paired.ou]
        }
    };
    let out = if csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "metric", "value"])?;
        for r in &reports {
            for (metric, value) in r.metrics() {
                w.write_record([r.mode.as_str(), &metric, &value])?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?
    } else {
        reports.iter().map(BenchReport::to_text).collect()
    };
    Ok(Outcome::ok(out))
}
