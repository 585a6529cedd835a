use super::{execute, AdminAction, AdminError, Directive};
use crate::ids::{Name, PrincipalId};
use crate::model::{EngineConfig, PolicyState};
use crate::persist::{AuditLog, AuditVerdict, Genesis, Snapshot};

/// What a successful [`Engine::execute`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecReport {
    pub seq: u64,
    pub consumed: Option<Name>,
    pub issued: Option<Directive>,
}

/// The single serialization point: owns the live state and its audit log.
/// Every call to [`Engine::execute`] appends exactly one audit record,
/// whether the action ran, was denied, or was rejected.
#[derive(Debug, Clone)]
pub struct Engine {
    state: PolicyState,
    log: AuditLog,
    genesis: Genesis,
}

impl Engine {
    pub fn bootstrap(rbac_manager: PrincipalId, config: EngineConfig) -> Self {
        let genesis = Genesis { rbac_manager, config };
        Self { state: genesis.state(), log: AuditLog::new(), genesis }
    }

    /// Reassembles an engine from stored parts. The caller is responsible
    /// for `state` matching the replay of `log`.
    pub fn from_parts(genesis: Genesis, log: AuditLog, state: PolicyState) -> Self {
        Self { state, log, genesis }
    }

    pub fn state(&self) -> &PolicyState {
        &self.state
    }

    pub fn log(&self) -> &AuditLog {
        &self.log
    }

    pub fn genesis(&self) -> &Genesis {
        &self.genesis
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::new(self.state.clone(), self.log.anchor())
    }

    pub fn execute(&mut self, principal: &PrincipalId, action: AdminAction) -> Result<ExecReport, AdminError> {
        let outcome = execute(&self.state, principal, &action);
        let verdict = AuditVerdict::of(&outcome.as_ref().map(|_| ()).map_err(Clone::clone));
        let seq = self.log.record(principal.clone(), action, verdict).seq;
        let done = outcome?;
        self.state = done.state;
        Ok(ExecReport { seq, consumed: done.consumed, issued: done.issued })
    }
}
