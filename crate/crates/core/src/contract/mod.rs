//! On-ledger contract state: the agreement integrity registry and one
//! consent container per patient.
//!
//! All mutation goes through [`ConsentWorld::execute`](crate::ledger::StateMachine::execute),
//! i.e. inside sealed transactions. The same code paths back
//! [`ConsentWorld::preview`], a dry run against a private copy.

mod conflict;
mod container;
mod payload;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conflict::{detect_conflicts, ConflictCode, ConflictFinding, ConflictReport};
pub use container::{default_required_roles, ArchiveEntry, ArchiveReason, ConsentContainer, TxCtx};

use crate::domain::{
    ConsentId, Digest, Finding, Fixtures, InformedConsent, LogicalTime, PatientId, PpaId, RoleCode,
};
use crate::ledger::{
    BlockEnv, Call, EventKind, Execution, Payload, SlotWrites, StateMachine, SystemCall, Transaction, TxKind,
};

pub const REGISTRY_ACCOUNT: &str = "ppa-registry";
/// Code size charged when a container is deployed.
pub const CONTAINER_CODE_SIZE: u64 = 2000;

pub fn container_account(patient_id: &str) -> String {
    format!("container:{patient_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("consent `{0}` is not in the repository")]
    UnknownConsent(ConsentId),
    #[error("consent id `{0}` is already in use")]
    DuplicateConsentId(ConsentId),
    #[error("consent conflict: {0}")]
    ConsentConflict(ConflictReport),
    #[error("consent failed validation: {}", join_findings(.0))]
    ValidationFailed(Vec<Finding>),
    #[error("consent belongs to `{found}`, container is `{expected}`")]
    PatientMismatch { expected: PatientId, found: PatientId },
    #[error("agreement `{0}` already has a stored digest")]
    DuplicatePpaId(PpaId),
    #[error("no consent container for patient `{0}`")]
    UnknownContainer(PatientId),
    #[error("patient `{0}` already has a consent container")]
    ContainerExists(PatientId),
    #[error("malformed contract call: {0}")]
    BadCall(String),
}

fn join_findings(f: &[Finding]) -> String {
    f.iter().map(Finding::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpaRecord {
    pub h_ppa: Digest,
    pub patient_id: PatientId,
    pub stored_at: LogicalTime,
}

/// Agreement digests anchored on chain. Entries are write-once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpaRegistry {
    entries: BTreeMap<PpaId, PpaRecord>,
}

impl PpaRegistry {
    pub fn get(&self, ppa_id: &str) -> Option<&PpaRecord> {
        self.entries.get(ppa_id)
    }

    pub fn contains(&self, ppa_id: &str) -> bool {
        self.entries.contains_key(ppa_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn for_patient<'a>(&'a self, patient_id: &'a str) -> impl Iterator<Item = &'a PpaId> + 'a {
        self.entries
            .iter()
            .filter(move |(_, r)| r.patient_id == patient_id)
            .map(|(id, _)| id)
    }
}

/// Contract entry points. Serialized as the call's method name plus a JSON
/// argument payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", content = "args")]
pub enum ContractCall {
    StorePpaIntegrity {
        ppa_id: PpaId,
        patient_id: PatientId,
        h_ppa: Digest,
    },
    OpenContainer {
        patient_id: PatientId,
        required_roles: BTreeSet<RoleCode>,
    },
    CreateConsent {
        consent: InformedConsent,
    },
    /// One consent of an agreement batch whose team coverage was checked as
    /// a whole before submission.
    DeployConsent {
        ppa_id: PpaId,
        consent: InformedConsent,
    },
    AlterConsent {
        old_id: ConsentId,
        consent: InformedConsent,
    },
    TerminateConsent {
        consent_id: ConsentId,
    },
    ExpireSweep {
        now: LogicalTime,
    },
    LogDecision {
        granted: bool,
        matched: Option<ConsentId>,
        payload: Payload,
    },
}

impl ContractCall {
    pub fn method(&self) -> &'static str {
        match self {
            ContractCall::StorePpaIntegrity { .. } => "StorePpaIntegrity",
            ContractCall::OpenContainer { .. } => "OpenContainer",
            ContractCall::CreateConsent { .. } => "CreateConsent",
            ContractCall::DeployConsent { .. } => "DeployConsent",
            ContractCall::AlterConsent { .. } => "AlterConsent",
            ContractCall::TerminateConsent { .. } => "TerminateConsent",
            ContractCall::ExpireSweep { .. } => "ExpireSweep",
            ContractCall::LogDecision { .. } => "LogDecision",
        }
    }

    pub fn to_call(&self) -> Call {
        let mut v = serde_json::to_value(self).expect("call serializes");
        let args = v.get_mut("args").map(serde_json::Value::take).unwrap_or_default();
        Call::new(self.method(), serde_json::to_vec(&args).expect("args serialize"))
    }

    pub fn from_call(call: &Call) -> Result<Self, ContractError> {
        let args: serde_json::Value =
            serde_json::from_slice(&call.args).map_err(|e| ContractError::BadCall(e.to_string()))?;
        let v = serde_json::json!({ "method": call.method, "args": args });
        serde_json::from_value(v).map_err(|e| ContractError::BadCall(e.to_string()))
    }
}

/// Everything the ledger executes against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsentWorld {
    fixtures: Fixtures,
    registry: PpaRegistry,
    containers: BTreeMap<PatientId, ConsentContainer>,
}

impl ConsentWorld {
    pub fn new(fixtures: Fixtures) -> Self {
        Self {
            fixtures,
            registry: PpaRegistry::default(),
            containers: BTreeMap::new(),
        }
    }

    pub fn fixtures(&self) -> &Fixtures {
        &self.fixtures
    }

    pub fn registry(&self) -> &PpaRegistry {
        &self.registry
    }

    pub fn container(&self, patient_id: &str) -> Option<&ConsentContainer> {
        self.containers.get(patient_id)
    }

    pub fn containers(&self) -> impl Iterator<Item = &ConsentContainer> {
        self.containers.values()
    }

    /// The container that currently holds `consent_id`, active or archived.
    pub fn container_of(&self, consent_id: &str) -> Option<&ConsentContainer> {
        self.containers.values().find(|c| c.knows(consent_id))
    }

    fn patient_of_target(target: &str) -> Option<&str> {
        target.strip_prefix("container:")
    }

    /// Runs `call` against a copy of the affected state and reports what
    /// would happen, leaving `self` untouched.
    pub fn preview(&self, target: &str, kind: TxKind, call: &ContractCall, ctx: TxCtx) -> Result<Execution, ContractError> {
        if target == REGISTRY_ACCOUNT {
            let mut reg = self.registry.clone();
            return apply_registry(&mut reg, call, ctx);
        }
        let patient = Self::patient_of_target(target).ok_or_else(|| ContractError::BadCall(format!("unknown target `{target}`")))?;
        if let TxKind::Deploy { .. } = kind {
            let mut scratch = BTreeMap::new();
            if self.containers.contains_key(patient) {
                return Err(ContractError::ContainerExists(patient.to_owned()));
            }
            return open_container(&mut scratch, patient, call);
        }
        let mut c = self
            .containers
            .get(patient)
            .cloned()
            .ok_or_else(|| ContractError::UnknownContainer(patient.to_owned()))?;
        apply_container(&mut c, call, &self.fixtures, ctx)
    }

    fn apply(&mut self, target: &str, kind: TxKind, call: &ContractCall, ctx: TxCtx) -> Result<Execution, ContractError> {
        if target == REGISTRY_ACCOUNT {
            return apply_registry(&mut self.registry, call, ctx);
        }
        let patient = Self::patient_of_target(target).ok_or_else(|| ContractError::BadCall(format!("unknown target `{target}`")))?;
        if let TxKind::Deploy { .. } = kind {
            return open_container(&mut self.containers, patient, call);
        }
        let c = self
            .containers
            .get_mut(patient)
            .ok_or_else(|| ContractError::UnknownContainer(patient.to_owned()))?;
        apply_container(c, call, &self.fixtures, ctx)
    }
}

fn open_container(
    containers: &mut BTreeMap<PatientId, ConsentContainer>,
    patient: &str,
    call: &ContractCall,
) -> Result<Execution, ContractError> {
    let ContractCall::OpenContainer {
        patient_id,
        required_roles,
    } = call
    else {
        return Err(ContractError::BadCall(format!("{} cannot deploy a container", call.method())));
    };
    if patient_id != patient {
        return Err(ContractError::BadCall(format!("container target does not match `{patient_id}`")));
    }
    if containers.contains_key(patient) {
        return Err(ContractError::ContainerExists(patient.to_owned()));
    }
    containers.insert(patient.to_owned(), ConsentContainer::new(patient, required_roles.clone()));
    Ok(Execution::default())
}

fn apply_registry(reg: &mut PpaRegistry, call: &ContractCall, ctx: TxCtx) -> Result<Execution, ContractError> {
    let ContractCall::StorePpaIntegrity {
        ppa_id,
        patient_id,
        h_ppa,
    } = call
    else {
        return Err(ContractError::BadCall(format!("registry has no `{}`", call.method())));
    };
    if reg.contains(ppa_id) {
        return Err(ContractError::DuplicatePpaId(ppa_id.clone()));
    }
    reg.entries.insert(
        ppa_id.clone(),
        PpaRecord {
            h_ppa: *h_ppa,
            patient_id: patient_id.clone(),
            stored_at: ctx.at,
        },
    );
    let mut p = Payload::new();
    p.insert("ppa_id".into(), ppa_id.clone());
    p.insert("patient_id".into(), patient_id.clone());
    p.insert("h_ppa".into(), h_ppa.to_hex());
    Ok(Execution {
        events: vec![(EventKind::PpaIntegrityStored, p)],
        writes: SlotWrites::new_slots(1),
    })
}

pub(crate) fn apply_container(
    c: &mut ConsentContainer,
    call: &ContractCall,
    fixtures: &Fixtures,
    ctx: TxCtx,
) -> Result<Execution, ContractError> {
    match call {
        ContractCall::CreateConsent { consent } => c.create(consent.clone(), fixtures, true, ctx),
        ContractCall::DeployConsent { consent, .. } => c.create(consent.clone(), fixtures, false, ctx),
        ContractCall::AlterConsent { old_id, consent } => c.alter(old_id, consent.clone(), fixtures, ctx),
        ContractCall::TerminateConsent { consent_id } => c.terminate(consent_id, fixtures, ctx),
        ContractCall::ExpireSweep { now } => Ok(c.sweep(*now, fixtures, ctx).1),
        ContractCall::LogDecision {
            granted,
            matched,
            payload,
        } => {
            let mut p = payload.clone();
            p.insert("patient_id".into(), c.patient_id().to_owned());
            let (kind, writes) = match (granted, matched) {
                (true, Some(id)) => (EventKind::AccessGranted, c.record_use(id)),
                (true, None) => return Err(ContractError::BadCall("grant without a matched consent".into())),
                (false, _) => (EventKind::AccessDenied, SlotWrites::default()),
            };
            Ok(Execution {
                events: vec![(kind, p)],
                writes,
            })
        }
        other => Err(ContractError::BadCall(format!("container has no `{}`", other.method()))),
    }
}

impl StateMachine for ConsentWorld {
    fn has_account(&self, account: &str) -> bool {
        account == REGISTRY_ACCOUNT
            || Self::patient_of_target(account).is_some_and(|p| self.containers.contains_key(p))
    }

    fn execute(&mut self, tx: &Transaction, env: &BlockEnv) -> Result<Execution, String> {
        let call = ContractCall::from_call(&tx.call).map_err(|e| e.to_string())?;
        let ctx = TxCtx {
            tx_id: tx.tx_id,
            at: env.timestamp,
        };
        self.apply(&tx.target, tx.kind, &call, ctx).map_err(|e| e.to_string())
    }

    fn housekeeping(&self, now: LogicalTime, pending: &[Transaction]) -> Vec<SystemCall> {
        let queued: BTreeSet<&str> = pending
            .iter()
            .filter(|t| t.call.method == "ExpireSweep")
            .map(|t| t.target.as_str())
            .collect();
        self.containers
            .values()
            .filter(|c| !c.plan_sweep(now, &self.fixtures).is_empty())
            .map(|c| container_account(c.patient_id()))
            .filter(|target| !queued.contains(target.as_str()))
            .map(|target| SystemCall {
                target,
                call: ContractCall::ExpireSweep { now }.to_call(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
