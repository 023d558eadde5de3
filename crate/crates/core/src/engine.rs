//! Administration front end: agreements, consent lifecycle and sealing.
//!
//! Every state change is first dry-run against sealed contract state, so a
//! rejected operation never reaches the pool. Under [`SealPolicy::Immediate`]
//! each accepted operation is sealed straight away; under
//! [`SealPolicy::Manual`] transactions accumulate until [`ConsentEngine::seal`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authz::{AccessDecision, PolicyHook};
use crate::contract::{
    apply_container, container_account, default_required_roles, detect_conflicts, ConsentContainer, ConsentWorld,
    ContractCall, ContractError, TxCtx, CONTAINER_CODE_SIZE, REGISTRY_ACCOUNT,
};
use crate::domain::{
    hash_ppa, validate_consent, ConsentId, Digest, DomainError, Finding, Fixtures, InformedConsent,
    LogicalTime, PatientId, Ppa, PpaId, PpaIntegrity, RoleCode,
};
use crate::ledger::{
    Block, ChainConfig, EventFilter, EventKind, Ledger, LedgerError, StateMachine, Transaction, TxKind,
    TxStatus,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SealPolicy {
    /// Seal a block after every accepted operation.
    #[default]
    Immediate,
    /// Leave transactions pending until `seal` is called.
    Manual,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub chain: ChainConfig,
    pub fixtures: Fixtures,
    pub seal_policy: SealPolicy,
    /// Required roles for containers opened implicitly.
    pub required_roles: BTreeSet<RoleCode>,
    /// Sender identity for administrative transactions.
    pub operator: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            fixtures: Fixtures::default(),
            seal_policy: SealPolicy::Immediate,
            required_roles: default_required_roles(),
            operator: "hospital".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("PPA cannot be created: {0}")]
    IncompletePpa(#[source] DomainError),
    #[error("agreement `{0}` already exists")]
    DuplicatePpaId(PpaId),
    #[error("PPA revision required: {}", describe_ppa_conflict(.findings, .report))]
    PpaConflict {
        findings: Vec<Finding>,
        report: crate::contract::ConflictReport,
    },
    #[error("unknown agreement `{0}`")]
    UnknownPpa(PpaId),
    #[error("agreement `{0}` failed its integrity check")]
    TamperedPpa(PpaId),
    #[error("no consent container for patient `{0}`")]
    UnknownPatient(PatientId),
    #[error("transaction {tx_id} reverted: {reason}")]
    Reverted { tx_id: Digest, reason: String },
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl EngineError {
    /// Stable short name of the error variant, used in transcripts and by
    /// scenario expectations.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::IncompletePpa(_) => "IncompletePpa",
            EngineError::DuplicatePpaId(_) => "DuplicatePpaId",
            EngineError::PpaConflict { .. } => "PpaConflict",
            EngineError::UnknownPpa(_) => "UnknownPpa",
            EngineError::TamperedPpa(_) => "TamperedPpa",
            EngineError::UnknownPatient(_) => "UnknownPatient",
            EngineError::Reverted { .. } => "Reverted",
            EngineError::Contract(e) => match e {
                ContractError::UnknownConsent(_) => "UnknownConsent",
                ContractError::DuplicateConsentId(_) => "DuplicateConsentId",
                ContractError::ConsentConflict(_) => "ConsentConflict",
                ContractError::ValidationFailed(_) => "ValidationFailed",
                ContractError::PatientMismatch { .. } => "PatientMismatch",
                ContractError::DuplicatePpaId(_) => "DuplicatePpaId",
                ContractError::UnknownContainer(_) => "UnknownContainer",
                ContractError::ContainerExists(_) => "ContainerExists",
                ContractError::BadCall(_) => "BadCall",
            },
            EngineError::Ledger(_) => "Ledger",
            EngineError::Domain(_) => "Domain",
        }
    }

    /// Conflict and finding codes carried by the error, if any.
    pub fn detail_codes(&self) -> Vec<String> {
        let conflicts = |r: &crate::contract::ConflictReport| {
            r.codes().into_iter().map(|c| format!("{c:?}")).collect::<Vec<_>>()
        };
        match self {
            EngineError::PpaConflict { findings, report } => {
                let mut v: Vec<String> = findings.iter().map(|f| format!("{:?}", f.code)).collect();
                v.extend(conflicts(report));
                v
            }
            EngineError::Contract(ContractError::ConsentConflict(r)) => conflicts(r),
            EngineError::Contract(ContractError::ValidationFailed(f)) => {
                f.iter().map(|f| format!("{:?}", f.code)).collect()
            }
            _ => Vec::new(),
        }
    }
}

fn describe_ppa_conflict(findings: &[Finding], report: &crate::contract::ConflictReport) -> String {
    let mut parts: Vec<String> = findings.iter().map(ToString::to_string).collect();
    if !report.is_empty() {
        parts.push(report.to_string());
    }
    parts.join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegrityStatus {
    Intact,
    Tampered,
}

pub struct ConsentEngine {
    ledger: Ledger<ConsentWorld>,
    ppas: BTreeMap<PpaId, Ppa>,
    tampered: BTreeSet<PpaId>,
    clock: LogicalTime,
    nonce: u64,
    policy: SealPolicy,
    operator: String,
    required_roles: BTreeSet<RoleCode>,
    /// Containers whose deploy is pending, with their required roles.
    opening: BTreeMap<PatientId, BTreeSet<RoleCode>>,
    pub(crate) decisions: Vec<AccessDecision>,
    pub(crate) policy_hook: Option<Box<dyn PolicyHook>>,
}

impl std::fmt::Debug for ConsentEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConsentEngine")
            .field("height", &self.ledger.height())
            .field("clock", &self.clock)
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

impl ConsentEngine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        let clock = config.chain.genesis_time;
        let ledger = Ledger::new(config.chain, ConsentWorld::new(config.fixtures))?;
        Ok(Self::from_ledger(ledger, clock, config.seal_policy, config.operator, config.required_roles))
    }

    fn from_ledger(
        ledger: Ledger<ConsentWorld>,
        clock: LogicalTime,
        policy: SealPolicy,
        operator: String,
        required_roles: BTreeSet<RoleCode>,
    ) -> Self {
        Self {
            ledger,
            ppas: BTreeMap::new(),
            tampered: BTreeSet::new(),
            clock,
            nonce: 0,
            policy,
            operator,
            required_roles,
            opening: BTreeMap::new(),
            decisions: Vec::new(),
            policy_hook: None,
        }
    }

    /// Rebuilds an engine from a chain dump and the off-chain agreement
    /// store. Contract state is recomputed by replaying every transaction.
    pub fn restore(dump: &str, config: EngineConfig, ppas: impl IntoIterator<Item = Ppa>) -> Result<Self, EngineError> {
        let ledger = Ledger::restore(dump, config.chain, ConsentWorld::new(config.fixtures))?;
        let clock = ledger.head().timestamp;
        let nonce = ledger
            .blocks()
            .iter()
            .flat_map(|b| &b.transactions)
            .filter(|t| t.sender == config.operator)
            .map(|t| t.nonce + 1)
            .max()
            .unwrap_or(0);
        let mut e = Self::from_ledger(ledger, clock, config.seal_policy, config.operator, config.required_roles);
        e.nonce = nonce;
        e.ppas = ppas.into_iter().map(|p| (p.ppa_id.clone(), p)).collect();
        e.decisions = e.replay_all_decisions();
        Ok(e)
    }

    pub fn ledger(&self) -> &Ledger<ConsentWorld> {
        &self.ledger
    }

    pub fn world(&self) -> &ConsentWorld {
        self.ledger.state()
    }

    pub fn fixtures(&self) -> &Fixtures {
        self.world().fixtures()
    }

    pub fn container(&self, patient_id: &str) -> Option<&ConsentContainer> {
        self.world().container(patient_id)
    }

    pub fn seal_policy(&self) -> SealPolicy {
        self.policy
    }

    pub fn set_seal_policy(&mut self, policy: SealPolicy) {
        self.policy = policy;
    }

    pub fn set_policy_hook(&mut self, hook: Box<dyn PolicyHook>) {
        self.policy_hook = Some(hook);
    }

    pub fn clock(&self) -> LogicalTime {
        self.clock
    }

    /// Moves the logical clock forward. Earlier times are ignored.
    pub fn set_time(&mut self, t: LogicalTime) {
        self.clock = self.clock.max(t);
    }

    pub fn advance(&mut self, ms: u64) {
        self.clock = self.clock.plus_millis(ms);
    }

    pub fn stored_ppa(&self, ppa_id: &str) -> Option<&Ppa> {
        self.ppas.get(ppa_id)
    }

    pub fn stored_ppas(&self) -> impl Iterator<Item = &Ppa> {
        self.ppas.values()
    }

    /// Live decision log, including decisions whose event is still pending.
    pub fn decisions(&self) -> &[AccessDecision] {
        &self.decisions
    }

    /// Time at which the next seal will happen. A pending transaction waits
    /// at least one block interval after submission, so writes are never
    /// visible sooner than that.
    pub fn next_seal_time(&self) -> LogicalTime {
        let interval = self.ledger.config().block_interval_ms;
        let floor = self.clock.max(self.ledger.next_due());
        match self.ledger.pending().map(|t| t.submitted_at).min() {
            Some(first) => floor.max(first.plus_millis(interval)),
            None => floor,
        }
    }

    /// Seal time a transaction submitted now would get.
    fn seal_time_if_submitted(&self) -> LogicalTime {
        self.next_seal_time()
            .max(self.clock.plus_millis(self.ledger.config().block_interval_ms))
    }

    /// Seals the pool at the later of the clock and the next due time.
    pub fn seal(&mut self) -> Result<&Block, EngineError> {
        let t = self.next_seal_time();
        self.clock = t;
        self.ledger.seal_block(t)?;
        self.opening.clear();
        Ok(self.ledger.head())
    }

    pub(crate) fn new_tx(&mut self, target: String, kind: TxKind, call: &ContractCall) -> Transaction {
        let tx = Transaction::new(self.operator.clone(), target, self.nonce, kind, call.to_call(), self.clock);
        self.nonce += 1;
        tx
    }

    fn preview(&self, tx: &Transaction, call: &ContractCall) -> Result<(), EngineError> {
        let ctx = TxCtx {
            tx_id: tx.tx_id,
            at: self.seal_time_if_submitted(),
        };
        let patient = tx.target.strip_prefix("container:");
        let world = self.world();
        let res = match patient.and_then(|p| self.opening.get(p).map(|r| (p, r))) {
            Some((p, roles)) if tx.kind == TxKind::Call && world.container(p).is_none() => {
                let mut c = ConsentContainer::new(p, roles.clone());
                apply_container(&mut c, call, world.fixtures(), ctx).map(|_| ())
            }
            _ => world.preview(&tx.target, tx.kind, call, ctx).map(|_| ()),
        };
        res.map_err(EngineError::from)
    }

    /// Dry-runs then submits. Returns the transaction id.
    pub(crate) fn submit_call(&mut self, target: String, kind: TxKind, call: ContractCall) -> Result<Digest, EngineError> {
        let tx = self.new_tx(target, kind, &call);
        if let Err(e) = self.preview(&tx, &call) {
            self.nonce -= 1;
            return Err(e);
        }
        Ok(self.ledger.submit(tx)?.tx_id)
    }

    /// Submits without a dry run. Used for audit logging and sweeps, which
    /// must reach the chain regardless.
    pub(crate) fn submit_unchecked(&mut self, target: String, call: ContractCall) -> Result<Digest, EngineError> {
        let tx = self.new_tx(target, TxKind::Call, &call);
        Ok(self.ledger.submit(tx)?.tx_id)
    }

    /// In immediate mode, seals and turns a reverted transaction into an
    /// error.
    fn commit(&mut self, txs: &[Digest]) -> Result<(), EngineError> {
        if self.policy == SealPolicy::Manual {
            return Ok(());
        }
        self.seal()?;
        for id in txs {
            if let Some((_, tx)) = self.ledger.find_transaction(id) {
                if let TxStatus::Reverted { reason } = &tx.status {
                    return Err(EngineError::Reverted {
                        tx_id: *id,
                        reason: reason.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Seals an empty block first if the next seal would run maintenance
    /// sweeps, so the dry run below sees the state the operation will meet.
    fn settle(&mut self) -> Result<(), EngineError> {
        if self.policy == SealPolicy::Immediate {
            let t = self.seal_time_if_submitted();
            let pending: Vec<Transaction> = self.ledger.pending().cloned().collect();
            if !self.world().housekeeping(t, &pending).is_empty() {
                self.clock = t;
                self.seal()?;
            }
        }
        Ok(())
    }

    /// Opens a container for `patient_id` with an explicit required-role set.
    pub fn open_container(&mut self, patient_id: &str, required_roles: BTreeSet<RoleCode>) -> Result<(), EngineError> {
        if self.world().container(patient_id).is_some() || self.opening.contains_key(patient_id) {
            return Err(ContractError::ContainerExists(patient_id.to_owned()).into());
        }
        let call = ContractCall::OpenContainer {
            patient_id: patient_id.to_owned(),
            required_roles: required_roles.clone(),
        };
        let id = self.submit_call(
            container_account(patient_id),
            TxKind::Deploy {
                code_size: CONTAINER_CODE_SIZE,
            },
            call,
        )?;
        self.opening.insert(patient_id.to_owned(), required_roles);
        self.commit(&[id])
    }

    /// Dry-runs `call` against the empty container that `ensure_container`
    /// would open, so a doomed first operation does not deploy anything.
    fn precheck_unopened(&self, patient_id: &str, call: &ContractCall) -> Result<(), EngineError> {
        if self.world().container(patient_id).is_some() || self.opening.contains_key(patient_id) {
            return Ok(());
        }
        let mut c = ConsentContainer::new(patient_id, self.required_roles.clone());
        let ctx = TxCtx {
            tx_id: Digest::ZERO,
            at: self.seal_time_if_submitted(),
        };
        apply_container(&mut c, call, self.fixtures(), ctx)?;
        Ok(())
    }

    fn ensure_container(&mut self, patient_id: &str) -> Result<(), EngineError> {
        if self.world().container(patient_id).is_none() && !self.opening.contains_key(patient_id) {
            self.open_container(patient_id, self.required_roles.clone())?;
        }
        Ok(())
    }

    fn required_roles_for(&self, patient_id: &str) -> BTreeSet<RoleCode> {
        self.world()
            .container(patient_id)
            .map(|c| c.required_roles().clone())
            .or_else(|| self.opening.get(patient_id).cloned())
            .unwrap_or_else(|| self.required_roles.clone())
    }

    fn active_consents(&self, patient_id: &str) -> Vec<&InformedConsent> {
        self.world()
            .container(patient_id)
            .map(|c| c.repository().values().collect())
            .unwrap_or_default()
    }

    /// Finalizes an agreement: hashes it, checks its consents against the
    /// patient's active set, keeps the document off chain and anchors the
    /// digest on chain.
    pub fn create_ppa(&mut self, ppa: Ppa) -> Result<PpaIntegrity, EngineError> {
        let integrity = hash_ppa(&ppa).map_err(EngineError::IncompletePpa)?;
        if self.ppas.contains_key(&ppa.ppa_id) || self.world().registry().contains(&ppa.ppa_id) {
            return Err(EngineError::DuplicatePpaId(ppa.ppa_id));
        }
        let fixtures = self.fixtures();
        let mut findings: Vec<Finding> = ppa.icc.iter().flat_map(|ic| validate_consent(ic, fixtures)).collect();
        for ic in &ppa.icc {
            if ic.patient_id != ppa.patient_id {
                findings.push(Finding {
                    code: crate::domain::FindingCode::MissingId,
                    detail: format!("{} belongs to `{}`", ic.consent_id, ic.patient_id),
                });
            }
        }
        let existing = self.active_consents(&ppa.patient_id);
        let report = detect_conflicts(
            existing.into_iter().chain(&ppa.icc),
            &self.required_roles_for(&ppa.patient_id),
            &fixtures.matrix,
        );
        if !findings.is_empty() || !report.is_empty() {
            return Err(EngineError::PpaConflict { findings, report });
        }
        self.settle()?;
        let call = ContractCall::StorePpaIntegrity {
            ppa_id: ppa.ppa_id.clone(),
            patient_id: ppa.patient_id.clone(),
            h_ppa: integrity.h_ppa,
        };
        let id = self.submit_call(REGISTRY_ACCOUNT.to_owned(), TxKind::Call, call)?;
        self.ppas.insert(ppa.ppa_id.clone(), ppa);
        self.commit(&[id])?;
        Ok(integrity)
    }

    /// Compares `current` against the digest anchored for `ppa_id`. A
    /// mismatch blocks later deployment of the agreement.
    pub fn verify_ppa_integrity(&mut self, ppa_id: &str, current: &Ppa) -> Result<IntegrityStatus, EngineError> {
        let status = self.check_integrity(ppa_id, current)?;
        if status == IntegrityStatus::Tampered {
            self.tampered.insert(ppa_id.to_owned());
        }
        Ok(status)
    }

    /// Same as [`verify_ppa_integrity`](Self::verify_ppa_integrity) without
    /// recording the outcome.
    pub fn check_integrity(&self, ppa_id: &str, current: &Ppa) -> Result<IntegrityStatus, EngineError> {
        let record = self
            .world()
            .registry()
            .get(ppa_id)
            .ok_or_else(|| EngineError::UnknownPpa(ppa_id.to_owned()))?;
        Ok(match hash_ppa(current) {
            Ok(i) if i.h_ppa == record.h_ppa => IntegrityStatus::Intact,
            _ => IntegrityStatus::Tampered,
        })
    }

    /// Replaces the off-chain copy of an agreement. The on-chain digest is
    /// untouched, so this is how tampering with the local store looks.
    pub fn overwrite_stored_ppa(&mut self, ppa: Ppa) {
        self.ppas.insert(ppa.ppa_id.clone(), ppa);
    }

    /// Writes every consent of a verified agreement to the patient's
    /// container, one transaction per consent.
    pub fn deploy_consents(&mut self, ppa_id: &str) -> Result<Vec<ConsentId>, EngineError> {
        let ppa = self
            .ppas
            .get(ppa_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownPpa(ppa_id.to_owned()))?;
        if self.tampered.contains(ppa_id) || self.verify_ppa_integrity(ppa_id, &ppa)? == IntegrityStatus::Tampered {
            return Err(EngineError::TamperedPpa(ppa_id.to_owned()));
        }
        let patient = ppa.patient_id.clone();
        let report = detect_conflicts(
            self.active_consents(&patient).into_iter().chain(&ppa.icc),
            &self.required_roles_for(&patient),
            &self.fixtures().matrix,
        );
        if !report.is_empty() {
            return Err(ContractError::ConsentConflict(report).into());
        }
        self.settle()?;
        self.ensure_container(&patient)?;
        let mut ids = Vec::with_capacity(ppa.icc.len());
        let mut txs = Vec::with_capacity(ppa.icc.len());
        for ic in &ppa.icc {
            let call = ContractCall::DeployConsent {
                ppa_id: ppa_id.to_owned(),
                consent: ic.clone(),
            };
            txs.push(self.submit_call(container_account(&patient), TxKind::Call, call)?);
            ids.push(ic.consent_id.clone());
        }
        self.commit(&txs)?;
        Ok(ids)
    }

    pub fn create_consent(&mut self, ic: InformedConsent) -> Result<ConsentId, EngineError> {
        self.settle()?;
        let (id, patient) = (ic.consent_id.clone(), ic.patient_id.clone());
        let call = ContractCall::CreateConsent { consent: ic };
        self.precheck_unopened(&patient, &call)?;
        self.ensure_container(&patient)?;
        let tx = self.submit_call(container_account(&patient), TxKind::Call, call)?;
        self.commit(&[tx])?;
        Ok(id)
    }

    fn holder_of_active(&self, consent_id: &str) -> Result<PatientId, EngineError> {
        self.world()
            .containers()
            .find(|c| c.active(consent_id).is_some())
            .map(|c| c.patient_id().to_owned())
            .ok_or_else(|| ContractError::UnknownConsent(consent_id.to_owned()).into())
    }

    pub fn alter_consent(&mut self, old_id: &str, new: InformedConsent) -> Result<ConsentId, EngineError> {
        self.settle()?;
        let patient = self.holder_of_active(old_id)?;
        let new_id = new.consent_id.clone();
        let call = ContractCall::AlterConsent {
            old_id: old_id.to_owned(),
            consent: new,
        };
        let tx = self.submit_call(container_account(&patient), TxKind::Call, call)?;
        self.commit(&[tx])?;
        Ok(new_id)
    }

    pub fn terminate_consent(&mut self, consent_id: &str) -> Result<(), EngineError> {
        self.settle()?;
        let patient = self.holder_of_active(consent_id)?;
        let call = ContractCall::TerminateConsent {
            consent_id: consent_id.to_owned(),
        };
        let tx = self.submit_call(container_account(&patient), TxKind::Call, call)?;
        self.commit(&[tx])
    }

    /// Archives every consent whose calendar expiry or use budget is spent
    /// as of `now`. Returns the ids archived (or, in manual mode, planned).
    pub fn expire_sweep(&mut self, now: LogicalTime) -> Result<Vec<ConsentId>, EngineError> {
        self.set_time(now);
        let fixtures = self.fixtures().clone();
        let plans: Vec<(PatientId, Vec<ConsentId>)> = self
            .world()
            .containers()
            .map(|c| {
                let ids = c.plan_sweep(now, &fixtures).into_iter().map(|(id, _)| id).collect::<Vec<_>>();
                (c.patient_id().to_owned(), ids)
            })
            .filter(|(_, ids)| !ids.is_empty())
            .collect();
        let mut txs = Vec::new();
        for (patient, _) in &plans {
            let call = ContractCall::ExpireSweep { now };
            txs.push(self.submit_unchecked(container_account(patient), call)?);
        }
        if txs.is_empty() {
            return Ok(Vec::new());
        }
        if self.policy == SealPolicy::Manual {
            return Ok(plans.into_iter().flat_map(|(_, ids)| ids).collect());
        }
        self.commit(&txs)?;
        let head = self.ledger.head();
        Ok(head
            .events
            .iter()
            .filter(|e| e.kind == EventKind::ConsentExpired && txs.contains(&e.tx_id))
            .filter_map(|e| e.get("consent_id").map(str::to_owned))
            .collect())
    }

    /// Granted accesses logged against `consent_id` in sealed blocks.
    pub fn use_count(&self, consent_id: &str) -> u64 {
        self.ledger
            .count_events(&EventFilter::kind(EventKind::AccessGranted).consent(consent_id)) as u64
    }

    pub(crate) fn pending_sweep_for(&self, patient_id: &str) -> bool {
        let target = container_account(patient_id);
        self.ledger
            .pending()
            .any(|t| t.target == target && t.call.method == "ExpireSweep")
    }

    pub(crate) fn commit_decision(&mut self) -> Result<(), EngineError> {
        if self.policy == SealPolicy::Immediate {
            self.seal()?;
        }
        Ok(())
    }
}
