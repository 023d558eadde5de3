use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{detect_conflicts, payload, ConflictReport, ContractError};
use crate::domain::{
    sha256, validate_consent, ArchiveReasonKind, CanonicalEncode, Condition, ConsentId,
    ConsentStatus, Digest, Fixtures, InformedConsent, LogicalTime, PatientId, PermissionMatrix,
    RequestContext, RoleCode,
};
use crate::ledger::{slots_for, EventKind, Execution, Payload, SlotWrites};

/// Roles that must stay covered by a patient's active consents unless the
/// container was opened with a different set.
pub fn default_required_roles() -> BTreeSet<RoleCode> {
    [RoleCode::Doc, RoleCode::Nrs].into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ArchiveReason {
    Altered { replaced_by: ConsentId },
    Terminated,
    Expired { violated: Condition },
}

impl ArchiveReason {
    pub fn kind(&self) -> ArchiveReasonKind {
        match self {
            ArchiveReason::Altered { .. } => ArchiveReasonKind::Altered,
            ArchiveReason::Terminated => ArchiveReasonKind::Terminated,
            ArchiveReason::Expired { .. } => ArchiveReasonKind::Expired,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub consent: InformedConsent,
    pub reason: ArchiveReason,
    pub archived_at: LogicalTime,
    pub tx_id: Digest,
}

/// Where a state change came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxCtx {
    pub tx_id: Digest,
    pub at: LogicalTime,
}

/// One patient's consents: the active repository and the read-only archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentContainer {
    patient_id: PatientId,
    required_roles: BTreeSet<RoleCode>,
    repository: BTreeMap<ConsentId, InformedConsent>,
    archive: BTreeMap<ConsentId, ArchiveEntry>,
    use_counts: BTreeMap<ConsentId, u64>,
}

impl ConsentContainer {
    pub fn new(patient_id: impl Into<PatientId>, required_roles: BTreeSet<RoleCode>) -> Self {
        Self {
            patient_id: patient_id.into(),
            required_roles,
            repository: BTreeMap::new(),
            archive: BTreeMap::new(),
            use_counts: BTreeMap::new(),
        }
    }

    /// Builds a container with an arbitrary active set, bypassing admission.
    /// Intended for exhaustive tests of the lifecycle rules.
    pub fn with_repository(
        patient_id: impl Into<PatientId>,
        required_roles: BTreeSet<RoleCode>,
        consents: impl IntoIterator<Item = InformedConsent>,
    ) -> Self {
        let mut c = Self::new(patient_id, required_roles);
        for ic in consents {
            c.repository.insert(ic.consent_id.clone(), ic);
        }
        c
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn required_roles(&self) -> &BTreeSet<RoleCode> {
        &self.required_roles
    }

    pub fn repository(&self) -> &BTreeMap<ConsentId, InformedConsent> {
        &self.repository
    }

    pub fn archive(&self) -> &BTreeMap<ConsentId, ArchiveEntry> {
        &self.archive
    }

    pub fn active(&self, id: &str) -> Option<&InformedConsent> {
        self.repository.get(id)
    }

    pub fn archived(&self, id: &str) -> Option<&ArchiveEntry> {
        self.archive.get(id)
    }

    pub fn knows(&self, id: &str) -> bool {
        self.repository.contains_key(id) || self.archive.contains_key(id)
    }

    /// Grants logged against `id` in executed (sealed) transactions.
    pub fn use_count(&self, id: &str) -> u64 {
        self.use_counts.get(id).copied().unwrap_or(0)
    }

    /// Canonical JSON of the whole container.
    pub fn export(&self) -> String {
        serde_json::to_string(self).expect("container serializes")
    }

    pub fn state_digest(&self) -> Digest {
        sha256(self.export().as_bytes())
    }

    fn conflicts_without(
        &self,
        removed: &BTreeSet<&str>,
        added: Option<&InformedConsent>,
        matrix: &PermissionMatrix,
    ) -> ConflictReport {
        let rest = self
            .repository
            .values()
            .filter(|ic| !removed.contains(ic.consent_id.as_str()))
            .chain(added);
        detect_conflicts(rest, &self.required_roles, matrix)
    }

    fn admit_checks(&self, ic: &InformedConsent, fixtures: &Fixtures) -> Result<(), ContractError> {
        if ic.patient_id != self.patient_id {
            return Err(ContractError::PatientMismatch {
                expected: self.patient_id.clone(),
                found: ic.patient_id.clone(),
            });
        }
        let findings = validate_consent(ic, fixtures);
        if !findings.is_empty() {
            return Err(ContractError::ValidationFailed(findings));
        }
        if self.knows(&ic.consent_id) {
            return Err(ContractError::DuplicateConsentId(ic.consent_id.clone()));
        }
        Ok(())
    }

    /// Admits a new consent. With `check_team` off the required-role rule is
    /// skipped, which lets a pre-checked batch be written one consent per
    /// transaction.
    pub fn create(
        &mut self,
        ic: InformedConsent,
        fixtures: &Fixtures,
        check_team: bool,
        ctx: TxCtx,
    ) -> Result<Execution, ContractError> {
        self.admit_checks(&ic, fixtures)?;
        let required = if check_team {
            self.required_roles.clone()
        } else {
            BTreeSet::new()
        };
        let report = detect_conflicts(self.repository.values().chain([&ic]), &required, &fixtures.matrix);
        if !report.is_empty() {
            return Err(ContractError::ConsentConflict(report));
        }
        let writes = SlotWrites::new_slots(slots_for(ic.canonical_bytes().len()));
        let events = vec![(EventKind::ConsentCreated, payload::created(&ic, ctx))];
        self.repository.insert(ic.consent_id.clone(), ic);
        Ok(Execution { events, writes })
    }

    /// Replaces `old_id` with `new`: the old consent is archived as altered
    /// and the new one enters the repository. Both the removal and the
    /// resulting set must be conflict-free.
    pub fn alter(
        &mut self,
        old_id: &str,
        new: InformedConsent,
        fixtures: &Fixtures,
        ctx: TxCtx,
    ) -> Result<Execution, ContractError> {
        if !self.repository.contains_key(old_id) {
            return Err(ContractError::UnknownConsent(old_id.to_owned()));
        }
        self.admit_checks(&new, fixtures)?;
        let removed: BTreeSet<&str> = [old_id].into();
        let stage1 = self.conflicts_without(&removed, None, &fixtures.matrix);
        if !stage1.is_empty() {
            return Err(ContractError::ConsentConflict(stage1));
        }
        let stage2 = self.conflicts_without(&removed, Some(&new), &fixtures.matrix);
        if !stage2.is_empty() {
            return Err(ContractError::ConsentConflict(stage2));
        }

        let new_id = new.consent_id.clone();
        let mut events = vec![(
            EventKind::ConsentAltered,
            payload::altered(&self.patient_id, old_id, &new_id, ctx),
        )];
        let reason = ArchiveReason::Altered {
            replaced_by: new_id.clone(),
        };
        events.push(self.move_to_archive(old_id, reason, ctx));
        let writes = SlotWrites::new_slots(slots_for(new.canonical_bytes().len()))
            .add(SlotWrites { new: 1, updated: 1 });
        events.push((EventKind::ConsentCreated, payload::created(&new, ctx)));
        self.repository.insert(new_id, new);
        Ok(Execution { events, writes })
    }

    pub fn terminate(&mut self, id: &str, fixtures: &Fixtures, ctx: TxCtx) -> Result<Execution, ContractError> {
        self.archive_consent(id, ArchiveReason::Terminated, fixtures, ctx)
    }

    /// The shared removal step: conflict check on `R - id`, then an atomic
    /// move into the archive.
    pub fn archive_consent(
        &mut self,
        id: &str,
        reason: ArchiveReason,
        fixtures: &Fixtures,
        ctx: TxCtx,
    ) -> Result<Execution, ContractError> {
        if !self.repository.contains_key(id) {
            return Err(ContractError::UnknownConsent(id.to_owned()));
        }
        let report = self.conflicts_without(&[id].into(), None, &fixtures.matrix);
        if !report.is_empty() {
            return Err(ContractError::ConsentConflict(report));
        }
        let mut events = Vec::with_capacity(2);
        match &reason {
            ArchiveReason::Terminated => events.push((
                EventKind::ConsentTerminated,
                payload::lifecycle(&self.patient_id, id, ctx),
            )),
            ArchiveReason::Expired { violated } => events.push((
                EventKind::ConsentExpired,
                payload::expired(&self.patient_id, id, violated, ctx),
            )),
            ArchiveReason::Altered { replaced_by } => events.push((
                EventKind::ConsentAltered,
                payload::altered(&self.patient_id, id, replaced_by, ctx),
            )),
        }
        events.push(self.move_to_archive(id, reason, ctx));
        Ok(Execution {
            events,
            writes: SlotWrites { new: 1, updated: 1 },
        })
    }

    fn move_to_archive(&mut self, id: &str, reason: ArchiveReason, ctx: TxCtx) -> (EventKind, Payload) {
        let mut consent = self.repository.remove(id).expect("caller checked presence");
        consent.status = ConsentStatus::Archived {
            reason: reason.kind(),
            at: ctx.at,
        };
        let ev = payload::archived(&self.patient_id, id, &reason, ctx);
        self.archive.insert(
            id.to_owned(),
            ArchiveEntry {
                consent,
                reason,
                archived_at: ctx.at,
                tx_id: ctx.tx_id,
            },
        );
        (EventKind::ConsentArchived, ev)
    }

    /// Consents a sweep at `now` would archive, with the condition each one
    /// violates. Only terminal conditions are looked at. A consent whose
    /// removal would leave a conflict is skipped.
    pub fn plan_sweep(&self, now: LogicalTime, fixtures: &Fixtures) -> Vec<(ConsentId, Condition)> {
        let mut removed: BTreeSet<&str> = BTreeSet::new();
        let mut out = Vec::new();
        for (id, ic) in &self.repository {
            let ctx = RequestContext::at(now.to_datetime()).with_prior_uses(self.use_count(id));
            let violated = ic.conditions.iter().find(|c| {
                c.kind().is_terminal() && matches!(c.evaluate(&ctx), Ok(o) if !o.is_satisfied())
            });
            let Some(violated) = violated else { continue };
            removed.insert(id);
            if self.conflicts_without(&removed, None, &fixtures.matrix).is_empty() {
                out.push((id.clone(), violated.clone()));
            } else {
                removed.remove(id.as_str());
            }
        }
        out
    }

    pub fn sweep(&mut self, now: LogicalTime, fixtures: &Fixtures, ctx: TxCtx) -> (Vec<ConsentId>, Execution) {
        let plan = self.plan_sweep(now, fixtures);
        let mut exec = Execution::default();
        let mut swept = Vec::with_capacity(plan.len());
        for (id, violated) in plan {
            let step = self
                .archive_consent(&id, ArchiveReason::Expired { violated }, fixtures, ctx)
                .expect("planned removals are conflict-free");
            exec.events.extend(step.events);
            exec.writes = exec.writes.add(step.writes);
            swept.push(id);
        }
        (swept, exec)
    }

    /// Records a grant against `consent_id`.
    pub fn record_use(&mut self, consent_id: &str) -> SlotWrites {
        let n = self.use_counts.entry(consent_id.to_owned()).or_insert(0);
        *n += 1;
        if *n == 1 {
            SlotWrites::new_slots(1)
        } else {
            SlotWrites { new: 0, updated: 1 }
        }
    }
}
