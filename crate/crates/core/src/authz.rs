//! Access authorization against a patient's active consents.
//!
//! Decisions are computed from sealed contract state. Each one is logged by
//! submitting a transaction; the grant only counts against a use budget once
//! that transaction is sealed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contract::{container_account, ContractCall};
use crate::domain::{
    Condition, ConditionOutcome, ConsentId, Digest, LogicalTime, OperationKind, PatientId, PhiId,
    RequestContext, UserRef,
};
use crate::engine::{ConsentEngine, EngineError};
use crate::ledger::{EventFilter, EventKind, EventRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub request_id: String,
    pub subject: UserRef,
    pub patient_id: PatientId,
    pub phi_id: PhiId,
    pub operation: OperationKind,
    pub context: RequestContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Grant,
    Deny,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Grant => "Grant",
            Outcome::Deny => "Deny",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", content = "condition")]
pub enum DenyReason {
    NoConsent,
    ConditionViolated(Condition),
    FrequencyExhausted,
    ConsentArchived,
    MatrixViolation,
    PolicyDenied(String),
}

impl DenyReason {
    pub fn code(&self) -> &'static str {
        match self {
            DenyReason::NoConsent => "NoConsent",
            DenyReason::ConditionViolated(_) => "ConditionViolated",
            DenyReason::FrequencyExhausted => "FrequencyExhausted",
            DenyReason::ConsentArchived => "ConsentArchived",
            DenyReason::MatrixViolation => "MatrixViolation",
            DenyReason::PolicyDenied(_) => "PolicyDenied",
        }
    }
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::ConditionViolated(c) => write!(f, "ConditionViolated({c})"),
            DenyReason::PolicyDenied(why) => write!(f, "PolicyDenied({why})"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub request_id: String,
    pub outcome: Outcome,
    pub matched_consent: Option<ConsentId>,
    pub reasons: Vec<DenyReason>,
    pub decided_at: LogicalTime,
    pub logged_tx: Digest,
}

impl AccessDecision {
    pub fn is_grant(&self) -> bool {
        self.outcome == Outcome::Grant
    }

    /// One compact JSON line.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("decision serializes")
    }
}

/// Organizational or regulatory check run alongside consent evaluation.
/// Returning `Some(reason)` turns a would-be grant into a denial.
pub trait PolicyHook: Send {
    fn veto(&self, request: &AccessRequest) -> Option<String>;
}

impl<F> PolicyHook for F
where
    F: Fn(&AccessRequest) -> Option<String> + Send,
{
    fn veto(&self, request: &AccessRequest) -> Option<String> {
        self(request)
    }
}

fn push_unique(reasons: &mut Vec<DenyReason>, r: DenyReason) {
    if !reasons.contains(&r) {
        reasons.push(r);
    }
}

impl ConsentEngine {
    /// Decides `req` and logs the decision on chain.
    pub fn authorize(&mut self, req: &AccessRequest) -> Result<AccessDecision, EngineError> {
        if self.container(&req.patient_id).is_none() {
            return Err(EngineError::UnknownPatient(req.patient_id.clone()));
        }
        self.set_time(LogicalTime::from_datetime(req.context.timestamp));
        let now = self.clock();

        // The decision reads sealed state. Any expiry it uncovers is swept
        // right after the decision is logged, so the log never names a
        // consent that is already archived.
        let sweep_due = !self.pending_sweep_for(&req.patient_id)
            && !self
                .container(&req.patient_id)
                .expect("checked above")
                .plan_sweep(now, self.fixtures())
                .is_empty();

        let container = self.container(&req.patient_id).expect("checked above");
        let candidates: Vec<_> = container
            .repository()
            .values()
            .filter(|ic| ic.covers(&req.subject, &req.phi_id, req.operation))
            .collect();

        let mut matched = None;
        let mut reasons = Vec::new();
        for ic in &candidates {
            let ctx = req.context.clone().with_prior_uses(self.use_count(&ic.consent_id));
            let mut ok = true;
            for cond in &ic.conditions {
                let r = match cond.evaluate(&ctx) {
                    Ok(ConditionOutcome::Satisfied) => continue,
                    Ok(ConditionOutcome::Exhausted) => DenyReason::FrequencyExhausted,
                    Ok(ConditionOutcome::Violated(_)) | Err(_) => DenyReason::ConditionViolated(cond.clone()),
                };
                ok = false;
                push_unique(&mut reasons, r);
            }
            if ok {
                matched = Some(ic.consent_id.clone());
                break;
            }
        }

        if candidates.is_empty() {
            let archived = container
                .archive()
                .values()
                .any(|e| e.consent.covers(&req.subject, &req.phi_id, req.operation));
            reasons.push(if archived {
                DenyReason::ConsentArchived
            } else {
                DenyReason::NoConsent
            });
            if !self
                .fixtures()
                .matrix_permits(req.subject.role, &req.phi_id, req.operation)
                .unwrap_or(false)
            {
                reasons.push(DenyReason::MatrixViolation);
            }
        }

        if matched.is_some() {
            if let Some(why) = self.policy_hook.as_ref().and_then(|h| h.veto(req)) {
                matched = None;
                reasons = vec![DenyReason::PolicyDenied(why)];
            }
        }

        let outcome = if matched.is_some() {
            reasons.clear();
            Outcome::Grant
        } else {
            Outcome::Deny
        };
        let logged_consent = matched.clone().or_else(|| candidates.first().map(|ic| ic.consent_id.clone()));
        let payload = decision_payload(req, outcome, logged_consent.as_deref(), &reasons, now);
        let call = ContractCall::LogDecision {
            granted: outcome == Outcome::Grant,
            matched: matched.clone(),
            payload,
        };
        let logged_tx = self.submit_unchecked(container_account(&req.patient_id), call)?;
        if sweep_due {
            self.submit_unchecked(container_account(&req.patient_id), ContractCall::ExpireSweep { now })?;
        }
        let decision = AccessDecision {
            request_id: req.request_id.clone(),
            outcome,
            matched_consent: matched,
            reasons,
            decided_at: now,
            logged_tx,
        };
        self.decisions.push(decision.clone());
        self.commit_decision()?;
        Ok(decision)
    }

    /// Every sealed decision for `patient_id`, rebuilt from events alone.
    pub fn replay_decisions(&self, patient_id: &str) -> Vec<AccessDecision> {
        self.ledger()
            .events(&EventFilter::default().patient(patient_id))
            .into_iter()
            .filter(|e| e.kind.is_decision())
            .filter_map(decision_from_event)
            .collect()
    }

    pub(crate) fn replay_all_decisions(&self) -> Vec<AccessDecision> {
        self.ledger()
            .events(&EventFilter::default())
            .into_iter()
            .filter(|e| e.kind.is_decision())
            .filter_map(decision_from_event)
            .collect()
    }

    /// Decisions as JSON lines, one per decision, newline-terminated.
    pub fn export_decisions(decisions: &[AccessDecision]) -> String {
        decisions.iter().map(|d| d.to_line() + "\n").collect()
    }
}

fn decision_payload(
    req: &AccessRequest,
    outcome: Outcome,
    consent_id: Option<&str>,
    reasons: &[DenyReason],
    now: LogicalTime,
) -> crate::ledger::Payload {
    let mut p = crate::ledger::Payload::new();
    p.insert("request_id".into(), req.request_id.clone());
    p.insert("patient_id".into(), req.patient_id.clone());
    p.insert("user".into(), req.subject.to_string());
    p.insert("role".into(), req.subject.role.to_string());
    p.insert("phi_id".into(), req.phi_id.clone());
    p.insert("operation".into(), req.operation.to_string());
    p.insert("outcome".into(), outcome.to_string());
    p.insert("reasons".into(), serde_json::to_string(reasons).expect("reasons serialize"));
    p.insert("decided_at".into(), now.millis().to_string());
    p.insert("request_time".into(), req.context.timestamp.to_string());
    if let Some(id) = consent_id {
        p.insert("consent_id".into(), id.to_owned());
    }
    p
}

/// Rebuilds the decision logged by `e`. `None` for events that are not
/// well-formed decision records.
pub fn decision_from_event(e: &EventRecord) -> Option<AccessDecision> {
    let outcome = match e.kind {
        EventKind::AccessGranted => Outcome::Grant,
        EventKind::AccessDenied => Outcome::Deny,
        _ => return None,
    };
    Some(AccessDecision {
        request_id: e.get("request_id")?.to_owned(),
        outcome,
        matched_consent: match outcome {
            Outcome::Grant => Some(e.get("consent_id")?.to_owned()),
            Outcome::Deny => None,
        },
        reasons: serde_json::from_str(e.get("reasons")?).ok()?,
        decided_at: LogicalTime(e.get("decided_at")?.parse().ok()?),
        logged_tx: e.tx_id,
    })
}
