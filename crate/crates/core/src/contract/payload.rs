//! Event payload builders. Every payload carries `patient_id`, and every
//! consent-scoped one carries `consent_id`, so the ledger index and the
//! provenance graph need nothing else.

use super::container::{ArchiveReason, TxCtx};
use crate::domain::{Condition, InformedConsent};
use crate::ledger::Payload;

fn base(patient_id: &str, consent_id: &str, ctx: TxCtx) -> Payload {
    let mut p = Payload::new();
    p.insert("patient_id".into(), patient_id.to_owned());
    p.insert("consent_id".into(), consent_id.to_owned());
    p.insert("at".into(), ctx.at.millis().to_string());
    p
}

pub(crate) fn created(ic: &InformedConsent, ctx: TxCtx) -> Payload {
    let mut p = base(&ic.patient_id, &ic.consent_id, ctx);
    p.insert("consent".into(), serde_json::to_string(ic).expect("consent serializes"));
    p
}

pub(crate) fn altered(patient_id: &str, old: &str, new: &str, ctx: TxCtx) -> Payload {
    let mut p = base(patient_id, old, ctx);
    p.insert("replaced_by".into(), new.to_owned());
    p
}

pub(crate) fn lifecycle(patient_id: &str, consent_id: &str, ctx: TxCtx) -> Payload {
    base(patient_id, consent_id, ctx)
}

pub(crate) fn expired(patient_id: &str, consent_id: &str, violated: &Condition, ctx: TxCtx) -> Payload {
    let mut p = base(patient_id, consent_id, ctx);
    p.insert("violated".into(), violated.to_string());
    p
}

pub(crate) fn archived(patient_id: &str, consent_id: &str, reason: &ArchiveReason, ctx: TxCtx) -> Payload {
    let mut p = base(patient_id, consent_id, ctx);
    p.insert("reason".into(), reason.kind().as_str().to_owned());
    if let ArchiveReason::Altered { replaced_by } = reason {
        p.insert("replaced_by".into(), replaced_by.clone());
    }
    p
}
