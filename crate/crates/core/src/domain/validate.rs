use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Fixtures, InformedConsent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FindingCode {
    MissingId,
    EmptyUserSet,
    EmptyObjectSet,
    EmptyOperationSet,
    UnknownPhi,
    InvalidCondition,
    NotActive,
    MatrixViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: FindingCode,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.detail)
    }
}

/// Structural and permission-matrix checks run before a consent is admitted.
/// An empty result means the consent is admissible on its own.
pub fn validate_consent(ic: &InformedConsent, fixtures: &Fixtures) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |code, detail: String| out.push(Finding { code, detail });

    if ic.consent_id.is_empty() || ic.patient_id.is_empty() {
        push(FindingCode::MissingId, "consent_id and patient_id must be non-empty".into());
    }
    if ic.users.is_empty() {
        push(FindingCode::EmptyUserSet, format!("{} grants no users", ic.consent_id));
    }
    if ic.objects.is_empty() {
        push(FindingCode::EmptyObjectSet, format!("{} covers no objects", ic.consent_id));
    }
    if ic.operations.is_empty() {
        push(FindingCode::EmptyOperationSet, format!("{} permits no operations", ic.consent_id));
    }
    for phi in &ic.objects {
        if !fixtures.catalog.contains(phi) {
            push(FindingCode::UnknownPhi, format!("{phi} is not in the catalog"));
        }
    }
    for cond in &ic.conditions {
        if let Err(why) = cond.check() {
            push(FindingCode::InvalidCondition, why);
        }
    }
    if !ic.status.is_active() {
        push(FindingCode::NotActive, format!("{} is already archived", ic.consent_id));
    }
    for (user, phi, op) in ic.grants() {
        // Unknown PHIs were reported above.
        if let Ok(false) = fixtures.matrix_permits(user.role, phi, op) {
            push(
                FindingCode::MatrixViolation,
                format!("{} may not {} {}", user.role, op, phi),
            );
        }
    }
    out
}
