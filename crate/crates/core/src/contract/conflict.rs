use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{InformedConsent, OperationKind, PermissionMatrix, RoleCode, UserRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConflictCode {
    IncompleteTeam,
    DuplicateGrant,
    MatrixViolation,
    UnknownConsent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictFinding {
    pub code: ConflictCode,
    pub detail: String,
    pub implicated: Vec<String>,
}

/// Findings against a proposed repository state. Empty means admissible.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub findings: Vec<ConflictFinding>,
}

impl ConflictReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, code: ConflictCode) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    pub fn codes(&self) -> BTreeSet<ConflictCode> {
        self.findings.iter().map(|f| f.code).collect()
    }

    pub fn unknown_consent(id: &str) -> Self {
        Self {
            findings: vec![ConflictFinding {
                code: ConflictCode::UnknownConsent,
                detail: format!("{id} is not in the repository"),
                implicated: vec![id.to_owned()],
            }],
        }
    }
}

impl fmt::Display for ConflictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, x) in self.findings.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?}: {}", x.code, x.detail)?;
        }
        Ok(())
    }
}

/// Checks a proposed set of active consents.
///
/// - `DuplicateGrant`: two distinct entries share a (user, object, operation)
///   triple. One finding per later entry, naming the first holder.
/// - `MatrixViolation`: a triple the permission matrix does not allow.
/// - `IncompleteTeam`: a required role that no entry grants anything to.
pub fn detect_conflicts<'a>(
    proposed: impl IntoIterator<Item = &'a InformedConsent>,
    required_roles: &BTreeSet<RoleCode>,
    matrix: &PermissionMatrix,
) -> ConflictReport {
    let proposed: Vec<&InformedConsent> = proposed.into_iter().collect();
    let mut findings = Vec::new();

    // Entries are positional so that two copies of the same consent still
    // count as distinct.
    let mut first_owner: BTreeMap<(&UserRef, &str, OperationKind), usize> = BTreeMap::new();
    let mut pairs: BTreeMap<(usize, usize), (&UserRef, &str, OperationKind)> = BTreeMap::new();
    for (i, ic) in proposed.iter().enumerate() {
        for (u, phi, op) in ic.grants() {
            let key = (u, phi.as_str(), op);
            match first_owner.get(&key) {
                Some(&j) if j != i => {
                    pairs.entry((j, i)).or_insert(key);
                }
                _ => {
                    first_owner.insert(key, i);
                }
            }
        }
    }
    for ((j, i), (u, phi, op)) in pairs {
        findings.push(ConflictFinding {
            code: ConflictCode::DuplicateGrant,
            detail: format!(
                "{} and {} both grant {u} {op} on {phi}",
                proposed[j].consent_id, proposed[i].consent_id
            ),
            implicated: vec![proposed[j].consent_id.clone(), proposed[i].consent_id.clone()],
        });
    }

    for ic in &proposed {
        for (u, phi, op) in ic.grants() {
            if !matrix.permits(u.role, phi, op).unwrap_or(false) {
                findings.push(ConflictFinding {
                    code: ConflictCode::MatrixViolation,
                    detail: format!("{} lets {u} {op} {phi}", ic.consent_id),
                    implicated: vec![ic.consent_id.clone()],
                });
            }
        }
    }

    let granted: BTreeSet<RoleCode> = proposed
        .iter()
        .filter(|ic| !ic.objects.is_empty() && !ic.operations.is_empty())
        .flat_map(|ic| ic.roles())
        .collect();
    for role in required_roles.difference(&granted) {
        findings.push(ConflictFinding {
            code: ConflictCode::IncompleteTeam,
            detail: format!("no active consent grants {role}"),
            implicated: Vec::new(),
        });
    }

    ConflictReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Fixtures;

    fn ic(id: &str, role: RoleCode, user: &str, phi: &str, op: OperationKind) -> InformedConsent {
        InformedConsent::new(id, "p", [UserRef::new(role, user)], [phi], [op])
    }

    fn team() -> BTreeSet<RoleCode> {
        [RoleCode::Doc, RoleCode::Nrs].into()
    }

    #[test]
    fn disjoint_conformant_set_is_clean() {
        let f = Fixtures::default();
        let a = ic("a", RoleCode::Doc, "d", "PHI1005", OperationKind::Read);
        let b = ic("b", RoleCode::Nrs, "n", "PHI1004", OperationKind::Read);
        assert!(detect_conflicts([&a, &b], &team(), &f.matrix).is_empty());
    }

    #[test]
    fn duplicate_triple_across_consents() {
        let f = Fixtures::default();
        let a = ic("a", RoleCode::Nrs, "n", "PHI1004", OperationKind::Read);
        let b = ic("b", RoleCode::Nrs, "n", "PHI1004", OperationKind::Read);
        let r = detect_conflicts([&a, &b], &BTreeSet::new(), &f.matrix);
        assert_eq!(r.codes(), [ConflictCode::DuplicateGrant].into());
        assert_eq!(r.findings[0].implicated, vec!["a".to_string(), "b".to_string()]);
        // The same consent twice is still two entries.
        let r = detect_conflicts([&a, &a], &BTreeSet::new(), &f.matrix);
        assert!(r.has(ConflictCode::DuplicateGrant));
    }

    #[test]
    fn missing_nurse_is_incomplete_team() {
        let f = Fixtures::default();
        let a = ic("a", RoleCode::Doc, "d", "PHI1005", OperationKind::Read);
        let r = detect_conflicts([&a], &team(), &f.matrix);
        assert_eq!(r.codes(), [ConflictCode::IncompleteTeam].into());
        assert!(detect_conflicts([], &BTreeSet::new(), &f.matrix).is_empty());
    }

    #[test]
    fn matrix_violation_reported() {
        let f = Fixtures::default();
        let a = ic("a", RoleCode::Phr, "p", "PHI1006", OperationKind::Write);
        let r = detect_conflicts([&a], &BTreeSet::new(), &f.matrix);
        assert_eq!(r.codes(), [ConflictCode::MatrixViolation].into());
    }
}
