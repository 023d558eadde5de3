//! Domain types: roles, operations, consents, patient-provider agreements.

mod condition;
mod digest;
pub mod encode;
mod fixtures;
mod time;
mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use condition::{Condition, ConditionKind, ConditionOutcome, DayCode, IpPrefix, RequestContext};
pub use digest::{sha256, Digest};
pub(crate) use digest::decode_lower_hex as digest_strict_hex;
pub use encode::CanonicalEncode;
pub use fixtures::{Catalog, Fixtures, PermissionMatrix, PhiCatalogEntry};
pub use time::LogicalTime;
pub use validate::{validate_consent, Finding, FindingCode};

pub type ConsentId = String;
pub type PatientId = String;
pub type PhiId = String;
pub type PpaId = String;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("incomplete patient-provider agreement: {0} is empty")]
    IncompletePpa(&'static str),
    #[error("request context lacks `{0}`")]
    MissingContextField(&'static str),
    #[error("unknown PHI `{0}`")]
    UnknownPhi(String),
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error("cannot parse {what}: `{input}`")]
    Parse { what: &'static str, input: String },
}

/// Treatment-team role codes plus the patient and external users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RoleCode {
    Doc,
    Nrs,
    Stf,
    Blo,
    Rlt,
    Plt,
    Emc,
    Phr,
    Ina,
    Patient,
    External,
}

impl RoleCode {
    pub const ALL: [RoleCode; 11] = [
        RoleCode::Doc,
        RoleCode::Nrs,
        RoleCode::Stf,
        RoleCode::Blo,
        RoleCode::Rlt,
        RoleCode::Plt,
        RoleCode::Emc,
        RoleCode::Phr,
        RoleCode::Ina,
        RoleCode::Patient,
        RoleCode::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleCode::Doc => "DOC",
            RoleCode::Nrs => "NRS",
            RoleCode::Stf => "STF",
            RoleCode::Blo => "BLO",
            RoleCode::Rlt => "RLT",
            RoleCode::Plt => "PLT",
            RoleCode::Emc => "EMC",
            RoleCode::Phr => "PHR",
            RoleCode::Ina => "INA",
            RoleCode::Patient => "PATIENT",
            RoleCode::External => "EXTERNAL",
        }
    }

    /// The nine treatment-team roles; the patient and external users are not
    /// team members.
    pub fn is_team_member(self) -> bool {
        !matches!(self, RoleCode::Patient | RoleCode::External)
    }
}

impl fmt::Display for RoleCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoleCode {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RoleCode::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::Parse {
                what: "role code",
                input: s.to_owned(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OperationKind {
    Read,
    Write,
    Update,
}

impl OperationKind {
    pub const ALL: [OperationKind; 3] = [OperationKind::Read, OperationKind::Write, OperationKind::Update];

    /// Write and Update change object state; Read never does.
    pub fn mutating(self) -> bool {
        !matches!(self, OperationKind::Read)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OperationKind::Read => "Read",
            OperationKind::Write => "Write",
            OperationKind::Update => "Update",
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            OperationKind::Read => 0,
            OperationKind::Write => 1,
            OperationKind::Update => 2,
        }
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperationKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OperationKind::ALL
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::Parse {
                what: "operation",
                input: s.to_owned(),
            })
    }
}

/// A user identifier qualified by its role, rendered `ROLE:user_id`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserRef {
    pub role: RoleCode,
    pub user_id: String,
}

impl UserRef {
    pub fn new(role: RoleCode, user_id: impl Into<String>) -> Self {
        Self {
            role,
            user_id: user_id.into(),
        }
    }
}

impl fmt::Display for UserRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role, self.user_id)
    }
}

impl FromStr for UserRef {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (role, id) = s.split_once(':').ok_or_else(|| DomainError::Parse {
            what: "user reference",
            input: s.to_owned(),
        })?;
        if id.is_empty() {
            return Err(DomainError::Parse {
                what: "user reference",
                input: s.to_owned(),
            });
        }
        Ok(UserRef::new(role.parse()?, id))
    }
}

impl Serialize for UserRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UserRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArchiveReasonKind {
    Altered,
    Terminated,
    Expired,
}

impl ArchiveReasonKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchiveReasonKind::Altered => "Altered",
            ArchiveReasonKind::Terminated => "Terminated",
            ArchiveReasonKind::Expired => "Expired",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum ConsentStatus {
    #[default]
    Active,
    Archived {
        reason: ArchiveReasonKind,
        at: LogicalTime,
    },
}

impl ConsentStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, ConsentStatus::Active)
    }
}

/// A patient's informed consent: users × objects × operations, guarded by
/// conditions that must all hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InformedConsent {
    pub consent_id: ConsentId,
    pub patient_id: PatientId,
    pub users: BTreeSet<UserRef>,
    pub objects: BTreeSet<PhiId>,
    pub operations: BTreeSet<OperationKind>,
    #[serde(default)]
    pub conditions: BTreeSet<Condition>,
    #[serde(default)]
    pub status: ConsentStatus,
}

impl InformedConsent {
    pub fn new(
        consent_id: impl Into<String>,
        patient_id: impl Into<String>,
        users: impl IntoIterator<Item = UserRef>,
        objects: impl IntoIterator<Item = impl Into<String>>,
        operations: impl IntoIterator<Item = OperationKind>,
    ) -> Self {
        Self {
            consent_id: consent_id.into(),
            patient_id: patient_id.into(),
            users: users.into_iter().collect(),
            objects: objects.into_iter().map(Into::into).collect(),
            operations: operations.into_iter().collect(),
            conditions: BTreeSet::new(),
            status: ConsentStatus::Active,
        }
    }

    pub fn with_condition(mut self, condition: Condition) -> Self {
        self.conditions.insert(condition);
        self
    }

    pub fn with_id(mut self, consent_id: impl Into<String>) -> Self {
        self.consent_id = consent_id.into();
        self
    }

    /// Every (user, object, operation) triple this consent grants.
    pub fn grants(&self) -> impl Iterator<Item = (&UserRef, &PhiId, OperationKind)> + '_ {
        self.users.iter().flat_map(move |u| {
            self.objects
                .iter()
                .flat_map(move |o| self.operations.iter().map(move |op| (u, o, *op)))
        })
    }

    pub fn covers(&self, user: &UserRef, phi_id: &str, op: OperationKind) -> bool {
        self.users.contains(user) && self.objects.contains(phi_id) && self.operations.contains(&op)
    }

    pub fn roles(&self) -> BTreeSet<RoleCode> {
        self.users.iter().map(|u| u.role).collect()
    }
}

/// Patient-provider agreement. Only the informed-consent component is
/// interpreted; the other three are carried as opaque strings and hashed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ppa {
    pub ppa_id: PpaId,
    pub patient_id: PatientId,
    pub pc: Vec<String>,
    pub prc: Vec<String>,
    pub roc: Vec<String>,
    pub icc: Vec<InformedConsent>,
    pub validity_end: NaiveDate,
}

impl Ppa {
    pub fn is_complete(&self) -> bool {
        self.missing_component().is_none()
    }

    fn missing_component(&self) -> Option<&'static str> {
        if self.pc.is_empty() {
            Some("PC")
        } else if self.prc.is_empty() {
            Some("PrC")
        } else if self.roc.is_empty() {
            Some("ROC")
        } else if self.icc.is_empty() {
            Some("ICC")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpaIntegrity {
    pub h_pc: Digest,
    pub h_prc: Digest,
    pub h_roc: Digest,
    pub h_icc: Digest,
    pub h_ppa: Digest,
}

/// Component digests and the composite agreement digest
/// `H(h_pc ‖ h_prc ‖ h_roc ‖ h_icc)`.
pub fn hash_ppa(ppa: &Ppa) -> Result<PpaIntegrity, DomainError> {
    if let Some(missing) = ppa.missing_component() {
        return Err(DomainError::IncompletePpa(missing));
    }
    let h_pc = sha256(&encode::component_list(&ppa.pc));
    let h_prc = sha256(&encode::component_list(&ppa.prc));
    let h_roc = sha256(&encode::component_list(&ppa.roc));
    let h_icc = sha256(&encode::consent_list(&ppa.icc));
    let mut joined = Vec::with_capacity(128);
    for h in [&h_pc, &h_prc, &h_roc, &h_icc] {
        joined.extend_from_slice(h.as_bytes());
    }
    Ok(PpaIntegrity {
        h_pc,
        h_prc,
        h_roc,
        h_icc,
        h_ppa: sha256(&joined),
    })
}
