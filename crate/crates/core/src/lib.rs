//! Informed-consent management on a deterministic, hash-chained ledger.
//!
//! The crate is organised the way a request flows through the system:
//!
//! - [`domain`]: consents, agreements, conditions, the PHI catalog and the
//!   role permission matrix, plus canonical encoding and hashing.
//! - [`ledger`]: an embedded append-only chain with a FIFO pool, sealed
//!   blocks, event logs and a gas schedule.
//! - [`contract`]: the per-patient consent container (repository + archive),
//!   the agreement integrity registry and conflict detection.
//! - [`engine`]: wires the contract state onto the ledger and exposes the
//!   administration operations.
//! - [`authz`]: request authorization against active consents, with every
//!   decision logged on chain.
//! - [`provenance`]: a graph rebuilt from ledger events, answering user,
//!   resource, operation and condition oriented queries.
//! - [`cli`]: scenario runner and the benchmark harness behind the
//!   `consentchain` binary.

pub mod authz;
pub mod cli;
pub mod contract;
pub mod domain;
pub mod engine;
pub mod ledger;
pub mod provenance;

pub use domain::{
    Catalog, Condition, ConditionKind, Digest, Fixtures, InformedConsent, LogicalTime,
    OperationKind, PermissionMatrix, Ppa, PpaIntegrity, RequestContext, RoleCode, UserRef,
};
pub use engine::{ConsentEngine, EngineConfig, EngineError, SealPolicy};
pub use ledger::{ChainConfig, GasSchedule, Ledger};
