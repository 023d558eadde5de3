//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{NaiveDate, NaiveDateTime};
use consentchain::authz::AccessRequest;
use consentchain::domain::{Condition, DayCode, RequestContext};
use consentchain::ledger::{EventKind, TxStatus, SYSTEM_SENDER};
use consentchain::{ConsentEngine, EngineConfig, InformedConsent, LogicalTime, OperationKind, Ppa, RoleCode, UserRef};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

pub const PATIENT: &str = "jordan";

/// The published role table, typed in by hand: for each record, the roles
/// allowed to read, write and update it.
const ROLE_TABLE: [(&str, &str, &str, &str); 10] = [
    ("PHI1001", "PATIENT DOC STF EMC", "PATIENT STF", "PATIENT STF"),
    ("PHI1002", "DOC PATIENT", "PATIENT DOC", "PATIENT DOC"),
    ("PHI1003", "DOC PATIENT PLT", "PLT", "PLT"),
    ("PHI1004", "DOC PATIENT NRS", "PATIENT PLT", "PATIENT PLT"),
    ("PHI1005", "DOC NRS PATIENT EMC", "DOC", "DOC"),
    ("PHI1006", "DOC PATIENT NRS PHR INA EMC", "DOC", "DOC"),
    ("PHI1007", "PLT DOC PATIENT EMC", "PLT", "PLT"),
    ("PHI1008", "RLT DOC PATIENT EMC", "RLT", "RLT"),
    ("PHI1009", "PATIENT BLO INA", "BLO PATIENT", "BLO PATIENT"),
    ("PHI1010", "PATIENT BLO INA", "BLO INA", "BLO INA"),
];

pub const PHIS: [&str; 10] = [
    "PHI1001", "PHI1002", "PHI1003", "PHI1004", "PHI1005", "PHI1006", "PHI1007", "PHI1008", "PHI1009", "PHI1010",
];

/// `(role, record) -> allowed operations`, from the hand transcription.
pub fn role_table() -> BTreeMap<(RoleCode, &'static str), BTreeSet<OperationKind>> {
    let mut out: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
    for (phi, read, write, update) in ROLE_TABLE {
        for (op, roles) in [(OperationKind::Read, read), (OperationKind::Write, write), (OperationKind::Update, update)] {
            for r in roles.split_whitespace() {
                out.entry((r.parse().unwrap(), phi)).or_default().insert(op);
            }
        }
    }
    out
}

pub fn table_permits(role: RoleCode, phi: &str, op: OperationKind) -> bool {
    role_table()
        .iter()
        .any(|((r, p), ops)| *r == role && *p == phi && ops.contains(&op))
}

pub fn dt(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(h, min, 0).unwrap()
}

pub fn consent(id: &str, role: RoleCode, user: &str, phis: &[&str], ops: &[OperationKind]) -> InformedConsent {
    InformedConsent::new(id, PATIENT, [UserRef::new(role, user)], phis.iter().copied(), ops.iter().copied())
}

pub fn ppa(id: &str, icc: Vec<InformedConsent>) -> Ppa {
    Ppa {
        ppa_id: id.into(),
        patient_id: PATIENT.into(),
        pc: vec!["patient=jordan".into(), "dob=1990-02-11".into()],
        prc: vec!["provider=general-hospital".into()],
        roc: vec!["hipaa".into()],
        icc,
        validity_end: NaiveDate::from_ymd_opt(2025, 12, 31).unwrap(),
    }
}

pub fn request(id: impl Into<String>, user: &UserRef, phi: &str, op: OperationKind, ctx: RequestContext) -> AccessRequest {
    AccessRequest {
        request_id: id.into(),
        subject: user.clone(),
        patient_id: PATIENT.into(),
        phi_id: phi.into(),
        operation: op,
        context: ctx,
    }
}

/// Lifecycle token per event kind, for the one-way pattern check.
fn token(kind: EventKind) -> Option<char> {
    Some(match kind {
        EventKind::ConsentCreated => 'C',
        EventKind::ConsentAltered => 'A',
        EventKind::ConsentTerminated => 'T',
        EventKind::ConsentExpired => 'E',
        EventKind::ConsentArchived => 'R',
        EventKind::AccessGranted | EventKind::AccessDenied => 'D',
        _ => return None,
    })
}

/// Checks that every consent's event stream is created once, optionally
/// closed by one lifecycle event and an archival, with nothing after.
pub fn check_lifecycle(engine: &ConsentEngine) -> Result<usize, String> {
    let pattern = Regex::new("^CD*[ATE]?R?$").unwrap();
    let mut streams: BTreeMap<String, String> = BTreeMap::new();
    for e in engine.ledger().all_events() {
        if let (Some(t), Some(id)) = (token(e.kind), e.get("consent_id")) {
            streams.entry(id.to_owned()).or_default().push(t);
        }
    }
    for (id, s) in &streams {
        if !pattern.is_match(s) {
            return Err(format!("consent {id} has event stream {s}"));
        }
    }
    Ok(streams.len())
}

/// Operation kinds the random driver issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpKind {
    Create,
    Alter,
    Terminate,
    Sweep,
    Request,
}

#[derive(Debug, Default, Clone)]
pub struct DriverStats {
    pub steps: usize,
    pub ok: BTreeMap<OpKind, usize>,
    pub rejected: BTreeMap<OpKind, usize>,
    pub grants: usize,
    pub denies: usize,
}

/// Issues random admissible and inadmissible operations against one engine
/// and checks the container invariants after every step.
pub struct Driver {
    pub engine: ConsentEngine,
    rng: ChaCha8Rng,
    next_id: usize,
    /// Consents this driver saw admitted.
    pub admitted: BTreeSet<String>,
    pub stats: DriverStats,
    users: Vec<UserRef>,
}

const ROLES: [RoleCode; 9] = [
    RoleCode::Doc,
    RoleCode::Nrs,
    RoleCode::Stf,
    RoleCode::Blo,
    RoleCode::Rlt,
    RoleCode::Plt,
    RoleCode::Emc,
    RoleCode::Phr,
    RoleCode::Ina,
];

impl Driver {
    pub fn new(seed: u64) -> Self {
        let mut engine = ConsentEngine::new(EngineConfig::default()).unwrap();
        engine.set_time(LogicalTime::from_datetime(dt(2024, 6, 3, 9, 0)));
        let base = vec![
            consent("base-doc", RoleCode::Doc, "doc-0", &["PHI1005"], &[OperationKind::Read]),
            consent("base-nrs", RoleCode::Nrs, "nrs-0", &["PHI1005"], &[OperationKind::Read]),
        ];
        engine.create_ppa(ppa("PPA-BASE", base)).unwrap();
        let ids = engine.deploy_consents("PPA-BASE").unwrap();
        let users = ROLES
            .iter()
            .flat_map(|r| (0..3).map(move |i| UserRef::new(*r, format!("{}-{i}", r.as_str().to_lowercase()))))
            .collect();
        Self {
            engine,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
            admitted: ids.into_iter().collect(),
            stats: DriverStats::default(),
            users,
        }
    }

    fn now(&self) -> NaiveDateTime {
        self.engine.clock().to_datetime()
    }

    fn random_condition(&mut self) -> Option<Condition> {
        let today = self.now().date();
        match self.rng.random_range(0..10) {
            0 | 1 => Some(Condition::AccessFrequency {
                max_uses: self.rng.random_range(1..4),
            }),
            2 => Some(Condition::CalendarExpiry {
                expiry_date: today + chrono::Days::new(self.rng.random_range(0..3)),
            }),
            3 => Some(Condition::TimeWindow {
                start_minute: 480,
                end_minute: 1020,
            }),
            4 => Some(Condition::DayOfWeek {
                allowed_days: DayCode::WEEKDAYS.into(),
            }),
            _ => None,
        }
    }

    /// A consent for one user. Mostly within the permission table, now and
    /// then outside it.
    fn random_consent(&mut self, user: UserRef) -> InformedConsent {
        self.next_id += 1;
        let id = format!("k{:05}", self.next_id);
        let table = role_table();
        let allowed: Vec<(&str, OperationKind)> = table
            .iter()
            .filter(|((r, _), _)| *r == user.role)
            .flat_map(|((_, p), ops)| ops.iter().map(move |o| (*p, *o)))
            .collect();
        let (phi, op) = if !allowed.is_empty() && self.rng.random_bool(0.9) {
            *allowed.choose(&mut self.rng).unwrap()
        } else {
            (*PHIS.choose(&mut self.rng).unwrap(), *OperationKind::ALL.choose(&mut self.rng).unwrap())
        };
        let mut ic = InformedConsent::new(id, PATIENT, [user], [phi], [op]);
        if let Some(c) = self.random_condition() {
            ic = ic.with_condition(c);
        }
        ic
    }

    fn active_ids(&self) -> Vec<String> {
        self.engine
            .container(PATIENT)
            .map(|c| c.repository().keys().cloned().collect())
            .unwrap_or_default()
    }

    fn pick_target(&mut self) -> String {
        let ids = self.active_ids();
        if ids.is_empty() || self.rng.random_bool(0.05) {
            "no-such-consent".into()
        } else {
            ids.choose(&mut self.rng).unwrap().clone()
        }
    }

    /// Runs one random step and checks the invariants.
    pub fn step(&mut self) -> Result<(), String> {
        self.stats.steps += 1;
        let advance = match self.rng.random_range(0..20) {
            0 => self.rng.random_range(3_600_000..86_400_000),
            1..=3 => self.rng.random_range(60_000..3_600_000),
            _ => self.rng.random_range(0..60_000),
        };
        self.engine.advance(advance);

        let state_before = self.engine.container(PATIENT).unwrap().clone();
        let height_before = self.engine.ledger().height();
        let kind = match self.rng.random_range(0..20) {
            0..=5 => OpKind::Create,
            6..=8 => OpKind::Alter,
            9..=10 => OpKind::Terminate,
            11 => OpKind::Sweep,
            _ => OpKind::Request,
        };
        let outcome: Result<Vec<String>, String> = match kind {
            OpKind::Create => {
                let user = self.users.choose(&mut self.rng).unwrap().clone();
                let ic = self.random_consent(user);
                let id = ic.consent_id.clone();
                self.engine.create_consent(ic).map(|_| vec![id]).map_err(|e| e.to_string())
            }
            OpKind::Alter => {
                let old = self.pick_target();
                let user = match self.engine.container(PATIENT).unwrap().active(&old) {
                    Some(ic) if self.rng.random_bool(0.7) => ic.users.iter().next().unwrap().clone(),
                    _ => self.users.choose(&mut self.rng).unwrap().clone(),
                };
                let new = self.random_consent(user);
                let id = new.consent_id.clone();
                self.engine.alter_consent(&old, new).map(|_| vec![id]).map_err(|e| e.to_string())
            }
            OpKind::Terminate => {
                let id = self.pick_target();
                self.engine.terminate_consent(&id).map(|_| vec![]).map_err(|e| e.to_string())
            }
            OpKind::Sweep => {
                let now = self.engine.clock();
                self.engine.expire_sweep(now).map(|_| vec![]).map_err(|e| e.to_string())
            }
            OpKind::Request => {
                let ids = self.active_ids();
                let (user, phi, op) = if !ids.is_empty() && self.rng.random_bool(0.7) {
                    let id = ids.choose(&mut self.rng).unwrap();
                    let ic = self.engine.container(PATIENT).unwrap().active(id).unwrap();
                    let (u, p, o) = ic.grants().next().unwrap();
                    (u.clone(), p.clone(), o)
                } else {
                    (
                        self.users.choose(&mut self.rng).unwrap().clone(),
                        PHIS.choose(&mut self.rng).unwrap().to_string(),
                        *OperationKind::ALL.choose(&mut self.rng).unwrap(),
                    )
                };
                let req = request(
                    format!("q{}", self.stats.steps),
                    &user,
                    &phi,
                    op,
                    RequestContext::at(self.now()),
                );
                match self.engine.authorize(&req) {
                    Ok(d) => {
                        if d.is_grant() {
                            self.stats.grants += 1;
                        } else {
                            self.stats.denies += 1;
                            if d.reasons.is_empty() {
                                return Err(format!("deny without reasons: {d:?}"));
                            }
                        }
                        Ok(vec![])
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
        };

        match outcome {
            Ok(new_ids) => {
                *self.stats.ok.entry(kind).or_default() += 1;
                self.admitted.extend(new_ids);
            }
            Err(_) => {
                *self.stats.rejected.entry(kind).or_default() += 1;
                // A rejected operation may only be preceded by time-driven
                // system sweeps; nothing of its own reaches the chain.
                let mut system_only = true;
                for b in &self.engine.ledger().blocks()[height_before as usize + 1..] {
                    for tx in &b.transactions {
                        if tx.sender != SYSTEM_SENDER && tx.status == TxStatus::Applied {
                            system_only = false;
                        }
                    }
                }
                if !system_only {
                    return Err(format!("rejected {kind:?} left an applied transaction"));
                }
                let after = self.engine.container(PATIENT).unwrap();
                if self.engine.ledger().height() == height_before && *after != state_before {
                    return Err(format!("rejected {kind:?} changed container state"));
                }
            }
        }
        self.check_container()
    }

    /// Disjointness and conservation.
    pub fn check_container(&self) -> Result<(), String> {
        let c = self.engine.container(PATIENT).unwrap();
        let repo: BTreeSet<&String> = c.repository().keys().collect();
        let arch: BTreeSet<&String> = c.archive().keys().collect();
        if let Some(id) = repo.intersection(&arch).next() {
            return Err(format!("{id} is both active and archived"));
        }
        if repo.len() + arch.len() != self.admitted.len() {
            return Err(format!(
                "{} active + {} archived != {} admitted",
                repo.len(),
                arch.len(),
                self.admitted.len()
            ));
        }
        if c.archive().values().any(|e| e.consent.status.is_active()) || c.repository().values().any(|ic| !ic.status.is_active()) {
            return Err("status flag disagrees with location".into());
        }
        Ok(())
    }
}
