use chrono::NaiveDate;

use super::*;
use crate::domain::{Condition, OperationKind as Op, RoleCode as R, UserRef};
use crate::ledger::{ChainConfig, Ledger};

fn ctx(n: u8) -> TxCtx {
    TxCtx {
        tx_id: crate::domain::sha256(&[n]),
        at: LogicalTime(1_000 * n as u64),
    }
}

fn ic(id: &str, role: R, user: &str, phis: &[&str], ops: &[Op]) -> InformedConsent {
    InformedConsent::new(id, "jordan", [UserRef::new(role, user)], phis.iter().copied(), ops.iter().copied())
}

/// DOC david + DOC erin + NRS amy + PHR paul, all conformant.
fn seeded() -> (ConsentContainer, Fixtures) {
    let f = Fixtures::default();
    let c = ConsentContainer::with_repository(
        "jordan",
        default_required_roles(),
        [
            ic("c1", R::Doc, "david", &["PHI1005"], &[Op::Read]),
            ic("c2", R::Nrs, "amy", &["PHI1005"], &[Op::Read]),
            ic("c3", R::Phr, "paul", &["PHI1006"], &[Op::Read]),
            ic("c4", R::Doc, "erin", &["PHI1006"], &[Op::Read]),
        ],
    );
    (c, f)
}

#[test]
fn create_with_time_window() {
    let (mut c, f) = seeded();
    let new = ic("c5", R::Doc, "david", &["PHI1006"], &[Op::Read]).with_condition(Condition::TimeWindow {
        start_minute: 480,
        end_minute: 1020,
    });
    let exec = c.create(new, &f, true, ctx(1)).unwrap();
    assert_eq!(exec.events.len(), 1);
    assert_eq!(exec.events[0].0, EventKind::ConsentCreated);
    assert!(exec.writes.new > 0);
    assert!(c.active("c5").is_some());
}

#[test]
fn identical_grant_is_duplicate() {
    let (mut c, f) = seeded();
    let before = c.state_digest();
    let err = c
        .create(ic("c9", R::Doc, "david", &["PHI1005"], &[Op::Read]), &f, true, ctx(1))
        .unwrap_err();
    match err {
        ContractError::ConsentConflict(r) => assert!(r.has(ConflictCode::DuplicateGrant)),
        e => panic!("{e}"),
    }
    assert_eq!(c.state_digest(), before);
}

#[test]
fn matrix_violation_fails_validation() {
    let (mut c, f) = seeded();
    let err = c.create(ic("c9", R::Emc, "eve", &["PHI1005"], &[Op::Write]), &f, true, ctx(1));
    assert!(matches!(err, Err(ContractError::ValidationFailed(_))));
}

#[test]
fn alter_archives_old_and_admits_new() {
    let (c, f) = seeded();
    let old = c.active("c1").unwrap().clone().with_condition(Condition::AccessFrequency { max_uses: 5 });
    let mut c = ConsentContainer::with_repository("jordan", default_required_roles(), {
        let mut v: Vec<_> = c.repository().values().cloned().collect();
        v[0] = old;
        v
    });
    let mut new = c.active("c1").unwrap().clone().with_id("c1b");
    new.conditions = [Condition::AccessFrequency { max_uses: 10 }].into();
    let exec = c.alter("c1", new, &f, ctx(2)).unwrap();
    let kinds: Vec<_> = exec.events.iter().map(|e| e.0).collect();
    assert_eq!(kinds, vec![EventKind::ConsentAltered, EventKind::ConsentArchived, EventKind::ConsentCreated]);
    let entry = c.archived("c1").unwrap();
    assert_eq!(entry.reason, ArchiveReason::Altered { replaced_by: "c1b".into() });
    assert!(!entry.consent.status.is_active());
    assert!(c.active("c1b").is_some());

    let again = c.alter("c1", ic("c1c", R::Doc, "zed", &["PHI1005"], &[Op::Read]), &f, ctx(3));
    assert_eq!(again.unwrap_err(), ContractError::UnknownConsent("c1".into()));
}

#[test]
fn alter_that_drops_only_nurse_is_incomplete_team() {
    let (mut c, f) = seeded();
    let before = c.state_digest();
    let new = ic("c2b", R::Nrs, "amy", &["PHI1004"], &[Op::Read]);
    match c.alter("c2", new, &f, ctx(1)) {
        Err(ContractError::ConsentConflict(r)) => assert!(r.has(ConflictCode::IncompleteTeam)),
        other => panic!("{other:?}"),
    }
    assert_eq!(c.state_digest(), before);
}

#[test]
fn terminate_rules() {
    let (mut c, f) = seeded();
    let exec = c.terminate("c3", &f, ctx(1)).unwrap();
    let kinds: Vec<_> = exec.events.iter().map(|e| e.0).collect();
    assert_eq!(kinds, vec![EventKind::ConsentTerminated, EventKind::ConsentArchived]);
    assert_eq!(c.repository().len(), 3);
    assert_eq!(c.archive().len(), 1);
    assert_eq!(c.terminate("c3", &f, ctx(2)).unwrap_err(), ContractError::UnknownConsent("c3".into()));
    assert!(matches!(c.terminate("c2", &f, ctx(3)), Err(ContractError::ConsentConflict(_))));
    assert_eq!(c.terminate("nope", &f, ctx(4)).unwrap_err(), ContractError::UnknownConsent("nope".into()));
}

#[test]
fn empty_required_roles_allow_total_withdrawal() {
    let f = Fixtures::default();
    let mut c = ConsentContainer::with_repository(
        "jordan",
        BTreeSet::new(),
        [ic("only", R::Doc, "d", &["PHI1005"], &[Op::Read])],
    );
    c.terminate("only", &f, ctx(1)).unwrap();
    assert!(c.repository().is_empty());
}

#[test]
fn sweep_calendar_and_frequency() {
    let f = Fixtures::default();
    let june30 = NaiveDate::from_ymd_opt(2024, 6, 30).unwrap();
    let mut c = ConsentContainer::with_repository(
        "jordan",
        default_required_roles(),
        [
            ic("a", R::Doc, "david", &["PHI1005"], &[Op::Read]),
            ic("b", R::Nrs, "amy", &["PHI1005"], &[Op::Read]),
            ic("cal", R::Doc, "erin", &["PHI1006"], &[Op::Read])
                .with_condition(Condition::CalendarExpiry { expiry_date: june30 }),
            ic("freq", R::Doc, "fay", &["PHI1007"], &[Op::Read])
                .with_condition(Condition::AccessFrequency { max_uses: 5 }),
        ],
    );
    let at = |d: u32, m: u32| LogicalTime::from_datetime(NaiveDate::from_ymd_opt(2024, m, d).unwrap().and_hms_opt(9, 0, 0).unwrap());
    assert!(c.plan_sweep(at(30, 6), &f).is_empty());
    for _ in 0..5 {
        c.record_use("freq");
    }
    let (swept, exec) = c.sweep(at(1, 7), &f, ctx(1));
    assert_eq!(swept, vec!["cal".to_string(), "freq".to_string()]);
    assert_eq!(exec.events.len(), 4);
    assert_eq!(exec.writes, SlotWrites { new: 2, updated: 2 });
    let (again, exec) = c.sweep(at(1, 7), &f, ctx(2));
    assert!(again.is_empty() && exec.events.is_empty());
    assert!(matches!(c.archived("cal").unwrap().reason, ArchiveReason::Expired { .. }));
}

#[test]
fn sweep_skips_consent_whose_removal_conflicts() {
    let f = Fixtures::default();
    let mut c = ConsentContainer::with_repository(
        "jordan",
        default_required_roles(),
        [
            ic("a", R::Doc, "david", &["PHI1005"], &[Op::Read]).with_condition(Condition::AccessFrequency { max_uses: 1 }),
            ic("b", R::Nrs, "amy", &["PHI1005"], &[Op::Read]),
        ],
    );
    c.record_use("a");
    assert!(c.plan_sweep(LogicalTime(0), &f).is_empty());
}

#[test]
fn call_round_trip() {
    let calls = [
        ContractCall::ExpireSweep { now: LogicalTime(7) },
        ContractCall::TerminateConsent { consent_id: "c1".into() },
        ContractCall::CreateConsent {
            consent: ic("x", R::Doc, "d", &["PHI1005"], &[Op::Read]),
        },
    ];
    for c in calls {
        let call = c.to_call();
        assert_eq!(call.method, c.method());
        assert_eq!(ContractCall::from_call(&call).unwrap(), c);
    }
    assert!(ContractCall::from_call(&Call::new("Nope", b"{}".to_vec())).is_err());
}

#[test]
fn world_on_ledger_runs_housekeeping_sweep() {
    let mut ledger = Ledger::new(ChainConfig::default(), ConsentWorld::new(Fixtures::default())).unwrap();
    let open = ContractCall::OpenContainer {
        patient_id: "jordan".into(),
        required_roles: BTreeSet::new(),
    };
    let t0 = LogicalTime(0);
    let deploy = Transaction::new(
        "admin",
        container_account("jordan"),
        0,
        TxKind::Deploy {
            code_size: CONTAINER_CODE_SIZE,
        },
        open.to_call(),
        t0,
    );
    ledger.submit(deploy).unwrap();
    let create = ContractCall::CreateConsent {
        consent: ic("c", R::Doc, "d", &["PHI1005"], &[Op::Read])
            .with_condition(Condition::CalendarExpiry {
                expiry_date: NaiveDate::from_ymd_opt(1970, 1, 1).unwrap(),
            }),
    };
    ledger
        .submit(Transaction::new("admin", container_account("jordan"), 1, TxKind::Call, create.to_call(), t0))
        .unwrap();
    ledger.seal_block(ledger.next_due()).unwrap();
    assert!(ledger.state().container("jordan").unwrap().active("c").is_some());

    let next_day = LogicalTime(86_400_000);
    let b = ledger.seal_block(next_day).unwrap();
    assert_eq!(b.transactions.len(), 1);
    assert_eq!(b.transactions[0].sender, crate::ledger::SYSTEM_SENDER);
    let c = ledger.state().container("jordan").unwrap();
    assert!(c.archived("c").is_some());
    let b = ledger.seal_block(ledger.next_due()).unwrap();
    assert!(b.transactions.is_empty());
}
