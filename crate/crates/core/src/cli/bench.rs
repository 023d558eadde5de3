//! Desk-scale cost and latency harness.
//!
//! For every profile, consent count and operation a fresh engine builds the
//! consents, then runs the operation once per consent (a single sweep for
//! `expire`). Gas is summed from sealed transactions. Write latency is the
//! submit-to-seal interval summed over the batch, on the logical clock unless
//! wall-clock mode is requested. Read latency is measured wall time for a
//! full repository and event-log read.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use chrono::NaiveDate;

use crate::domain::{Condition, Fixtures, InformedConsent, LogicalTime, OperationKind, RoleCode, UserRef};
use crate::engine::{ConsentEngine, EngineConfig, EngineError, SealPolicy};
use crate::ledger::{ChainConfig, EventFilter};

pub const HEADER: &str = "consent_count,operation,chain_profile,total_gas,write_latency_ms,read_latency_ms,fee_units";

const PATIENT: &str = "bench-patient";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BenchOp {
    Create,
    Alter,
    Terminate,
    Expire,
}

impl BenchOp {
    pub const ALL: [BenchOp; 4] = [BenchOp::Create, BenchOp::Alter, BenchOp::Terminate, BenchOp::Expire];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchOp::Create => "create",
            BenchOp::Alter => "alter",
            BenchOp::Terminate => "terminate",
            BenchOp::Expire => "expire",
        }
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchOp::ALL
            .into_iter()
            .find(|o| o.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown bench operation `{s}`"))
    }
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    /// Profile label paired with its chain configuration.
    pub profiles: Vec<(String, ChainConfig)>,
    pub counts: Vec<usize>,
    pub operations: Vec<BenchOp>,
    pub fixtures: Fixtures,
    pub wall_clock: bool,
}

impl BenchPlan {
    pub fn default_counts() -> Vec<usize> {
        (1..=12).map(|i| i * 4).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub consent_count: usize,
    pub operation: BenchOp,
    pub chain_profile: String,
    pub total_gas: u64,
    pub write_latency_ms: f64,
    pub read_latency_ms: f64,
    pub fee_units: f64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3}",
            self.consent_count,
            self.operation,
            self.chain_profile,
            self.total_gas,
            self.write_latency_ms,
            self.read_latency_ms,
            self.fee_units
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }
}

fn consent(i: usize, expiring: bool) -> InformedConsent {
    let ic = InformedConsent::new(
        format!("b{i:04}"),
        PATIENT,
        [UserRef::new(RoleCode::Doc, format!("u{i:04}"))],
        ["PHI1005"],
        [OperationKind::Read],
    );
    if expiring {
        ic.with_condition(Condition::CalendarExpiry {
            expiry_date: NaiveDate::from_ymd_opt(2024, 6, 30).expect("valid date"),
        })
    } else {
        ic
    }
}

fn date(m: u32, d: u32) -> LogicalTime {
    LogicalTime::from_datetime(
        NaiveDate::from_ymd_opt(2024, m, d)
            .and_then(|d| d.and_hms_opt(9, 0, 0))
            .expect("valid date"),
    )
}

struct Runner {
    engine: ConsentEngine,
    wall_clock: bool,
    interval: Duration,
    write_ms: f64,
}

impl Runner {
    /// Runs one write operation and adds its submit-to-seal time.
    fn timed<T>(&mut self, op: impl FnOnce(&mut ConsentEngine) -> Result<T, EngineError>) -> Result<T, EngineError> {
        let submitted = self.engine.clock();
        let started = Instant::now();
        let out = op(&mut self.engine)?;
        if self.wall_clock {
            let elapsed = started.elapsed();
            if elapsed < self.interval {
                std::thread::sleep(self.interval - elapsed);
            }
            self.write_ms += started.elapsed().as_secs_f64() * 1e3;
        } else {
            let sealed = self.engine.ledger().head().timestamp;
            self.write_ms += sealed.millis().saturating_sub(submitted.millis()) as f64;
        }
        Ok(out)
    }
}

fn run_one(config: &ChainConfig, fixtures: &Fixtures, count: usize, op: BenchOp, wall_clock: bool) -> Result<(u64, f64, f64), EngineError> {
    let mut engine = ConsentEngine::new(EngineConfig {
        chain: config.clone(),
        fixtures: fixtures.clone(),
        seal_policy: SealPolicy::Immediate,
        required_roles: BTreeSet::new(),
        ..EngineConfig::default()
    })?;
    engine.set_time(date(6, 1));
    engine.open_container(PATIENT, BTreeSet::new())?;
    let expiring = op == BenchOp::Expire;
    if op != BenchOp::Create {
        for i in 0..count {
            engine.create_consent(consent(i, expiring))?;
        }
    }
    let start_height = engine.ledger().height();
    let mut r = Runner {
        engine,
        wall_clock,
        interval: Duration::from_millis(config.block_interval_ms),
        write_ms: 0.0,
    };
    match op {
        BenchOp::Create => {
            for i in 0..count {
                r.timed(|e| e.create_consent(consent(i, false)))?;
            }
        }
        BenchOp::Alter => {
            for i in 0..count {
                let mut new = consent(i, false).with_id(format!("a{i:04}"));
                new.objects.insert("PHI1004".into());
                r.timed(|e| e.alter_consent(&format!("b{i:04}"), new))?;
            }
        }
        BenchOp::Terminate => {
            for i in 0..count {
                r.timed(|e| e.terminate_consent(&format!("b{i:04}")))?;
            }
        }
        BenchOp::Expire => {
            r.engine.set_time(date(7, 1));
            r.timed(|e| e.expire_sweep(e.clock()))?;
        }
    }
    let engine = &r.engine;
    let total_gas: u64 = engine
        .ledger()
        .blocks()
        .iter()
        .filter(|b| b.height > start_height)
        .map(|b| b.total_gas())
        .sum();

    let started = Instant::now();
    let container = engine.container(PATIENT).expect("opened above");
    let mut touched = container.repository().len() + container.archive().len();
    touched += engine.ledger().events(&EventFilter::default().patient(PATIENT)).len();
    std::hint::black_box(touched);
    let read_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((total_gas, r.write_ms, read_ms))
}

pub fn run(plan: &BenchPlan) -> Result<BenchReport, EngineError> {
    let mut report = BenchReport::default();
    for (name, config) in &plan.profiles {
        for &op in &plan.operations {
            for &count in &plan.counts {
                let (total_gas, write_latency_ms, read_latency_ms) =
                    run_one(config, &plan.fixtures, count, op, plan.wall_clock)?;
                report.rows.push(BenchRow {
                    consent_count: count,
                    operation: op,
                    chain_profile: name.clone(),
                    total_gas,
                    write_latency_ms,
                    read_latency_ms,
                    fee_units: total_gas as f64 * config.gas_price_multiplier,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(ops: Vec<BenchOp>, counts: Vec<usize>) -> BenchPlan {
        BenchPlan {
            profiles: vec![("ethereum-like".into(), ChainConfig::default())],
            counts,
            operations: ops,
            fixtures: Fixtures::default(),
            wall_clock: false,
        }
    }

    #[test]
    fn create_rows_have_rising_gas() {
        let r = run(&plan(vec![BenchOp::Create], BenchPlan::default_counts())).unwrap();
        assert_eq!(r.rows.len(), 12);
        assert!(r.rows.windows(2).all(|w| w[0].total_gas < w[1].total_gas));
        for row in &r.rows {
            assert!(row.write_latency_ms >= 100.0);
            assert!(row.read_latency_ms < 10.0);
        }
    }

    #[test]
    fn every_operation_costs_gas() {
        let r = run(&plan(BenchOp::ALL.to_vec(), vec![4])).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|row| row.total_gas > 0));
        let csv = r.to_csv();
        assert!(csv.starts_with(HEADER));
        assert_eq!(csv.lines().count(), 5);
    }
}
