//! Embedded append-only ledger.
//!
//! Transactions enter a FIFO pool and are executed against a
//! [`StateMachine`] when a block is sealed. Each sealed block commits to its
//! parent, its transactions (with gas and status) and the events they
//! emitted. Reads never seal and never cost gas.

mod block;
mod config;
mod gas;

use std::collections::{HashMap, HashSet, VecDeque};
use std::ops::RangeInclusive;

use thiserror::Error;

pub use block::{
    merkle_root, Block, Call, EventKind, EventRecord, Payload, Transaction, TxKind, TxStatus,
    SYSTEM_SENDER,
};
pub use config::{profile, ChainConfig, ChainProfile, DEFAULT_TIME_SCALE, PROFILES};
pub use gas::{slots_for, GasSchedule, SlotWrites};

use crate::domain::{Digest, LogicalTime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("transaction {0} already submitted")]
    DuplicateTxId(Digest),
    #[error("no contract at `{0}`")]
    UnknownTarget(String),
    #[error("a contract already exists at `{0}`")]
    TargetExists(String),
    #[error("transaction id does not match its contents")]
    MalformedTx,
    #[error("block not due until {due} (now {now})")]
    NotYetDue { due: LogicalTime, now: LogicalTime },
    #[error("clock moved backwards: {now} < {last}")]
    ClockRegression { now: LogicalTime, last: LogicalTime },
    #[error("forced sealing requires test mode")]
    ForceSealDisabled,
    #[error("invalid chain config: {0}")]
    InvalidConfig(String),
    #[error("chain dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("chain is broken at height {0}")]
    Broken(u64),
    #[error("replay diverged at height {height}: {detail}")]
    ReplayMismatch { height: u64, detail: String },
}

/// Result of executing one call.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Execution {
    pub events: Vec<(EventKind, Payload)>,
    pub writes: SlotWrites,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockEnv {
    pub height: u64,
    pub timestamp: LogicalTime,
}

/// A call the state machine asks the ledger to run at the start of a seal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemCall {
    pub target: String,
    pub call: Call,
}

/// Contract state driven by the ledger.
///
/// `execute` must be all-or-nothing: when it returns `Err` the state is left
/// untouched and the transaction is recorded as reverted.
pub trait StateMachine {
    fn has_account(&self, account: &str) -> bool;

    fn execute(&mut self, tx: &Transaction, env: &BlockEnv) -> Result<Execution, String>;

    /// Maintenance calls to run before the pool at seal time `now`.
    fn housekeeping(&self, _now: LogicalTime, _pending: &[Transaction]) -> Vec<SystemCall> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Valid,
    Broken(u64),
}

impl std::fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainStatus::Valid => f.write_str("Valid"),
            ChainStatus::Broken(h) => write!(f, "Broken({h})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Receipt {
    pub tx_id: Digest,
    pub status: TxStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventFilter {
    pub kind: Option<EventKind>,
    pub patient_id: Option<String>,
    pub consent_id: Option<String>,
    pub heights: Option<RangeInclusive<u64>>,
}

impl EventFilter {
    pub fn kind(kind: EventKind) -> Self {
        Self {
            kind: Some(kind),
            ..Self::default()
        }
    }

    pub fn consent(mut self, consent_id: impl Into<String>) -> Self {
        self.consent_id = Some(consent_id.into());
        self
    }

    pub fn patient(mut self, patient_id: impl Into<String>) -> Self {
        self.patient_id = Some(patient_id.into());
        self
    }

    pub fn heights(mut self, range: RangeInclusive<u64>) -> Self {
        self.heights = Some(range);
        self
    }

    fn matches(&self, e: &EventRecord) -> bool {
        self.kind.is_none_or(|k| k == e.kind)
            && self
                .patient_id
                .as_deref()
                .is_none_or(|p| e.get("patient_id") == Some(p))
            && self
                .consent_id
                .as_deref()
                .is_none_or(|c| e.get("consent_id") == Some(c))
            && self.heights.as_ref().is_none_or(|r| r.contains(&e.block_height))
    }
}

type EventLoc = (usize, usize);

#[derive(Debug, Clone)]
pub struct Ledger<S> {
    config: ChainConfig,
    blocks: Vec<Block>,
    pool: VecDeque<Transaction>,
    pool_ids: HashSet<Digest>,
    sealed_ids: HashSet<Digest>,
    pending_deploys: HashSet<String>,
    system_nonce: u64,
    next_event_id: u64,
    by_consent: HashMap<String, Vec<EventLoc>>,
    by_patient: HashMap<String, Vec<EventLoc>>,
    state: S,
}

fn genesis(config: &ChainConfig) -> Block {
    let mut b = Block {
        height: 0,
        parent_hash: Digest::ZERO,
        timestamp: config.genesis_time,
        transactions: Vec::new(),
        events: Vec::new(),
        block_hash: Digest::ZERO,
    };
    b.block_hash = b.compute_hash();
    b
}

impl<S: StateMachine> Ledger<S> {
    pub fn new(config: ChainConfig, state: S) -> Result<Self, LedgerError> {
        config.validate().map_err(LedgerError::InvalidConfig)?;
        let g = genesis(&config);
        Ok(Self {
            config,
            blocks: vec![g],
            pool: VecDeque::new(),
            pool_ids: HashSet::new(),
            sealed_ids: HashSet::new(),
            pending_deploys: HashSet::new(),
            system_nonce: 0,
            next_event_id: 0,
            by_consent: HashMap::new(),
            by_patient: HashMap::new(),
            state,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn height(&self) -> u64 {
        self.head().height
    }

    pub fn pending(&self) -> impl ExactSizeIterator<Item = &Transaction> {
        self.pool.iter()
    }

    /// Earliest time the next block may be sealed without forcing.
    pub fn next_due(&self) -> LogicalTime {
        self.head().timestamp.plus_millis(self.config.block_interval_ms)
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<Receipt, LedgerError> {
        if tx.compute_id() != tx.tx_id {
            return Err(LedgerError::MalformedTx);
        }
        if self.pool_ids.contains(&tx.tx_id) || self.sealed_ids.contains(&tx.tx_id) {
            return Err(LedgerError::DuplicateTxId(tx.tx_id));
        }
        let exists = self.state.has_account(&tx.target) || self.pending_deploys.contains(&tx.target);
        match tx.kind {
            TxKind::Deploy { .. } if exists => return Err(LedgerError::TargetExists(tx.target)),
            TxKind::Deploy { .. } => {
                self.pending_deploys.insert(tx.target.clone());
            }
            TxKind::Call if !exists => return Err(LedgerError::UnknownTarget(tx.target)),
            TxKind::Call => {}
        }
        let mut tx = tx;
        tx.gas_used = 0;
        tx.status = TxStatus::Pending;
        self.pool_ids.insert(tx.tx_id);
        let receipt = Receipt {
            tx_id: tx.tx_id,
            status: TxStatus::Pending,
        };
        self.pool.push_back(tx);
        Ok(receipt)
    }

    /// Seals the pending pool into a new block at `now`, which must be at
    /// least one block interval after the head.
    pub fn seal_block(&mut self, now: LogicalTime) -> Result<&Block, LedgerError> {
        let due = self.next_due();
        if now < due {
            return Err(LedgerError::NotYetDue { due, now });
        }
        self.seal_at(now)
    }

    /// Seals immediately regardless of the interval. Test mode only.
    pub fn force_seal(&mut self, now: LogicalTime) -> Result<&Block, LedgerError> {
        if !self.config.test_mode {
            return Err(LedgerError::ForceSealDisabled);
        }
        self.seal_at(now)
    }

    fn seal_at(&mut self, now: LogicalTime) -> Result<&Block, LedgerError> {
        let last = self.head().timestamp;
        if now < last {
            return Err(LedgerError::ClockRegression { now, last });
        }
        let env = BlockEnv {
            height: self.height() + 1,
            timestamp: now,
        };
        let pending: Vec<Transaction> = self.pool.drain(..).collect();
        let system: Vec<Transaction> = self
            .state
            .housekeeping(now, &pending)
            .into_iter()
            .map(|sc| {
                let tx = Transaction::new(SYSTEM_SENDER, sc.target, self.system_nonce, TxKind::Call, sc.call, now);
                self.system_nonce += 1;
                tx
            })
            .collect();

        let mut transactions = Vec::with_capacity(system.len() + pending.len());
        let mut events = Vec::new();
        for mut tx in system.into_iter().chain(pending) {
            let payload = tx.call.calldata();
            let deploy = tx.kind.deploy_code_size();
            match self.state.execute(&tx, &env) {
                Ok(exec) => {
                    tx.gas_used = self.config.gas_schedule.estimate(&payload, exec.writes, deploy);
                    tx.status = TxStatus::Applied;
                    for (kind, payload) in exec.events {
                        events.push(EventRecord {
                            event_id: self.next_event_id,
                            block_height: env.height,
                            tx_id: tx.tx_id,
                            kind,
                            payload,
                        });
                        self.next_event_id += 1;
                    }
                }
                Err(reason) => {
                    tx.gas_used = self
                        .config
                        .gas_schedule
                        .estimate(&payload, SlotWrites::default(), deploy);
                    tx.status = TxStatus::Reverted { reason };
                }
            }
            transactions.push(tx);
        }

        let mut block = Block {
            height: env.height,
            parent_hash: self.head().block_hash,
            timestamp: now,
            transactions,
            events,
            block_hash: Digest::ZERO,
        };
        block.block_hash = block.compute_hash();
        self.append(block);
        self.pool_ids.clear();
        self.pending_deploys.clear();
        Ok(self.head())
    }

    fn append(&mut self, block: Block) {
        let bi = self.blocks.len();
        for (ei, e) in block.events.iter().enumerate() {
            if let Some(c) = e.get("consent_id") {
                self.by_consent.entry(c.to_owned()).or_default().push((bi, ei));
            }
            if let Some(p) = e.get("patient_id") {
                self.by_patient.entry(p.to_owned()).or_default().push((bi, ei));
            }
        }
        for tx in &block.transactions {
            self.sealed_ids.insert(tx.tx_id);
        }
        self.blocks.push(block);
    }

    /// Sealed events matching `filter`, in chain order. Gas-free.
    pub fn events(&self, filter: &EventFilter) -> Vec<&EventRecord> {
        let index = match (&filter.consent_id, &filter.patient_id) {
            (Some(c), _) => Some(self.by_consent.get(c)),
            (None, Some(p)) => Some(self.by_patient.get(p)),
            (None, None) => None,
        };
        match index {
            Some(locs) => locs
                .into_iter()
                .flatten()
                .map(|&(b, e)| &self.blocks[b].events[e])
                .filter(|e| filter.matches(e))
                .collect(),
            None => self
                .blocks
                .iter()
                .flat_map(|b| &b.events)
                .filter(|e| filter.matches(e))
                .collect(),
        }
    }

    pub fn all_events(&self) -> Vec<EventRecord> {
        self.blocks.iter().flat_map(|b| b.events.iter().cloned()).collect()
    }

    pub fn count_events(&self, filter: &EventFilter) -> usize {
        self.events(filter).len()
    }

    pub fn find_transaction(&self, tx_id: &Digest) -> Option<(&Block, &Transaction)> {
        self.blocks
            .iter()
            .rev()
            .find_map(|b| b.transactions.iter().find(|t| t.tx_id == *tx_id).map(|t| (b, t)))
    }

    pub fn verify_chain(&self) -> ChainStatus {
        verify_blocks(&self.blocks)
    }

    /// One compact JSON line per block, newline-terminated.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&b.to_line());
            out.push('\n');
        }
        out
    }

    /// Rebuilds a ledger from a dump by re-executing every recorded
    /// transaction against `state`. Fails if the dump does not verify or if
    /// re-execution produces different events, statuses or gas.
    pub fn restore(dump: &str, config: ChainConfig, state: S) -> Result<Self, LedgerError> {
        let blocks = parse_dump(dump)?;
        if let ChainStatus::Broken(h) = verify_blocks(&blocks) {
            return Err(LedgerError::Broken(h));
        }
        let mut ledger = Ledger::new(config, state)?;
        let mut iter = blocks.into_iter();
        let g = iter.next().ok_or(LedgerError::Parse {
            line: 1,
            msg: "empty dump".into(),
        })?;
        ledger.blocks = vec![g];
        for block in iter {
            let env = BlockEnv {
                height: block.height,
                timestamp: block.timestamp,
            };
            let mut ev_iter = block.events.iter();
            for tx in &block.transactions {
                if tx.sender == SYSTEM_SENDER {
                    ledger.system_nonce = ledger.system_nonce.max(tx.nonce + 1);
                }
                let mismatch = |detail: String| LedgerError::ReplayMismatch {
                    height: block.height,
                    detail,
                };
                let payload = tx.call.calldata();
                let deploy = tx.kind.deploy_code_size();
                let (status, gas, produced) = match ledger.state.execute(tx, &env) {
                    Ok(exec) => (
                        TxStatus::Applied,
                        ledger.config.gas_schedule.estimate(&payload, exec.writes, deploy),
                        exec.events,
                    ),
                    Err(reason) => (
                        TxStatus::Reverted { reason },
                        ledger
                            .config
                            .gas_schedule
                            .estimate(&payload, SlotWrites::default(), deploy),
                        Vec::new(),
                    ),
                };
                if status != tx.status || gas != tx.gas_used {
                    return Err(mismatch(format!("transaction {} re-executed differently", tx.tx_id)));
                }
                for (kind, payload) in produced {
                    match ev_iter.next() {
                        Some(e) if e.kind == kind && e.payload == payload && e.tx_id == tx.tx_id => {}
                        _ => return Err(mismatch(format!("event mismatch for {}", tx.tx_id))),
                    }
                }
            }
            if ev_iter.next().is_some() {
                return Err(LedgerError::ReplayMismatch {
                    height: block.height,
                    detail: "unexplained events".into(),
                });
            }
            ledger.next_event_id = block.events.last().map_or(ledger.next_event_id, |e| e.event_id + 1);
            ledger.append(block);
        }
        Ok(ledger)
    }
}

/// Recomputes every block hash and parent link from genesis.
pub fn verify_blocks(blocks: &[Block]) -> ChainStatus {
    let mut parent = Digest::ZERO;
    let mut last_time = None;
    for (i, b) in blocks.iter().enumerate() {
        let h = i as u64;
        let linked = b.height == h && b.parent_hash == parent;
        let monotone = last_time.is_none_or(|t| b.timestamp >= t);
        let txs_ok = b.transactions.iter().all(|t| t.compute_id() == t.tx_id);
        let events_ok = b.events.iter().all(|e| e.block_height == h);
        if !(linked && monotone && txs_ok && events_ok && b.compute_hash() == b.block_hash) {
            return ChainStatus::Broken(h);
        }
        parent = b.block_hash;
        last_time = Some(b.timestamp);
    }
    ChainStatus::Valid
}

/// Parses a dump strictly: every line must decode and re-encode to exactly
/// the same bytes.
pub fn parse_dump(dump: &str) -> Result<Vec<Block>, LedgerError> {
    let body = dump.strip_suffix('\n').unwrap_or(dump);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let err = |msg: String| LedgerError::Parse { line: i + 1, msg };
            let block: Block = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            if block.to_line() != line {
                return Err(err("line is not in canonical form".into()));
            }
            Ok(block)
        })
        .collect()
}

/// Verifies a raw dump. A line that fails to parse counts as a break at its
/// own height.
pub fn verify_dump(dump: &str) -> ChainStatus {
    let body = match dump.strip_suffix('\n') {
        Some(b) => b,
        None => return ChainStatus::Broken(dump.matches('\n').count() as u64),
    };
    let mut blocks = Vec::new();
    for (i, line) in body.split('\n').enumerate() {
        match parse_dump(&format!("{line}\n")) {
            // Lines must be canonical, so no edit can hide behind an
            // equivalent spelling such as upper-case hex.
            Ok(mut b) if b.len() == 1 && b[0].to_line() == line => blocks.push(b.remove(0)),
            _ => return ChainStatus::Broken(i as u64),
        }
    }
    if blocks.is_empty() {
        return ChainStatus::Broken(0);
    }
    verify_blocks(&blocks)
}

#[cfg(test)]
mod tests;
