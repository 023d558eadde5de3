use super::*;

/// Minimal state: one account holding a counter per call argument.
#[derive(Debug, Default, Clone)]
struct Counter {
    accounts: HashSet<String>,
    hits: std::collections::BTreeMap<Vec<u8>, u64>,
}

impl StateMachine for Counter {
    fn has_account(&self, account: &str) -> bool {
        account == "counter" || self.accounts.contains(account)
    }

    fn execute(&mut self, tx: &Transaction, env: &BlockEnv) -> Result<Execution, String> {
        if let TxKind::Deploy { .. } = tx.kind {
            self.accounts.insert(tx.target.clone());
            return Ok(Execution::default());
        }
        if tx.call.method == "fail" {
            return Err("requested failure".into());
        }
        let slot = self.hits.entry(tx.call.args.clone()).or_insert(0);
        let writes = if *slot == 0 {
            SlotWrites::new_slots(1)
        } else {
            SlotWrites { new: 0, updated: 1 }
        };
        *slot += 1;
        let mut payload = Payload::new();
        payload.insert("consent_id".into(), hex::encode(&tx.call.args));
        payload.insert("height".into(), env.height.to_string());
        Ok(Execution {
            events: vec![(EventKind::AccessGranted, payload)],
            writes,
        })
    }
}

fn ledger() -> Ledger<Counter> {
    Ledger::new(ChainConfig::default(), Counter::default()).unwrap()
}

fn call(nonce: u64, method: &str, args: &[u8]) -> Transaction {
    Transaction::new("alice", "counter", nonce, TxKind::Call, Call::new(method, args.to_vec()), LogicalTime(0))
}

fn due(l: &Ledger<Counter>) -> LogicalTime {
    l.next_due()
}

#[test]
fn genesis_has_zero_parent() {
    let l = ledger();
    assert_eq!(l.height(), 0);
    assert_eq!(l.head().parent_hash, Digest::ZERO);
    assert_eq!(l.verify_chain(), ChainStatus::Valid);
}

#[test]
fn duplicate_and_unknown_target_rejected() {
    let mut l = ledger();
    let tx = call(0, "hit", &[1]);
    assert_eq!(l.submit(tx.clone()).unwrap().status, TxStatus::Pending);
    assert_eq!(l.submit(tx.clone()), Err(LedgerError::DuplicateTxId(tx.tx_id)));
    l.seal_block(due(&l)).unwrap();
    assert_eq!(l.submit(tx.clone()), Err(LedgerError::DuplicateTxId(tx.tx_id)));
    let stray = Transaction::new("a", "nowhere", 0, TxKind::Call, Call::new("x", vec![]), LogicalTime(0));
    assert_eq!(l.submit(stray), Err(LedgerError::UnknownTarget("nowhere".into())));
}

#[test]
fn tampered_id_is_malformed() {
    let mut l = ledger();
    let mut tx = call(0, "hit", &[1]);
    tx.nonce = 9;
    assert_eq!(l.submit(tx), Err(LedgerError::MalformedTx));
}

#[test]
fn fifo_order_and_single_inclusion() {
    let mut l = ledger();
    let ids: Vec<_> = (0..3).map(|n| l.submit(call(n, "hit", &[n as u8 + 1])).unwrap().tx_id).collect();
    let block = l.seal_block(due(&l)).unwrap().clone();
    let got: Vec<_> = block.transactions.iter().map(|t| t.tx_id).collect();
    assert_eq!(got, ids);
    assert_eq!(l.pending().len(), 0);
    let empty = l.seal_block(due(&l)).unwrap();
    assert!(empty.transactions.is_empty());
    assert_eq!(l.height(), 2);
}

#[test]
fn early_seal_and_clock_rules() {
    let mut cfg = ChainConfig::default();
    cfg.test_mode = false;
    let mut l = Ledger::new(cfg, Counter::default()).unwrap();
    let early = l.head().timestamp.plus_millis(1);
    assert!(matches!(l.seal_block(early), Err(LedgerError::NotYetDue { .. })));
    assert_eq!(l.force_seal(early).unwrap_err(), LedgerError::ForceSealDisabled);

    let mut l = ledger();
    l.force_seal(LogicalTime(5)).unwrap();
    assert!(matches!(l.force_seal(LogicalTime(4)), Err(LedgerError::ClockRegression { .. })));
}

#[test]
fn equal_payloads_equal_gas_and_reverts_pay_base() {
    let mut l = ledger();
    for n in 0..4 {
        l.submit(call(n, "hit", &[9, n as u8 + 1])).unwrap();
    }
    l.submit(call(99, "fail", &[7])).unwrap();
    let b = l.seal_block(due(&l)).unwrap();
    let gas: Vec<_> = b.transactions.iter().map(|t| t.gas_used).collect();
    let one_slot = 21000 + 16 * 6 + 20000;
    assert_eq!(&gas[..4], &[one_slot; 4]);
    assert_eq!(gas[4], 21000 + 16 * 5);
    assert!(matches!(b.transactions[4].status, TxStatus::Reverted { .. }));
    assert_eq!(b.events.len(), 4);
}

#[test]
fn event_filters() {
    let mut l = ledger();
    assert!(l.events(&EventFilter::default()).is_empty());
    l.submit(call(0, "hit", &[1])).unwrap();
    l.seal_block(due(&l)).unwrap();
    l.submit(call(1, "hit", &[2])).unwrap();
    l.submit(call(2, "hit", &[1])).unwrap();
    l.seal_block(due(&l)).unwrap();
    assert_eq!(l.events(&EventFilter::kind(EventKind::AccessGranted)).len(), 3);
    assert_eq!(l.events(&EventFilter::default().heights(2..=2)).len(), 2);
    assert_eq!(l.events(&EventFilter::default().consent("01")).len(), 2);
    assert_eq!(l.count_events(&EventFilter::kind(EventKind::AccessDenied)), 0);
    let ids: Vec<_> = l.all_events().iter().map(|e| e.event_id).collect();
    assert_eq!(ids, vec![0, 1, 2]);
}

#[test]
fn deploy_then_call() {
    let mut l = ledger();
    let deploy = Transaction::new("a", "box", 0, TxKind::Deploy { code_size: 2000 }, Call::new("init", vec![]), LogicalTime(0));
    l.submit(deploy.clone()).unwrap();
    let again = Transaction::new("a", "box", 1, TxKind::Deploy { code_size: 2000 }, Call::new("init", vec![]), LogicalTime(0));
    assert_eq!(l.submit(again), Err(LedgerError::TargetExists("box".into())));
    // Calls may queue behind the deploy in the same block.
    let c = Transaction::new("a", "box", 2, TxKind::Call, Call::new("hit", vec![3]), LogicalTime(0));
    l.submit(c).unwrap();
    let b = l.seal_block(due(&l)).unwrap();
    assert!(b.transactions.iter().all(Transaction::is_applied));
}

#[test]
fn dump_restore_round_trip() {
    let mut l = ledger();
    for n in 0..5 {
        l.submit(call(n, "hit", &[n as u8 % 2 + 1])).unwrap();
        l.seal_block(due(&l)).unwrap();
    }
    let dump = l.dump();
    assert_eq!(verify_dump(&dump), ChainStatus::Valid);
    let r = Ledger::restore(&dump, ChainConfig::default(), Counter::default()).unwrap();
    assert_eq!(r.dump(), dump);
    assert_eq!(r.state().hits, l.state().hits);
}

#[test]
fn restore_rejects_divergent_state() {
    let mut l = ledger();
    l.submit(call(0, "hit", &[1])).unwrap();
    l.seal_block(due(&l)).unwrap();
    let mut pre = Counter::default();
    pre.hits.insert(vec![1], 3);
    let err = Ledger::restore(&l.dump(), ChainConfig::default(), pre).unwrap_err();
    assert!(matches!(err, LedgerError::ReplayMismatch { height: 1, .. }));
}

#[test]
fn relinked_block_breaks_at_child() {
    let mut l = ledger();
    for n in 0..6 {
        l.submit(call(n, "hit", &[1])).unwrap();
        l.seal_block(due(&l)).unwrap();
    }
    let mut blocks = l.blocks().to_vec();
    blocks[4].events[0].payload.insert("height".into(), "x".into());
    assert_eq!(verify_blocks(&blocks), ChainStatus::Broken(4));
    blocks[4].block_hash = blocks[4].compute_hash();
    assert_eq!(verify_blocks(&blocks), ChainStatus::Broken(5));
}

#[test]
fn verify_dump_flags_garbage_line() {
    let mut l = ledger();
    l.seal_block(due(&l)).unwrap();
    l.seal_block(due(&l)).unwrap();
    let dump = l.dump();
    let mut lines: Vec<&str> = dump.lines().collect();
    lines[1] = "{not json";
    let bad = format!("{}\n", lines.join("\n"));
    assert_eq!(verify_dump(&bad), ChainStatus::Broken(1));
}
