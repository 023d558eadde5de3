use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::encode::Encoder;
use crate::domain::{sha256, Digest, DomainError, LogicalTime};

pub type Payload = BTreeMap<String, String>;

/// Sender used for transactions the ledger itself injects at seal time.
pub const SYSTEM_SENDER: &str = "system";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Call {
    pub method: String,
    #[serde(with = "hex_bytes")]
    pub args: Vec<u8>,
}

impl Call {
    pub fn new(method: impl Into<String>, args: Vec<u8>) -> Self {
        Self {
            method: method.into(),
            args,
        }
    }

    /// First four bytes of the method-name digest, as in EVM selectors.
    pub fn selector(&self) -> [u8; 4] {
        let d = sha256(self.method.as_bytes());
        let mut s = [0u8; 4];
        s.copy_from_slice(&d.as_bytes()[..4]);
        s
    }

    /// Bytes charged as calldata: selector followed by the argument payload.
    pub fn calldata(&self) -> Vec<u8> {
        let mut out = self.selector().to_vec();
        out.extend_from_slice(&self.args);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TxKind {
    Call,
    Deploy { code_size: u64 },
}

impl TxKind {
    pub fn deploy_code_size(self) -> Option<u64> {
        match self {
            TxKind::Call => None,
            TxKind::Deploy { code_size } => Some(code_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case", deny_unknown_fields)]
pub enum TxStatus {
    #[default]
    Pending,
    Applied,
    Reverted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: Digest,
    pub sender: String,
    pub target: String,
    pub nonce: u64,
    pub kind: TxKind,
    pub call: Call,
    pub submitted_at: LogicalTime,
    pub gas_used: u64,
    pub status: TxStatus,
}

impl Transaction {
    pub fn new(
        sender: impl Into<String>,
        target: impl Into<String>,
        nonce: u64,
        kind: TxKind,
        call: Call,
        submitted_at: LogicalTime,
    ) -> Self {
        let mut tx = Self {
            tx_id: Digest::ZERO,
            sender: sender.into(),
            target: target.into(),
            nonce,
            kind,
            call,
            submitted_at,
            gas_used: 0,
            status: TxStatus::Pending,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.str(&self.sender).str(&self.target).u64(self.nonce);
        match self.kind {
            TxKind::Call => enc.u8(0),
            TxKind::Deploy { code_size } => enc.u8(1).u64(code_size),
        };
        enc.str(&self.call.method)
            .bytes(&self.call.args)
            .u64(self.submitted_at.0);
    }

    /// Digest over every field except the id itself, gas and status.
    pub fn compute_id(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.raw(b"TXID");
        self.encode_body(&mut enc);
        sha256(&enc.finish())
    }

    /// Leaf digest committing to the whole sealed transaction.
    pub fn leaf(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.u8(0).raw(b"TX").raw(self.tx_id.as_bytes());
        self.encode_body(&mut enc);
        enc.u64(self.gas_used);
        match &self.status {
            TxStatus::Pending => enc.u8(0),
            TxStatus::Applied => enc.u8(1),
            TxStatus::Reverted { reason } => enc.u8(2).str(reason),
        };
        sha256(&enc.finish())
    }

    pub fn is_applied(&self) -> bool {
        self.status == TxStatus::Applied
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PpaIntegrityStored,
    ConsentCreated,
    ConsentAltered,
    ConsentTerminated,
    ConsentExpired,
    ConsentArchived,
    AccessGranted,
    AccessDenied,
}

impl EventKind {
    pub const ALL: [EventKind; 8] = [
        EventKind::PpaIntegrityStored,
        EventKind::ConsentCreated,
        EventKind::ConsentAltered,
        EventKind::ConsentTerminated,
        EventKind::ConsentExpired,
        EventKind::ConsentArchived,
        EventKind::AccessGranted,
        EventKind::AccessDenied,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::PpaIntegrityStored => "PpaIntegrityStored",
            EventKind::ConsentCreated => "ConsentCreated",
            EventKind::ConsentAltered => "ConsentAltered",
            EventKind::ConsentTerminated => "ConsentTerminated",
            EventKind::ConsentExpired => "ConsentExpired",
            EventKind::ConsentArchived => "ConsentArchived",
            EventKind::AccessGranted => "AccessGranted",
            EventKind::AccessDenied => "AccessDenied",
        }
    }

    pub fn is_decision(self) -> bool {
        matches!(self, EventKind::AccessGranted | EventKind::AccessDenied)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::Parse {
                what: "event kind",
                input: s.to_owned(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub event_id: u64,
    pub block_height: u64,
    pub tx_id: Digest,
    pub kind: EventKind,
    pub payload: Payload,
}

impl EventRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.get(key).map(String::as_str)
    }

    pub fn leaf(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.u8(0)
            .raw(b"EV")
            .u64(self.event_id)
            .u64(self.block_height)
            .raw(self.tx_id.as_bytes())
            .str(self.kind.as_str())
            .list(&self.payload, |e, (k, v)| {
                e.str(k).str(v);
            });
        sha256(&enc.finish())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub height: u64,
    pub parent_hash: Digest,
    pub timestamp: LogicalTime,
    pub transactions: Vec<Transaction>,
    pub events: Vec<EventRecord>,
    pub block_hash: Digest,
}

impl Block {
    pub fn compute_hash(&self) -> Digest {
        let tx_root = merkle_root(self.transactions.iter().map(Transaction::leaf).collect());
        let ev_root = merkle_root(self.events.iter().map(EventRecord::leaf).collect());
        let mut enc = Encoder::new();
        enc.raw(b"BLK")
            .u64(self.height)
            .raw(self.parent_hash.as_bytes())
            .u64(self.timestamp.0)
            .raw(tx_root.as_bytes())
            .raw(ev_root.as_bytes());
        sha256(&enc.finish())
    }

    pub fn total_gas(&self) -> u64 {
        self.transactions.iter().map(|t| t.gas_used).sum()
    }

    /// The block's line in a chain dump: compact JSON, no trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("block serializes")
    }
}

/// Binary Merkle root; odd nodes are paired with themselves, the empty list
/// has the zero digest as root.
pub fn merkle_root(mut level: Vec<Digest>) -> Digest {
    if level.is_empty() {
        return Digest::ZERO;
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                let mut buf = Vec::with_capacity(65);
                buf.push(1u8);
                buf.extend_from_slice(pair[0].as_bytes());
                buf.extend_from_slice(right.as_bytes());
                sha256(&buf)
            })
            .collect();
    }
    level[0]
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        crate::domain::digest_strict_hex(&s)
            .ok_or_else(|| serde::de::Error::custom("expected lowercase hex"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(nonce: u64) -> Transaction {
        Transaction::new(
            "alice",
            "registry",
            nonce,
            TxKind::Call,
            Call::new("store", vec![1, 2, 3]),
            LogicalTime(5),
        )
    }

    #[test]
    fn tx_id_ignores_gas_and_status() {
        let mut t = tx(0);
        let id = t.tx_id;
        t.gas_used = 99;
        t.status = TxStatus::Applied;
        assert_eq!(t.compute_id(), id);
        assert_ne!(tx(1).tx_id, id);
    }

    #[test]
    fn leaf_covers_gas() {
        let a = tx(0);
        let mut b = a.clone();
        b.gas_used = 1;
        assert_ne!(a.leaf(), b.leaf());
    }

    #[test]
    fn merkle_shapes() {
        let d = |b: u8| sha256(&[b]);
        assert_eq!(merkle_root(vec![]), Digest::ZERO);
        assert_eq!(merkle_root(vec![d(1)]), d(1));
        assert_ne!(merkle_root(vec![d(1), d(2)]), merkle_root(vec![d(2), d(1)]));
        assert_ne!(merkle_root(vec![d(1), d(2), d(3)]), merkle_root(vec![d(1), d(2)]));
    }

    #[test]
    fn selector_prefixes_calldata() {
        let c = Call::new("store", vec![7]);
        let data = c.calldata();
        assert_eq!(data.len(), 5);
        assert_eq!(&data[..4], &c.selector());
    }
}
