//! Canonical binary encoding used for every digest in the system.
//!
//! Layout rules:
//!
//! ```text
//! u8        1 byte
//! u32/u64   big-endian
//! bytes     u32 length ‖ raw bytes
//! str       bytes of its UTF-8
//! list<T>   u32 count ‖ T…   (sets are iterated in their sorted order)
//! ```
//!
//! Each top-level value starts with a short magic tag (`IC\x01`, `CL\x01`,
//! `CS\x01`, `PPA\x01`) so encodings of different types never collide.

use super::{
    ArchiveReasonKind, Condition, ConsentStatus, InformedConsent, OperationKind, Ppa,
};

pub const CONSENT_MAGIC: &[u8] = b"IC\x01";
pub const COMPONENT_LIST_MAGIC: &[u8] = b"CL\x01";
pub const CONSENT_LIST_MAGIC: &[u8] = b"CS\x01";
pub const PPA_MAGIC: &[u8] = b"PPA\x01";

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(len_u32(v.len()));
        self.raw(v)
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn list<I, F>(&mut self, items: I, mut each: F) -> &mut Self
    where
        I: IntoIterator,
        I::IntoIter: ExactSizeIterator,
        F: FnMut(&mut Self, I::Item),
    {
        let it = items.into_iter();
        self.u32(len_u32(it.len()));
        for item in it {
            each(self, item);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

fn len_u32(n: usize) -> u32 {
    u32::try_from(n).expect("encoded length fits in u32")
}

pub trait CanonicalEncode {
    fn encode_into(&self, enc: &mut Encoder);

    fn canonical_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }
}

fn op_code(op: OperationKind) -> u8 {
    match op {
        OperationKind::Read => 1,
        OperationKind::Write => 2,
        OperationKind::Update => 3,
    }
}

impl CanonicalEncode for Condition {
    fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Condition::TimeWindow {
                start_minute,
                end_minute,
            } => {
                enc.u8(1).u32(*start_minute).u32(*end_minute);
            }
            Condition::CalendarExpiry { expiry_date } => {
                enc.u8(2).str(&expiry_date.format("%Y-%m-%d").to_string());
            }
            Condition::DayOfWeek { allowed_days } => {
                enc.u8(3).list(allowed_days, |e, d| {
                    e.u8(d.number());
                });
            }
            Condition::GeoFence { allowed_zones } => {
                enc.u8(4).list(allowed_zones, |e, z| {
                    e.str(z);
                });
            }
            Condition::IpAllowlist { allowed_prefixes } => {
                enc.u8(5).list(allowed_prefixes, |e, p| {
                    e.str(&p.to_string());
                });
            }
            Condition::AccessFrequency { max_uses } => {
                enc.u8(6).u32(*max_uses);
            }
        }
    }
}

impl CanonicalEncode for InformedConsent {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.raw(CONSENT_MAGIC)
            .str(&self.consent_id)
            .str(&self.patient_id)
            .list(&self.users, |e, u| {
                e.str(u.role.as_str()).str(&u.user_id);
            })
            .list(&self.objects, |e, o| {
                e.str(o);
            })
            .list(&self.operations, |e, op| {
                e.u8(op_code(*op));
            })
            .list(&self.conditions, |e, c| c.encode_into(e));
        match self.status {
            ConsentStatus::Active => {
                enc.u8(0);
            }
            ConsentStatus::Archived { reason, at } => {
                let code = match reason {
                    ArchiveReasonKind::Altered => 1,
                    ArchiveReasonKind::Terminated => 2,
                    ArchiveReasonKind::Expired => 3,
                };
                enc.u8(1).u8(code).u64(at.0);
            }
        }
    }
}

pub fn component_list(items: &[String]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.raw(COMPONENT_LIST_MAGIC).list(items, |e, s| {
        e.str(s);
    });
    enc.finish()
}

pub fn consent_list(items: &[InformedConsent]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.raw(CONSENT_LIST_MAGIC).list(items, |e, c| {
        e.bytes(&c.canonical_bytes());
    });
    enc.finish()
}

impl CanonicalEncode for Ppa {
    fn encode_into(&self, enc: &mut Encoder) {
        enc.raw(PPA_MAGIC)
            .str(&self.ppa_id)
            .str(&self.patient_id)
            .bytes(&component_list(&self.pc))
            .bytes(&component_list(&self.prc))
            .bytes(&component_list(&self.roc))
            .bytes(&consent_list(&self.icc))
            .str(&self.validity_end.format("%Y-%m-%d").to_string());
    }
}
