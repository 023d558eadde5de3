//! The six condition kinds a consent may carry and their evaluation against a
//! request context.

use std::collections::BTreeSet;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::DomainError;

pub const MINUTES_PER_DAY: u32 = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DayCode {
    Mon,
    Tue,
    Wed,
    Thu,
    Fri,
    Sat,
    Sun,
}

impl DayCode {
    pub const WEEKDAYS: [DayCode; 5] = [DayCode::Mon, DayCode::Tue, DayCode::Wed, DayCode::Thu, DayCode::Fri];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

impl From<Weekday> for DayCode {
    fn from(w: Weekday) -> Self {
        match w {
            Weekday::Mon => DayCode::Mon,
            Weekday::Tue => DayCode::Tue,
            Weekday::Wed => DayCode::Wed,
            Weekday::Thu => DayCode::Thu,
            Weekday::Fri => DayCode::Fri,
            Weekday::Sat => DayCode::Sat,
            Weekday::Sun => DayCode::Sun,
        }
    }
}

/// An address prefix in CIDR notation (`10.1.0.0/16`, `fd00::/8`). A bare
/// address is a full-length prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IpPrefix {
    network: IpAddr,
    len: u8,
}

impl IpPrefix {
    pub fn new(network: IpAddr, len: u8) -> Result<Self, DomainError> {
        let max = match network {
            IpAddr::V4(_) => 32,
            IpAddr::V6(_) => 128,
        };
        if len > max {
            return Err(DomainError::Parse {
                what: "address prefix",
                input: format!("{network}/{len}"),
            });
        }
        Ok(Self { network, len })
    }

    pub fn contains(&self, addr: &IpAddr) -> bool {
        match (self.network, addr) {
            (IpAddr::V4(net), IpAddr::V4(a)) => {
                prefix_eq(&net.octets(), &a.octets(), self.len)
            }
            (IpAddr::V6(net), IpAddr::V6(a)) => {
                prefix_eq(&net.octets(), &a.octets(), self.len)
            }
            _ => false,
        }
    }
}

fn prefix_eq(net: &[u8], addr: &[u8], len: u8) -> bool {
    let full = (len / 8) as usize;
    if net[..full] != addr[..full] {
        return false;
    }
    let rem = len % 8;
    if rem == 0 {
        return true;
    }
    let mask = 0xffu8 << (8 - rem);
    (net[full] & mask) == (addr[full] & mask)
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.len)
    }
}

impl FromStr for IpPrefix {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DomainError::Parse {
            what: "address prefix",
            input: s.to_owned(),
        };
        match s.split_once('/') {
            Some((addr, len)) => {
                let addr: IpAddr = addr.parse().map_err(|_| err())?;
                let len: u8 = len.parse().map_err(|_| err())?;
                IpPrefix::new(addr, len)
            }
            None => {
                let addr: IpAddr = s.parse().map_err(|_| err())?;
                let len = if addr.is_ipv4() { 32 } else { 128 };
                IpPrefix::new(addr, len)
            }
        }
    }
}

impl Serialize for IpPrefix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IpPrefix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A constraint on when, where and how often a consent may be exercised.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Condition {
    /// Half-open minute-of-day window `[start, end)`.
    TimeWindow { start_minute: u32, end_minute: u32 },
    /// Access allowed up to and including `expiry_date`.
    CalendarExpiry { expiry_date: NaiveDate },
    DayOfWeek { allowed_days: BTreeSet<DayCode> },
    GeoFence { allowed_zones: BTreeSet<String> },
    IpAllowlist { allowed_prefixes: BTreeSet<IpPrefix> },
    /// At most `max_uses` granted accesses under the consent.
    AccessFrequency { max_uses: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ConditionKind {
    TimeWindow,
    CalendarExpiry,
    DayOfWeek,
    GeoFence,
    IpAllowlist,
    AccessFrequency,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 6] = [
        ConditionKind::TimeWindow,
        ConditionKind::CalendarExpiry,
        ConditionKind::DayOfWeek,
        ConditionKind::GeoFence,
        ConditionKind::IpAllowlist,
        ConditionKind::AccessFrequency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::TimeWindow => "TimeWindow",
            ConditionKind::CalendarExpiry => "CalendarExpiry",
            ConditionKind::DayOfWeek => "DayOfWeek",
            ConditionKind::GeoFence => "GeoFence",
            ConditionKind::IpAllowlist => "IpAllowlist",
            ConditionKind::AccessFrequency => "AccessFrequency",
        }
    }

    /// Terminal kinds can never become satisfied again once violated, so a
    /// sweep may expire the consent. The others only deny the request.
    pub fn is_terminal(self) -> bool {
        matches!(self, ConditionKind::CalendarExpiry | ConditionKind::AccessFrequency)
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConditionKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| DomainError::Parse {
                what: "condition kind",
                input: s.to_owned(),
            })
    }
}

/// Attributes of a request that condition operands are checked against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub timestamp: NaiveDateTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_address: Option<IpAddr>,
    /// Uses already executed under the consent being evaluated. Supplied by
    /// the caller from ledger history.
    #[serde(default)]
    pub prior_use_count: u64,
}

impl RequestContext {
    pub fn at(timestamp: NaiveDateTime) -> Self {
        Self {
            timestamp,
            zone: None,
            source_address: None,
            prior_use_count: 0,
        }
    }

    pub fn with_zone(mut self, zone: impl Into<String>) -> Self {
        self.zone = Some(zone.into());
        self
    }

    pub fn with_address(mut self, addr: IpAddr) -> Self {
        self.source_address = Some(addr);
        self
    }

    pub fn with_prior_uses(mut self, n: u64) -> Self {
        self.prior_use_count = n;
        self
    }

    pub fn weekday(&self) -> DayCode {
        self.timestamp.weekday().into()
    }

    pub fn minute_of_day(&self) -> u32 {
        self.timestamp.hour() * 60 + self.timestamp.minute()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionOutcome {
    Satisfied,
    Violated(String),
    Exhausted,
}

impl ConditionOutcome {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, ConditionOutcome::Satisfied)
    }
}

impl Condition {
    pub fn kind(&self) -> ConditionKind {
        match self {
            Condition::TimeWindow { .. } => ConditionKind::TimeWindow,
            Condition::CalendarExpiry { .. } => ConditionKind::CalendarExpiry,
            Condition::DayOfWeek { .. } => ConditionKind::DayOfWeek,
            Condition::GeoFence { .. } => ConditionKind::GeoFence,
            Condition::IpAllowlist { .. } => ConditionKind::IpAllowlist,
            Condition::AccessFrequency { .. } => ConditionKind::AccessFrequency,
        }
    }

    /// Checks the per-variant value invariants.
    pub fn check(&self) -> Result<(), String> {
        match self {
            Condition::TimeWindow {
                start_minute,
                end_minute,
            } => {
                if start_minute < end_minute && *end_minute <= MINUTES_PER_DAY {
                    Ok(())
                } else {
                    Err(format!(
                        "time window needs 0 <= start < end <= {MINUTES_PER_DAY}, got [{start_minute}, {end_minute})"
                    ))
                }
            }
            Condition::CalendarExpiry { .. } => Ok(()),
            Condition::DayOfWeek { allowed_days } if allowed_days.is_empty() => {
                Err("day-of-week condition with no allowed days".into())
            }
            Condition::GeoFence { allowed_zones } if allowed_zones.is_empty() => {
                Err("geo-fence with no allowed zones".into())
            }
            Condition::IpAllowlist { allowed_prefixes } if allowed_prefixes.is_empty() => {
                Err("IP allowlist with no prefixes".into())
            }
            Condition::AccessFrequency { max_uses: 0 } => Err("access frequency limit of zero".into()),
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, ctx: &RequestContext) -> Result<ConditionOutcome, DomainError> {
        use ConditionOutcome::*;
        let outcome = match self {
            Condition::TimeWindow {
                start_minute,
                end_minute,
            } => {
                let minute = ctx.minute_of_day();
                if *start_minute <= minute && minute < *end_minute {
                    Satisfied
                } else {
                    Violated(format!("minute {minute} outside [{start_minute}, {end_minute})"))
                }
            }
            Condition::CalendarExpiry { expiry_date } => {
                let date = ctx.timestamp.date();
                if date <= *expiry_date {
                    Satisfied
                } else {
                    Violated(format!("{date} is after expiry {expiry_date}"))
                }
            }
            Condition::DayOfWeek { allowed_days } => {
                let day = ctx.weekday();
                if allowed_days.contains(&day) {
                    Satisfied
                } else {
                    Violated(format!("{day:?} not an allowed day"))
                }
            }
            Condition::GeoFence { allowed_zones } => {
                let zone = ctx.zone.as_ref().ok_or(DomainError::MissingContextField("zone"))?;
                if allowed_zones.contains(zone) {
                    Satisfied
                } else {
                    Violated(format!("zone `{zone}` outside the fence"))
                }
            }
            Condition::IpAllowlist { allowed_prefixes } => {
                let addr = ctx
                    .source_address
                    .as_ref()
                    .ok_or(DomainError::MissingContextField("source_address"))?;
                if allowed_prefixes.iter().any(|p| p.contains(addr)) {
                    Satisfied
                } else {
                    Violated(format!("address {addr} not allowlisted"))
                }
            }
            Condition::AccessFrequency { max_uses } => {
                if ctx.prior_use_count < u64::from(*max_uses) {
                    Satisfied
                } else {
                    Exhausted
                }
            }
        };
        Ok(outcome)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
            items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        }
        match self {
            Condition::TimeWindow {
                start_minute,
                end_minute,
            } => write!(
                f,
                "TimeWindow[{:02}:{:02}-{:02}:{:02})",
                start_minute / 60,
                start_minute % 60,
                end_minute / 60,
                end_minute % 60
            ),
            Condition::CalendarExpiry { expiry_date } => write!(f, "CalendarExpiry[<={expiry_date}]"),
            Condition::DayOfWeek { allowed_days } => {
                write!(f, "DayOfWeek[{}]", join(allowed_days.iter().map(|d| format!("{d:?}"))))
            }
            Condition::GeoFence { allowed_zones } => write!(f, "GeoFence[{}]", join(allowed_zones)),
            Condition::IpAllowlist { allowed_prefixes } => write!(f, "IpAllowlist[{}]", join(allowed_prefixes)),
            Condition::AccessFrequency { max_uses } => write!(f, "AccessFrequency[{max_uses}]"),
        }
    }
}
