//! Consent provenance graph built from ledger events.
//!
//! Nodes are patients, users, resources, operations, conditions, consents
//! and access events. Edges record which patient gave each consent (`GAVE`),
//! whom it names (`GRANTS_TO`), what it covers, permits and is guarded by,
//! and which access events executed against it (`EXECUTED`). The graph is a
//! pure function of the event stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::authz::Outcome;
use crate::domain::{Catalog, ConditionKind, ConsentId, InformedConsent, OperationKind, UserRef};
use crate::ledger::{EventKind, EventRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvenanceError {
    #[error("event {event_id} ({kind}) lacks payload key `{key}`")]
    MalformedEvent {
        event_id: u64,
        kind: EventKind,
        key: &'static str,
    },
    #[error("no {orientation} named `{key}` in the graph")]
    UnknownKey { orientation: Orientation, key: String },
    #[error("cannot parse graph document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Patient,
    User,
    Resource,
    Operation,
    Condition,
    Consent,
    Event,
}

impl NodeKind {
    fn shape(self) -> &'static str {
        match self {
            NodeKind::Patient => "house",
            NodeKind::User => "ellipse",
            NodeKind::Resource => "box",
            NodeKind::Operation => "diamond",
            NodeKind::Condition => "octagon",
            NodeKind::Consent => "note",
            NodeKind::Event => "circle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    pub label: String,
    /// Set on consents that have left the active repository.
    #[serde(default)]
    pub historical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    Gave,
    GrantsTo,
    Covers,
    Permits,
    GuardedBy,
    Executed,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Gave => "GAVE",
            EdgeKind::GrantsTo => "GRANTS_TO",
            EdgeKind::Covers => "COVERS",
            EdgeKind::Permits => "PERMITS",
            EdgeKind::GuardedBy => "GUARDED_BY",
            EdgeKind::Executed => "EXECUTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub from: String,
    pub to: String,
    pub consent_id: Option<ConsentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<u64>,
}

/// One logged access, as carried by the event node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub event_id: u64,
    pub request_id: String,
    pub consent_id: Option<ConsentId>,
    pub user: String,
    pub phi_id: String,
    pub operation: String,
    pub outcome: Outcome,
    pub at: u64,
    /// 1-based count of grants under the consent, grants only.
    pub ordinal: Option<u64>,
    pub reasons: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct ConsentEntry {
    patient_id: String,
    consent: InformedConsent,
    historical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    UserOriented,
    ResourceOriented,
    OperationOriented,
    ConditionOriented,
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::UserOriented => "user",
            Orientation::ResourceOriented => "resource",
            Orientation::OperationOriented => "operation",
            Orientation::ConditionOriented => "condition",
        })
    }
}

impl FromStr for Orientation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().trim_end_matches("oriented").trim_end_matches('-') {
            "user" => Ok(Orientation::UserOriented),
            "resource" | "object" => Ok(Orientation::ResourceOriented),
            "operation" => Ok(Orientation::OperationOriented),
            "condition" => Ok(Orientation::ConditionOriented),
            _ => Err(format!("unknown orientation `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryMode {
    Given,
    Executed,
}

impl FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "given" => Ok(QueryMode::Given),
            "executed" => Ok(QueryMode::Executed),
            _ => Err(format!("unknown query mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrientationQuery {
    pub orientation: Orientation,
    pub key: String,
    pub mode: QueryMode,
}

impl OrientationQuery {
    pub fn new(orientation: Orientation, key: impl Into<String>, mode: QueryMode) -> Self {
        Self {
            orientation,
            key: key.into(),
            mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub consent_id: Option<ConsentId>,
    pub patient_id: Option<String>,
    pub users: Vec<String>,
    pub resources: Vec<String>,
    pub operations: Vec<String>,
    pub conditions: Vec<String>,
    pub historical: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u64>,
}

impl ReportRow {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("row serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(ExportFormat::Dot),
            "json" | "text" => Ok(ExportFormat::Json),
            _ => Err(format!("unknown export format `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceGraph {
    nodes: BTreeMap<String, Node>,
    edges: Vec<Edge>,
    consents: BTreeMap<ConsentId, ConsentEntry>,
    executions: BTreeMap<u64, ExecutionRecord>,
    resource_names: BTreeMap<String, String>,
    grant_counts: BTreeMap<ConsentId, u64>,
    /// Highest event id ingested; earlier ids are skipped on re-ingest.
    last_event: Option<u64>,
}

fn patient_node(p: &str) -> String {
    format!("patient:{p}")
}
fn user_node(u: &str) -> String {
    format!("user:{u}")
}
fn resource_node(r: &str) -> String {
    format!("resource:{r}")
}
fn operation_node(o: &str) -> String {
    format!("operation:{o}")
}
fn condition_node(c: &str) -> String {
    format!("condition:{c}")
}
fn consent_node(c: &str) -> String {
    format!("consent:{c}")
}
fn event_node(id: u64) -> String {
    format!("event:{id}")
}

fn need<'a>(e: &'a EventRecord, key: &'static str) -> Result<&'a str, ProvenanceError> {
    e.get(key).ok_or(ProvenanceError::MalformedEvent {
        event_id: e.event_id,
        kind: e.kind,
        key,
    })
}

impl ProvenanceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that labels resources with catalog names and accepts them as
    /// query keys.
    pub fn with_catalog(catalog: &Catalog) -> Self {
        let mut g = Self::default();
        for id in catalog.ids() {
            if let Some(name) = catalog.name_of(id) {
                g.resource_names.insert(id.to_owned(), name.to_owned());
            }
        }
        g
    }

    pub fn from_events<'a>(
        catalog: Option<&Catalog>,
        events: impl IntoIterator<Item = &'a EventRecord>,
    ) -> Result<Self, ProvenanceError> {
        let mut g = catalog.map_or_else(Self::default, Self::with_catalog);
        g.ingest(events)?;
        Ok(g)
    }

    pub fn nodes(&self) -> &BTreeMap<String, Node> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn executions(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.executions.values()
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.kind == kind)
    }

    /// Grants executed under `consent_id`.
    pub fn grant_count(&self, consent_id: &str) -> u64 {
        self.grant_counts.get(consent_id).copied().unwrap_or(0)
    }

    pub fn is_historical(&self, consent_id: &str) -> Option<bool> {
        self.consents.get(consent_id).map(|c| c.historical)
    }

    fn node(&mut self, id: String, kind: NodeKind, label: &str) -> String {
        self.nodes.entry(id.clone()).or_insert_with(|| Node {
            kind,
            label: label.to_owned(),
            historical: false,
        });
        id
    }

    fn edge(&mut self, kind: EdgeKind, from: String, to: String, consent_id: Option<&str>) {
        self.edges.push(Edge {
            kind,
            from,
            to,
            consent_id: consent_id.map(str::to_owned),
            outcome: None,
            at: None,
        });
    }

    /// Adds events in chain order. Events at or below the last ingested id
    /// are skipped, so feeding a prefix and then the whole stream is the
    /// same as feeding the whole stream once. On error nothing from the
    /// failing batch is kept.
    pub fn ingest<'a>(&mut self, events: impl IntoIterator<Item = &'a EventRecord>) -> Result<(), ProvenanceError> {
        let mut next = self.clone();
        for e in events {
            if next.last_event.is_some_and(|last| e.event_id <= last) {
                continue;
            }
            next.ingest_one(e)?;
            next.last_event = Some(e.event_id);
        }
        *self = next;
        Ok(())
    }

    fn ingest_one(&mut self, e: &EventRecord) -> Result<(), ProvenanceError> {
        match e.kind {
            EventKind::ConsentCreated => {
                let raw = need(e, "consent")?;
                let ic: InformedConsent = serde_json::from_str(raw).map_err(|_| ProvenanceError::MalformedEvent {
                    event_id: e.event_id,
                    kind: e.kind,
                    key: "consent",
                })?;
                self.add_consent(ic);
            }
            EventKind::ConsentArchived => {
                let id = need(e, "consent_id")?.to_owned();
                if let Some(entry) = self.consents.get_mut(&id) {
                    entry.historical = true;
                }
                if let Some(n) = self.nodes.get_mut(&consent_node(&id)) {
                    n.historical = true;
                }
            }
            EventKind::ConsentAltered | EventKind::ConsentTerminated | EventKind::ConsentExpired => {
                need(e, "consent_id")?;
            }
            EventKind::AccessGranted | EventKind::AccessDenied => self.add_execution(e)?,
            EventKind::PpaIntegrityStored => {
                need(e, "ppa_id")?;
            }
        }
        Ok(())
    }

    fn add_consent(&mut self, ic: InformedConsent) {
        let cid = ic.consent_id.clone();
        let c = self.node(consent_node(&cid), NodeKind::Consent, &cid);
        let p = self.node(patient_node(&ic.patient_id), NodeKind::Patient, &ic.patient_id);
        self.edge(EdgeKind::Gave, p, c.clone(), Some(&cid));
        for u in &ic.users {
            let label = u.to_string();
            let un = self.node(user_node(&label), NodeKind::User, &label);
            self.edge(EdgeKind::GrantsTo, c.clone(), un, Some(&cid));
        }
        for r in &ic.objects {
            let label = self.resource_names.get(r).cloned().unwrap_or_else(|| r.clone());
            let rn = self.node(resource_node(r), NodeKind::Resource, &label);
            self.edge(EdgeKind::Covers, c.clone(), rn, Some(&cid));
        }
        for o in &ic.operations {
            let on = self.node(operation_node(o.as_str()), NodeKind::Operation, o.as_str());
            self.edge(EdgeKind::Permits, c.clone(), on, Some(&cid));
        }
        for cond in &ic.conditions {
            let label = cond.to_string();
            let cn = self.node(condition_node(&label), NodeKind::Condition, &label);
            self.edge(EdgeKind::GuardedBy, c.clone(), cn, Some(&cid));
        }
        self.consents.insert(
            cid,
            ConsentEntry {
                patient_id: ic.patient_id.clone(),
                consent: ic,
                historical: false,
            },
        );
    }

    fn add_execution(&mut self, e: &EventRecord) -> Result<(), ProvenanceError> {
        let outcome = if e.kind == EventKind::AccessGranted {
            Outcome::Grant
        } else {
            Outcome::Deny
        };
        let request_id = need(e, "request_id")?.to_owned();
        let user = need(e, "user")?.to_owned();
        let phi_id = need(e, "phi_id")?.to_owned();
        let operation = need(e, "operation")?.to_owned();
        let at: u64 = need(e, "decided_at")?.parse().map_err(|_| ProvenanceError::MalformedEvent {
            event_id: e.event_id,
            kind: e.kind,
            key: "decided_at",
        })?;
        let reasons = e.get("reasons").unwrap_or("[]").to_owned();
        let consent_id = match outcome {
            Outcome::Grant => Some(need(e, "consent_id")?.to_owned()),
            Outcome::Deny => e.get("consent_id").map(str::to_owned),
        };
        let consent_id = consent_id.filter(|id| self.consents.contains_key(id));
        let ordinal = match (&consent_id, outcome) {
            (Some(id), Outcome::Grant) => {
                let n = self.grant_counts.entry(id.clone()).or_insert(0);
                *n += 1;
                Some(*n)
            }
            _ => None,
        };

        let ev = self.node(event_node(e.event_id), NodeKind::Event, &request_id);
        let target = match &consent_id {
            Some(id) => consent_node(id),
            None => {
                let label = self.resource_names.get(&phi_id).cloned().unwrap_or_else(|| phi_id.clone());
                self.node(resource_node(&phi_id), NodeKind::Resource, &label)
            }
        };
        self.edges.push(Edge {
            kind: EdgeKind::Executed,
            from: ev,
            to: target,
            consent_id: consent_id.clone(),
            outcome: Some(outcome),
            at: Some(at),
        });
        self.executions.insert(
            e.event_id,
            ExecutionRecord {
                event_id: e.event_id,
                request_id,
                consent_id,
                user,
                phi_id,
                operation,
                outcome,
                at,
                ordinal,
                reasons,
            },
        );
        Ok(())
    }

    fn resolve_resource(&self, key: &str) -> Option<String> {
        if self.nodes.contains_key(&resource_node(key)) {
            return Some(key.to_owned());
        }
        self.resource_names
            .iter()
            .find(|(_, name)| name.eq_ignore_ascii_case(key))
            .map(|(id, _)| id.clone())
            .filter(|id| self.nodes.contains_key(&resource_node(id)))
    }

    fn resolve_users(&self, key: &str) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.kind == NodeKind::User)
            .map(|(_, n)| n.label.clone())
            .filter(|label| {
                label == key || label.parse::<UserRef>().is_ok_and(|u| u.user_id == key)
            })
            .collect()
    }

    fn given_row(&self, id: &str, entry: &ConsentEntry) -> ReportRow {
        let ic = &entry.consent;
        ReportRow {
            consent_id: Some(id.to_owned()),
            patient_id: Some(entry.patient_id.clone()),
            users: ic.users.iter().map(ToString::to_string).collect(),
            resources: ic.objects.iter().map(|o| self.resource_label(o)).collect(),
            operations: ic.operations.iter().map(|o| o.as_str().to_owned()).collect(),
            conditions: ic.conditions.iter().map(ToString::to_string).collect(),
            historical: entry.historical,
            outcome: None,
            at: None,
            ordinal: None,
        }
    }

    fn resource_label(&self, id: &str) -> String {
        match self.resource_names.get(id) {
            Some(name) => format!("{id} {name}"),
            None => id.to_owned(),
        }
    }

    fn executed_row(&self, x: &ExecutionRecord) -> ReportRow {
        let entry = x.consent_id.as_ref().and_then(|id| self.consents.get(id));
        ReportRow {
            consent_id: x.consent_id.clone(),
            patient_id: entry.map(|e| e.patient_id.clone()),
            users: vec![x.user.clone()],
            resources: vec![self.resource_label(&x.phi_id)],
            operations: vec![x.operation.clone()],
            conditions: entry
                .map(|e| e.consent.conditions.iter().map(ToString::to_string).collect())
                .unwrap_or_default(),
            historical: entry.is_some_and(|e| e.historical),
            outcome: Some(x.outcome),
            at: Some(x.at),
            ordinal: x.ordinal,
        }
    }

    /// Answers one orientation query. Rows are ordered by consent id, then
    /// time.
    pub fn query(&self, q: &OrientationQuery) -> Result<Vec<ReportRow>, ProvenanceError> {
        let unknown = || ProvenanceError::UnknownKey {
            orientation: q.orientation,
            key: q.key.clone(),
        };
        // Each orientation reduces to a predicate on consents and one on
        // executions.
        type ConsentPred<'a> = Box<dyn Fn(&InformedConsent) -> bool + 'a>;
        type ExecPred<'a> = Box<dyn Fn(&ExecutionRecord) -> bool + 'a>;
        let (on_consent, on_exec): (ConsentPred, ExecPred) = match q.orientation {
            Orientation::UserOriented => {
                let users = self.resolve_users(&q.key);
                if users.is_empty() {
                    return Err(unknown());
                }
                let u2 = users.clone();
                (
                    Box::new(move |ic| ic.users.iter().any(|u| users.contains(&u.to_string()))),
                    Box::new(move |x| u2.contains(&x.user)),
                )
            }
            Orientation::ResourceOriented => {
                let id = self.resolve_resource(&q.key).ok_or_else(unknown)?;
                let id2 = id.clone();
                (Box::new(move |ic| ic.objects.contains(&id)), Box::new(move |x| x.phi_id == id2))
            }
            Orientation::OperationOriented => {
                let op: OperationKind = q.key.parse().map_err(|_| unknown())?;
                (
                    Box::new(move |ic| ic.operations.contains(&op)),
                    Box::new(move |x| x.operation == op.as_str()),
                )
            }
            Orientation::ConditionOriented => {
                let kind: ConditionKind = q.key.parse().map_err(|_| unknown())?;
                let has = move |ic: &InformedConsent| ic.conditions.iter().any(|c| c.kind() == kind);
                (
                    Box::new(has),
                    Box::new(move |x| {
                        x.consent_id
                            .as_ref()
                            .and_then(|id| self.consents.get(id))
                            .is_some_and(|e| has(&e.consent))
                    }),
                )
            }
        };
        let mut rows: Vec<(Option<ConsentId>, u64, u64, ReportRow)> = match q.mode {
            QueryMode::Given => self
                .consents
                .iter()
                .filter(|(_, e)| on_consent(&e.consent))
                .map(|(id, e)| (Some(id.clone()), 0, 0, self.given_row(id, e)))
                .collect(),
            QueryMode::Executed => self
                .executions
                .values()
                .filter(|x| on_exec(x))
                .map(|x| (x.consent_id.clone(), x.at, x.event_id, self.executed_row(x)))
                .collect(),
        };
        rows.sort_by(|a, b| (&a.0, a.1, a.2).cmp(&(&b.0, b.1, b.2)));
        Ok(rows.into_iter().map(|r| r.3).collect())
    }

    pub fn export(&self, format: ExportFormat) -> String {
        match format {
            ExportFormat::Dot => self.to_dot(),
            ExportFormat::Json => self.to_json(),
        }
    }

    /// Graphviz text. Node types map to shapes; edge labels carry the edge
    /// kind and consent id.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph provenance {\n");
        for (id, n) in &self.nodes {
            let style = if n.historical { ", style=dashed" } else { "" };
            out.push_str(&format!(
                "  {} [label={}, shape={}{}];\n",
                quote(id),
                quote(&n.label),
                n.kind.shape(),
                style
            ));
        }
        for e in &self.edges {
            let mut label = e.kind.as_str().to_owned();
            if let Some(c) = &e.consent_id {
                label.push(' ');
                label.push_str(c);
            }
            if let Some(o) = e.outcome {
                label.push_str(&format!(" {o}"));
            }
            out.push_str(&format!("  {} -> {} [label={}];\n", quote(&e.from), quote(&e.to), quote(&label)));
        }
        out.push_str("}\n");
        out
    }

    /// Canonical JSON document, newline-terminated.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("graph serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ProvenanceError> {
        serde_json::from_str(text.trim_end()).map_err(|e| ProvenanceError::Parse(e.to_string()))
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Condition, Digest, RoleCode};
    use crate::ledger::Payload;

    fn ev(id: u64, kind: EventKind, pairs: &[(&str, String)]) -> EventRecord {
        let payload: Payload = pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        EventRecord {
            event_id: id,
            block_height: 1,
            tx_id: Digest::ZERO,
            kind,
            payload,
        }
    }

    fn created(id: u64, ic: &InformedConsent) -> EventRecord {
        ev(
            id,
            EventKind::ConsentCreated,
            &[
                ("consent_id", ic.consent_id.clone()),
                ("patient_id", ic.patient_id.clone()),
                ("consent", serde_json::to_string(ic).unwrap()),
            ],
        )
    }

    fn grant(id: u64, consent: &str, at: u64) -> EventRecord {
        ev(
            id,
            EventKind::AccessGranted,
            &[
                ("consent_id", consent.into()),
                ("request_id", format!("r{id}")),
                ("user", "DOC:david".into()),
                ("phi_id", "PHI1005".into()),
                ("operation", "Read".into()),
                ("decided_at", at.to_string()),
                ("reasons", "[]".into()),
            ],
        )
    }

    fn david() -> InformedConsent {
        InformedConsent::new(
            "c1",
            "jordan",
            [UserRef::new(RoleCode::Doc, "david")],
            ["PHI1005", "PHI1006"],
            [OperationKind::Read],
        )
        .with_condition(Condition::AccessFrequency { max_uses: 5 })
    }

    fn stream() -> Vec<EventRecord> {
        let mut v = vec![created(0, &david())];
        v.extend((1..=3).map(|i| grant(i, "c1", 100 * i)));
        v
    }

    #[test]
    fn empty_stream_empty_graph() {
        let g = ProvenanceGraph::from_events(None, []).unwrap();
        assert!(g.is_empty());
        assert_eq!(g.to_dot(), "digraph provenance {\n}\n");
    }

    #[test]
    fn grants_become_executed_edges() {
        let g = ProvenanceGraph::from_events(None, &stream()).unwrap();
        assert_eq!(g.edges_of(EdgeKind::Executed).count(), 3);
        assert_eq!(g.edges_of(EdgeKind::Gave).count(), 1);
        assert_eq!(g.grant_count("c1"), 3);
        let rows = g
            .query(&OrientationQuery::new(Orientation::ConditionOriented, "AccessFrequency", QueryMode::Executed))
            .unwrap();
        let ords: Vec<_> = rows.iter().map(|r| r.ordinal.unwrap()).collect();
        assert_eq!(ords, vec![1, 2, 3]);
    }

    #[test]
    fn prefix_then_whole_equals_whole() {
        let s = stream();
        let whole = ProvenanceGraph::from_events(None, &s).unwrap();
        let mut inc = ProvenanceGraph::from_events(None, &s[..2]).unwrap();
        inc.ingest(&s).unwrap();
        assert_eq!(inc, whole);
    }

    #[test]
    fn malformed_event_is_rejected_atomically() {
        let mut g = ProvenanceGraph::from_events(None, &stream()[..1]).unwrap();
        let before = g.clone();
        let bad = ev(9, EventKind::AccessGranted, &[("user", "DOC:david".into())]);
        assert!(matches!(g.ingest([&bad]), Err(ProvenanceError::MalformedEvent { key: "request_id", .. })));
        assert_eq!(g, before);
    }

    #[test]
    fn keys_resolve_by_name_and_unknowns_fail() {
        let cat = Catalog::default();
        let g = ProvenanceGraph::from_events(Some(&cat), &stream()).unwrap();
        let rows = g
            .query(&OrientationQuery::new(Orientation::ResourceOriented, "Visit Notes", QueryMode::Given))
            .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].users, vec!["DOC:david".to_string()]);
        assert!(g
            .query(&OrientationQuery::new(Orientation::UserOriented, "nobody", QueryMode::Given))
            .is_err());
        let none = g
            .query(&OrientationQuery::new(Orientation::OperationOriented, "Update", QueryMode::Given))
            .unwrap();
        assert!(none.is_empty());
        assert!(g
            .query(&OrientationQuery::new(Orientation::OperationOriented, "Delete", QueryMode::Given))
            .is_err());
    }

    #[test]
    fn archived_consent_is_historical() {
        let mut s = stream();
        s.push(ev(
            10,
            EventKind::ConsentArchived,
            &[("consent_id", "c1".into()), ("patient_id", "jordan".into())],
        ));
        let g = ProvenanceGraph::from_events(None, &s).unwrap();
        assert_eq!(g.is_historical("c1"), Some(true));
        assert!(g.to_dot().contains("style=dashed"));
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let g = ProvenanceGraph::from_events(Some(&Catalog::default()), &stream()).unwrap();
        let a = g.to_json();
        let b = ProvenanceGraph::from_json(&a).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn every_edge_endpoint_is_a_node() {
        let g = ProvenanceGraph::from_events(None, &stream()).unwrap();
        for e in g.edges() {
            assert!(g.nodes().contains_key(&e.from), "{}", e.from);
            assert!(g.nodes().contains_key(&e.to), "{}", e.to);
        }
    }
}
