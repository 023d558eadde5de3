//! Scenario files: a chain setup plus an ordered list of steps, each with an
//! optional logical timestamp, run against a fresh engine.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::authz::{AccessDecision, AccessRequest};
use crate::domain::{
    InformedConsent, LogicalTime, OperationKind, Ppa, RequestContext, UserRef,
};
use crate::engine::{ConsentEngine, EngineConfig, EngineError, SealPolicy};
use crate::ledger::{EventKind, EventRecord};
use crate::provenance::{Orientation, OrientationQuery, ProvenanceGraph, QueryMode};

use super::{CliError, Settings};

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub settings: Settings,
    #[serde(default)]
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Step {
    /// Label that `expect` steps refer to. Defaults to `s<index>`.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub at: Option<NaiveDateTime>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    CreatePpa {
        ppa: Ppa,
        #[serde(default = "yes")]
        deploy: bool,
    },
    CreateConsent {
        consent: InformedConsent,
    },
    Alter {
        old: String,
        consent: InformedConsent,
    },
    Terminate {
        consent_id: String,
    },
    Sweep {},
    Request {
        #[serde(default)]
        request_id: Option<String>,
        user: UserRef,
        patient: String,
        phi: String,
        operation: OperationKind,
        #[serde(default)]
        zone: Option<String>,
        #[serde(default)]
        address: Option<std::net::IpAddr>,
        /// Shorthand for a following `expect` on this step: an outcome or a
        /// reason code.
        #[serde(default)]
        expect: Option<String>,
    },
    Seal {},
    Query {
        orientation: Orientation,
        key: String,
        mode: QueryMode,
        #[serde(default)]
        rows: Option<usize>,
    },
    Expect(Expectation),
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    /// Step the predicates apply to; omitted for chain-wide predicates.
    #[serde(default)]
    pub step: Option<String>,
    /// `Grant`, `Deny`, `ok` or `error`.
    #[serde(default)]
    pub outcome: Option<String>,
    /// A deny reason code, an error code, or a conflict/finding code.
    #[serde(default)]
    pub reason: Option<String>,
    #[serde(default)]
    pub event_kind: Option<EventKind>,
    #[serde(default)]
    pub event_count: Option<usize>,
    #[serde(default)]
    pub consent: Option<String>,
    #[serde(default)]
    pub use_count: Option<u64>,
    #[serde(default)]
    pub active: Option<bool>,
}

/// What a step produced, as recorded in the transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub id: String,
    pub op: &'static str,
    pub at: u64,
    pub status: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub txs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<String>,
}

impl StepRecord {
    fn human(&self) -> String {
        let mut s = format!("{:>4} {:<14} {:<8} {}", self.index, self.op, self.id, self.status);
        if !self.codes.is_empty() {
            s.push_str(&format!(" [{}]", self.codes.join(", ")));
        }
        if let Some(d) = &self.detail {
            s.push_str(&format!(" {d}"));
        }
        if !self.events.is_empty() {
            let ids: Vec<String> = self.events.iter().map(u64::to_string).collect();
            s.push_str(&format!(" events={}", ids.join(",")));
        }
        for r in &self.rows {
            s.push_str(&format!("\n       {r}"));
        }
        s
    }

    fn is_error(&self) -> bool {
        self.status == "error"
    }
}

#[derive(Debug, Default)]
pub struct Transcript {
    pub steps: Vec<StepRecord>,
    pub failures: Vec<String>,
}

impl Transcript {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn render(&self, machine: bool) -> String {
        let mut out = String::new();
        for s in &self.steps {
            if machine {
                out.push_str(&serde_json::to_string(s).expect("record serializes"));
            } else {
                out.push_str(&s.human());
            }
            out.push('\n');
        }
        for f in &self.failures {
            if machine {
                out.push_str(&serde_json::json!({ "failure": f }).to_string());
            } else {
                out.push_str(&format!("FAIL {f}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load(path: &Path) -> Result<(ScenarioFile, PathBuf), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let file = parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((file, base))
}

pub fn parse(text: &str) -> Result<ScenarioFile, CliError> {
    toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

fn step_label(i: usize, s: &Step) -> String {
    s.id.clone().unwrap_or_else(|| format!("s{}", i + 1))
}

/// Checks the file before anything runs: labels are unique and every
/// `expect` names an earlier step.
fn check_references(file: &ScenarioFile) -> Result<(), CliError> {
    let mut seen = BTreeSet::new();
    for (i, s) in file.steps.iter().enumerate() {
        if let Action::Expect(e) = &s.action {
            if let Some(target) = &e.step {
                if !seen.contains(target) {
                    return Err(CliError::Parse(format!(
                        "step {} expects on `{target}`, which is not an earlier step",
                        i + 1
                    )));
                }
            }
        }
        if !seen.insert(step_label(i, s)) {
            return Err(CliError::Parse(format!("duplicate step id `{}`", step_label(i, s))));
        }
    }
    Ok(())
}

pub fn engine_config(settings: &Settings, base: &Path, fixtures_env: Option<&Path>) -> Result<EngineConfig, CliError> {
    let chain = settings.chain_config()?;
    let fixtures = settings.fixtures(base, fixtures_env)?;
    let mut cfg = EngineConfig {
        chain,
        fixtures,
        seal_policy: SealPolicy::Immediate,
        ..EngineConfig::default()
    };
    if let Some(roles) = &settings.required_roles {
        cfg.required_roles = roles.iter().copied().collect();
    }
    Ok(cfg)
}

pub fn run(file: &ScenarioFile, config: EngineConfig) -> Result<Transcript, CliError> {
    run_with_engine(file, config).map(|(t, _)| t)
}

/// Like [`run`], also handing back the engine in its final state.
pub fn run_with_engine(file: &ScenarioFile, config: EngineConfig) -> Result<(Transcript, ConsentEngine), CliError> {
    check_references(file)?;
    let mut engine = ConsentEngine::new(config).map_err(CliError::Engine)?;
    let mut t = Transcript::default();
    let mut by_label: BTreeMap<String, usize> = BTreeMap::new();
    let mut covered_errors: BTreeSet<usize> = BTreeSet::new();

    for (i, step) in file.steps.iter().enumerate() {
        let label = step_label(i, step);
        if let Some(at) = step.at {
            engine.set_time(LogicalTime::from_datetime(at));
        }
        let first_new_event = engine.ledger().all_events().last().map_or(0, |e| e.event_id + 1);
        let mut rec = StepRecord {
            index: i + 1,
            id: label.clone(),
            op: op_name(&step.action),
            at: engine.clock().millis(),
            status: "ok".into(),
            codes: Vec::new(),
            detail: None,
            txs: Vec::new(),
            events: Vec::new(),
            rows: Vec::new(),
        };
        let result = execute(&mut engine, step, &label, &mut rec, &t, &by_label, &mut covered_errors);
        match result {
            Ok(()) => {}
            Err(StepError::Engine(e)) => {
                rec.status = "error".into();
                rec.codes = std::iter::once(e.code().to_owned()).chain(e.detail_codes()).collect();
                rec.detail = Some(e.to_string());
            }
            Err(StepError::Expectation(msg)) => {
                rec.status = "failed".into();
                rec.detail = Some(msg.clone());
                t.failures.push(format!("step {} ({label}): {msg}", i + 1));
            }
        }
        rec.events = engine
            .ledger()
            .all_events()
            .into_iter()
            .filter(|e| e.event_id >= first_new_event)
            .map(|e| e.event_id)
            .collect();
        by_label.insert(label, t.steps.len());
        t.steps.push(rec);
    }

    for (idx, s) in t.steps.iter().enumerate() {
        if s.is_error() && !covered_errors.contains(&idx) {
            t.failures.push(format!(
                "step {} ({}) failed with {} and no expectation covers it",
                s.index,
                s.id,
                s.codes.first().map_or("an error", String::as_str)
            ));
        }
    }
    Ok((t, engine))
}

enum StepError {
    Engine(EngineError),
    Expectation(String),
}

impl From<EngineError> for StepError {
    fn from(e: EngineError) -> Self {
        StepError::Engine(e)
    }
}

fn op_name(a: &Action) -> &'static str {
    match a {
        Action::CreatePpa { .. } => "create_ppa",
        Action::CreateConsent { .. } => "create_consent",
        Action::Alter { .. } => "alter",
        Action::Terminate { .. } => "terminate",
        Action::Sweep {} => "sweep",
        Action::Request { .. } => "request",
        Action::Seal {} => "seal",
        Action::Query { .. } => "query",
        Action::Expect(_) => "expect",
    }
}

fn decision_record(rec: &mut StepRecord, d: &AccessDecision) {
    rec.status = d.outcome.to_string();
    rec.codes = d.reasons.iter().map(|r| r.code().to_owned()).collect();
    rec.detail = d.matched_consent.clone();
    rec.txs = vec![d.logged_tx.to_hex()];
}

fn execute(
    engine: &mut ConsentEngine,
    step: &Step,
    label: &str,
    rec: &mut StepRecord,
    t: &Transcript,
    by_label: &BTreeMap<String, usize>,
    covered: &mut BTreeSet<usize>,
) -> Result<(), StepError> {
    match &step.action {
        Action::CreatePpa { ppa, deploy } => {
            let integrity = engine.create_ppa(ppa.clone())?;
            rec.detail = Some(format!("h_ppa={}", integrity.h_ppa));
            if *deploy {
                let ids = engine.deploy_consents(&ppa.ppa_id)?;
                rec.codes = ids;
            }
        }
        Action::CreateConsent { consent } => {
            rec.detail = Some(engine.create_consent(consent.clone())?);
        }
        Action::Alter { old, consent } => {
            rec.detail = Some(engine.alter_consent(old, consent.clone())?);
        }
        Action::Terminate { consent_id } => {
            engine.terminate_consent(consent_id)?;
            rec.detail = Some(consent_id.clone());
        }
        Action::Sweep {} => {
            rec.codes = engine.expire_sweep(engine.clock())?;
        }
        Action::Request {
            request_id,
            user,
            patient,
            phi,
            operation,
            zone,
            address,
            expect,
        } => {
            let mut ctx = RequestContext::at(engine.clock().to_datetime());
            ctx.zone = zone.clone();
            ctx.source_address = *address;
            let req = AccessRequest {
                request_id: request_id.clone().unwrap_or_else(|| label.to_owned()),
                subject: user.clone(),
                patient_id: patient.clone(),
                phi_id: phi.clone(),
                operation: *operation,
                context: ctx,
            };
            let d = engine.authorize(&req)?;
            decision_record(rec, &d);
            if let Some(want) = expect {
                if !matches_code(want, &rec.status, &rec.codes) {
                    return Err(StepError::Expectation(format!(
                        "expected {want}, got {} {:?}",
                        rec.status, rec.codes
                    )));
                }
            }
        }
        Action::Seal {} => {
            let h = engine.seal()?.height;
            rec.detail = Some(format!("height={h}"));
        }
        Action::Query {
            orientation,
            key,
            mode,
            rows,
        } => {
            let events: Vec<EventRecord> = engine.ledger().all_events();
            let graph = ProvenanceGraph::from_events(Some(&engine.fixtures().catalog), &events)
                .map_err(|e| StepError::Expectation(e.to_string()))?;
            let q = OrientationQuery::new(*orientation, key.clone(), *mode);
            let out = graph.query(&q).map_err(|e| StepError::Expectation(e.to_string()))?;
            rec.rows = out.iter().map(|r| r.to_line()).collect();
            if let Some(n) = rows {
                if out.len() != *n {
                    return Err(StepError::Expectation(format!("expected {n} rows, got {}", out.len())));
                }
            }
        }
        Action::Expect(e) => check_expectation(engine, e, t, by_label, covered).map_err(StepError::Expectation)?,
    }
    Ok(())
}

fn matches_code(want: &str, status: &str, codes: &[String]) -> bool {
    want.eq_ignore_ascii_case(status) || codes.iter().any(|c| c.eq_ignore_ascii_case(want))
}

fn check_expectation(
    engine: &ConsentEngine,
    e: &Expectation,
    t: &Transcript,
    by_label: &BTreeMap<String, usize>,
    covered: &mut BTreeSet<usize>,
) -> Result<(), String> {
    if let Some(label) = &e.step {
        let idx = by_label[label];
        let target = &t.steps[idx];
        if target.is_error() {
            covered.insert(idx);
        }
        if let Some(want) = &e.outcome {
            if !want.eq_ignore_ascii_case(&target.status) {
                return Err(format!("step `{label}` status is {}, expected {want}", target.status));
            }
        }
        if let Some(want) = &e.reason {
            if !target.codes.iter().any(|c| c.eq_ignore_ascii_case(want)) {
                return Err(format!("step `{label}` codes {:?} lack {want}", target.codes));
            }
        }
    }
    if let Some(kind) = e.event_kind {
        let n = engine.ledger().all_events().iter().filter(|ev| ev.kind == kind).count();
        if let Some(want) = e.event_count {
            if n != want {
                return Err(format!("{kind} count is {n}, expected {want}"));
            }
        }
    }
    if let Some(consent) = &e.consent {
        if let Some(want) = e.use_count {
            let n = engine.use_count(consent);
            if n != want {
                return Err(format!("use_count({consent}) is {n}, expected {want}"));
            }
        }
        if let Some(want) = e.active {
            let active = engine.world().containers().any(|c| c.active(consent).is_some());
            if active != want {
                return Err(format!("consent {consent} active={active}, expected {want}"));
            }
        }
    }
    Ok(())
}
