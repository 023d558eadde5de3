//! Command-line driver behind the `consentchain` binary.
//!
//! Administrative subcommands operate on a chain directory holding the block
//! dump, the off-chain agreement store and the chain configuration. Each
//! invocation restores the engine by replay, applies one operation and
//! writes the directory back.

pub mod bench;
pub mod scenario;

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use crate::authz::AccessRequest;
use crate::domain::{
    Fixtures, InformedConsent, LogicalTime, OperationKind, Ppa, RequestContext, RoleCode, UserRef,
};
use crate::engine::{ConsentEngine, EngineConfig, EngineError};
use crate::ledger::{verify_dump, ChainConfig, ChainStatus, DEFAULT_TIME_SCALE};
use crate::provenance::{ExportFormat, Orientation, OrientationQuery, ProvenanceGraph, QueryMode};

use bench::{BenchOp, BenchPlan};

/// Environment variable naming a directory with `catalog.toml` and
/// `matrix.toml`.
pub const FIXTURES_ENV: &str = "CONSENT_FIXTURES";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("expectation failed: {0}")]
    ExpectationFailed(String),
    #[error("{0}")]
    Engine(#[from] EngineError),
    #[error("chain is {0}")]
    ChainBroken(ChainStatus),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::ExpectationFailed(_) | CliError::Engine(_) | CliError::ChainBroken(_) => EXIT_FAILED,
        }
    }
}

/// Chain and fixture settings shared by config files and scenario files.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct Settings {
    /// Named network profile used as the base chain configuration.
    #[serde(default)]
    pub profile: Option<String>,
    /// Divisor applied to the profile's block interval.
    #[serde(default)]
    pub time_scale: Option<u64>,
    /// Field-wise overrides on top of the profile.
    #[serde(default)]
    pub chain: Option<toml::Table>,
    #[serde(default)]
    pub required_roles: Option<Vec<RoleCode>>,
    /// Directory containing `catalog.toml` and `matrix.toml`.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default)]
    pub matrix: Option<PathBuf>,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn chain_config(&self) -> Result<ChainConfig, CliError> {
        let scale = self.time_scale.unwrap_or(DEFAULT_TIME_SCALE);
        let base = match &self.profile {
            Some(name) => ChainConfig::from_profile_name(name, scale)
                .ok_or_else(|| CliError::Parse(format!("unknown chain profile `{name}`")))?,
            None => ChainConfig::from_profile_name("ethereum-like", scale).expect("built-in profile"),
        };
        let Some(over) = &self.chain else {
            return Ok(base);
        };
        let mut table = toml::Table::try_from(&base).map_err(|e| CliError::Parse(e.to_string()))?;
        merge(&mut table, over);
        let cfg: ChainConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
        cfg.validate().map_err(CliError::Parse)?;
        Ok(cfg)
    }

    /// Explicit file paths win over a fixture directory, which wins over the
    /// environment, which wins over the built-in tables.
    pub fn fixtures(&self, base: &Path, env_dir: Option<&Path>) -> Result<Fixtures, CliError> {
        let parse = |e: crate::domain::DomainError| CliError::Parse(e.to_string());
        match (&self.catalog, &self.matrix, &self.fixtures) {
            (Some(c), Some(m), _) => Fixtures::load_files(&base.join(c), &base.join(m)).map_err(parse),
            (None, None, Some(dir)) => Fixtures::load_dir(&base.join(dir)).map_err(parse),
            (None, None, None) => match env_dir {
                Some(dir) => Fixtures::load_dir(dir).map_err(parse),
                None => Ok(Fixtures::default()),
            },
            _ => Err(CliError::Parse("catalog and matrix must be given together".into())),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "consentchain", version, about = "Informed-consent management on a hash-chained ledger")]
pub struct Cli {
    /// Settings file (TOML): profile, chain overrides, fixtures, required roles.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Emit machine-readable JSON lines instead of human text.
    #[arg(long, global = true)]
    pub machine: bool,
    /// Chain profile; repeat for several profiles in `bench`.
    #[arg(long, global = true)]
    pub profile: Vec<String>,
    /// Write primary output to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Chain directory used by the administrative subcommands.
    #[arg(long, global = true, default_value = "consentchain-data")]
    pub chain: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario file against a fresh chain.
    Run {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Emit the gas and latency report as CSV.
    Bench {
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        operations: Vec<BenchOp>,
        /// Measure write latency on the wall clock, sleeping out each block.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Finalize an agreement (JSON or TOML file) and deploy its consents.
    PpaCreate {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        no_deploy: bool,
    },
    /// Check a local copy of an agreement against its anchored digest.
    PpaVerify {
        #[arg(long)]
        id: String,
        #[arg(long)]
        file: PathBuf,
    },
    /// Admit one consent (JSON file) into its patient's repository.
    ConsentCreate {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        at: Option<NaiveDateTime>,
    },
    /// Replace an active consent with a new one under a fresh id.
    ConsentAlter {
        #[arg(long)]
        old: String,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        at: Option<NaiveDateTime>,
    },
    /// Withdraw an active consent and archive it.
    ConsentTerminate {
        #[arg(long)]
        id: String,
        #[arg(long)]
        at: Option<NaiveDateTime>,
    },
    /// Archive consents whose calendar or frequency limit has passed.
    ConsentSweep {
        #[arg(long)]
        at: Option<NaiveDateTime>,
    },
    /// Issue an access request and print the decision.
    Request {
        #[arg(long)]
        user: UserRef,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        phi: String,
        #[arg(long)]
        operation: OperationKind,
        #[arg(long)]
        at: Option<NaiveDateTime>,
        #[arg(long)]
        zone: Option<String>,
        #[arg(long)]
        address: Option<std::net::IpAddr>,
        #[arg(long)]
        request_id: Option<String>,
    },
    /// Query the provenance graph by user, resource, operation or condition.
    ProvenanceQuery {
        #[arg(long)]
        orientation: Orientation,
        #[arg(long)]
        key: String,
        #[arg(long, default_value = "given")]
        mode: QueryMode,
    },
    /// Export the provenance graph as dot or JSON.
    ProvenanceExport {
        #[arg(long, default_value = "dot")]
        format: ExportFormat,
    },
    /// Verify the hash chain of the chain directory or of a dump file.
    ChainVerify {
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Print the block dump, one JSON line per block.
    ChainDump,
}

struct Ctx {
    machine: bool,
    out: Option<PathBuf>,
    chain_dir: PathBuf,
    settings: Settings,
    settings_base: PathBuf,
    profiles: Vec<String>,
}

impl Ctx {
    fn emit(&self, text: &str) -> Result<(), CliError> {
        let mut text = text.to_owned();
        if !text.is_empty() && !text.ends_with('\n') {
            text.push('\n');
        }
        match &self.out {
            Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
            None => {
                let mut so = std::io::stdout().lock();
                so.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
            }
        }
    }

    fn env_fixtures(&self) -> Option<PathBuf> {
        std::env::var_os(FIXTURES_ENV).map(PathBuf::from)
    }

    fn engine_config(&self) -> Result<EngineConfig, CliError> {
        let mut settings = self.settings.clone();
        if let Some(p) = self.profiles.first() {
            settings.profile = Some(p.clone());
        }
        scenario::engine_config(&settings, &self.settings_base, self.env_fixtures().as_deref())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads a JSON document, or TOML for any other extension.
fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}

const DUMP_FILE: &str = "chain.jsonl";
const PPA_FILE: &str = "ppas.json";
const CONFIG_FILE: &str = "chain-config.json";

/// Loads the engine from the chain directory, or starts a new chain. The
/// chain configuration is pinned in the directory on first use.
fn open_store(ctx: &Ctx) -> Result<ConsentEngine, CliError> {
    let mut cfg = ctx.engine_config()?;
    let dir = &ctx.chain_dir;
    let dump_path = dir.join(DUMP_FILE);
    if !dump_path.exists() {
        return Ok(ConsentEngine::new(cfg)?);
    }
    cfg.chain = serde_json::from_str(&read(&dir.join(CONFIG_FILE))?).map_err(|e| CliError::Parse(e.to_string()))?;
    let ppas: Vec<Ppa> = match dir.join(PPA_FILE) {
        p if p.exists() => serde_json::from_str(&read(&p)?).map_err(|e| CliError::Parse(e.to_string()))?,
        _ => Vec::new(),
    };
    Ok(ConsentEngine::restore(&read(&dump_path)?, cfg, ppas)?)
}

fn save_store(ctx: &Ctx, engine: &ConsentEngine) -> Result<(), CliError> {
    let dir = &ctx.chain_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write(&dir.join(DUMP_FILE), &engine.ledger().dump())?;
    let ppas: Vec<&Ppa> = engine.stored_ppas().collect();
    write(&dir.join(PPA_FILE), &serde_json::to_string_pretty(&ppas).expect("ppas serialize"))?;
    write(
        &dir.join(CONFIG_FILE),
        &serde_json::to_string_pretty(engine.ledger().config()).expect("config serializes"),
    )
}

fn at_time(engine: &mut ConsentEngine, at: Option<NaiveDateTime>) {
    if let Some(t) = at {
        engine.set_time(LogicalTime::from_datetime(t));
    }
}

fn render(ctx: &Ctx, machine: serde_json::Value, human: String) -> String {
    if ctx.machine {
        machine.to_string()
    } else {
        human
    }
}

/// Applies one state-changing command to the stored chain.
fn mutate(ctx: &Ctx, f: impl FnOnce(&mut ConsentEngine) -> Result<String, CliError>) -> Result<(), CliError> {
    let mut engine = open_store(ctx)?;
    let text = f(&mut engine)?;
    save_store(ctx, &engine)?;
    ctx.emit(&text)
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario: path } => {
            let (file, base) = scenario::load(&path)?;
            let mut settings = file.settings.clone();
            if let Some(p) = ctx.profiles.first() {
                settings.profile = Some(p.clone());
            }
            let cfg = scenario::engine_config(&settings, &base, ctx.env_fixtures().as_deref())?;
            let t = scenario::run(&file, cfg)?;
            ctx.emit(&t.render(ctx.machine))?;
            if t.passed() {
                Ok(())
            } else {
                Err(CliError::ExpectationFailed(t.failures.join("; ")))
            }
        }
        Command::Bench {
            counts,
            operations,
            wall_clock,
        } => {
            let cfg = ctx.engine_config()?;
            let names = if ctx.profiles.is_empty() {
                vec![cfg.chain.chain_name.clone()]
            } else {
                ctx.profiles.clone()
            };
            let mut profiles = Vec::new();
            for name in names {
                let mut s = ctx.settings.clone();
                s.profile = Some(name.clone());
                profiles.push((name, s.chain_config()?));
            }
            let counts = if counts.is_empty() { BenchPlan::default_counts() } else { counts };
            if counts.contains(&0) {
                return Err(CliError::Parse("consent counts must be positive".into()));
            }
            let plan = BenchPlan {
                profiles,
                counts,
                operations: if operations.is_empty() { BenchOp::ALL.to_vec() } else { operations },
                fixtures: cfg.fixtures,
                wall_clock,
            };
            ctx.emit(&bench::run(&plan)?.to_csv())
        }
        Command::PpaCreate { file, no_deploy } => {
            let ppa: Ppa = read_doc(&file)?;
            mutate(ctx, |e| {
                let id = ppa.ppa_id.clone();
                let integrity = e.create_ppa(ppa)?;
                let deployed = if no_deploy { Vec::new() } else { e.deploy_consents(&id)? };
                Ok(render(
                    ctx,
                    json!({"status": "ok", "ppa_id": id, "h_ppa": integrity.h_ppa, "deployed": deployed}),
                    format!("agreement {id} stored, h_ppa {}; deployed {}", integrity.h_ppa, deployed.join(", ")),
                ))
            })
        }
        Command::PpaVerify { id, file } => {
            let ppa: Ppa = read_doc(&file)?;
            mutate(ctx, |e| {
                let status = e.verify_ppa_integrity(&id, &ppa)?;
                Ok(render(ctx, json!({"ppa_id": id, "integrity": status}), format!("{id}: {status:?}")))
            })
        }
        Command::ConsentCreate { file, at } => {
            let ic: InformedConsent = read_doc(&file)?;
            mutate(ctx, |e| {
                at_time(e, at);
                let id = e.create_consent(ic)?;
                Ok(render(ctx, json!({"status": "ok", "consent_id": id}), format!("created {id}")))
            })
        }
        Command::ConsentAlter { old, file, at } => {
            let ic: InformedConsent = read_doc(&file)?;
            mutate(ctx, |e| {
                at_time(e, at);
                let id = e.alter_consent(&old, ic)?;
                Ok(render(
                    ctx,
                    json!({"status": "ok", "archived": old, "consent_id": id}),
                    format!("altered {old} -> {id}"),
                ))
            })
        }
        Command::ConsentTerminate { id, at } => mutate(ctx, |e| {
            at_time(e, at);
            e.terminate_consent(&id)?;
            Ok(render(ctx, json!({"status": "ok", "terminated": id}), format!("terminated {id}")))
        }),
        Command::ConsentSweep { at } => mutate(ctx, |e| {
            at_time(e, at);
            let swept = e.expire_sweep(e.clock())?;
            Ok(render(
                ctx,
                json!({"status": "ok", "expired": swept}),
                format!("expired: {}", if swept.is_empty() { "none".into() } else { swept.join(", ") }),
            ))
        }),
        Command::Request {
            user,
            patient,
            phi,
            operation,
            at,
            zone,
            address,
            request_id,
        } => mutate(ctx, |e| {
            at_time(e, at);
            let mut context = RequestContext::at(e.clock().to_datetime());
            context.zone = zone;
            context.source_address = address;
            let req = AccessRequest {
                request_id: request_id.unwrap_or_else(|| format!("req-{}", e.ledger().height() + 1)),
                subject: user,
                patient_id: patient,
                phi_id: phi,
                operation,
                context,
            };
            let d = e.authorize(&req)?;
            let reasons: Vec<String> = d.reasons.iter().map(ToString::to_string).collect();
            Ok(if ctx.machine {
                d.to_line()
            } else {
                match &d.matched_consent {
                    Some(c) => format!("{} {} (consent {c})", d.request_id, d.outcome),
                    None => format!("{} {}: {}", d.request_id, d.outcome, reasons.join(", ")),
                }
            })
        }),
        Command::ProvenanceQuery { orientation, key, mode } => {
            let engine = open_store(ctx)?;
            let graph = provenance_graph(&engine)?;
            let rows = graph
                .query(&OrientationQuery::new(orientation, key, mode))
                .map_err(|e| CliError::Parse(e.to_string()))?;
            let text: String = rows
                .iter()
                .map(|r| {
                    if ctx.machine {
                        r.to_line() + "\n"
                    } else {
                        human_row(r) + "\n"
                    }
                })
                .collect();
            ctx.emit(&text)
        }
        Command::ProvenanceExport { format } => {
            let engine = open_store(ctx)?;
            ctx.emit(&provenance_graph(&engine)?.export(format))
        }
        Command::ChainVerify { dump } => {
            let path = dump.unwrap_or_else(|| ctx.chain_dir.join(DUMP_FILE));
            // A directory that was never written holds only the implicit genesis.
            let status = if path.exists() || path != ctx.chain_dir.join(DUMP_FILE) {
                verify_dump(&read(&path)?)
            } else {
                open_store(ctx)?.ledger().verify_chain()
            };
            ctx.emit(&render(ctx, json!({"status": status.to_string()}), status.to_string()))?;
            match status {
                ChainStatus::Valid => Ok(()),
                broken => Err(CliError::ChainBroken(broken)),
            }
        }
        Command::ChainDump => {
            let engine = open_store(ctx)?;
            ctx.emit(&engine.ledger().dump())
        }
    }
}

fn provenance_graph(engine: &ConsentEngine) -> Result<ProvenanceGraph, CliError> {
    let events = engine.ledger().all_events();
    ProvenanceGraph::from_events(Some(&engine.fixtures().catalog), &events).map_err(|e| CliError::Parse(e.to_string()))
}

fn human_row(r: &crate::provenance::ReportRow) -> String {
    let mut s = format!(
        "{} users=[{}] resources=[{}] ops=[{}] conditions=[{}]",
        r.consent_id.as_deref().unwrap_or("-"),
        r.users.join(", "),
        r.resources.join(", "),
        r.operations.join(", "),
        r.conditions.join(", ")
    );
    if r.historical {
        s.push_str(" historical");
    }
    if let (Some(o), Some(at)) = (r.outcome, r.at) {
        s.push_str(&format!(" {o} at {}", LogicalTime(at)));
    }
    if let Some(n) = r.ordinal {
        s.push_str(&format!(" use #{n}"));
    }
    s
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run_cli(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    let (settings, settings_base) = match &cli.config {
        Some(p) => (
            Settings::from_toml(&read(p)?)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (Settings::default(), PathBuf::from(".")),
    };
    let ctx = Ctx {
        machine: cli.machine,
        out: cli.out,
        chain_dir: cli.chain,
        settings,
        settings_base,
        profiles: cli.profile,
    };
    dispatch(&ctx, cli.command)
}
