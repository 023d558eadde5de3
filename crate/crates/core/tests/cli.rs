//! Drives the `consentchain` binary end to end.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_consentchain"));
    c.env_remove("CONSENT_FIXTURES");
    c
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const PPA: &str = r#"{"ppa_id":"P1","patient_id":"jordan","pc":["patient=jordan"],"prc":["team=cardiology"],
"roc":["hipaa"],"validity_end":"2025-12-31","icc":[
{"consent_id":"c1","patient_id":"jordan","users":["DOC:david"],"objects":["PHI1005","PHI1006"],"operations":["Read"]},
{"consent_id":"c2","patient_id":"jordan","users":["NRS:amy"],"objects":["PHI1005"],"operations":["Read"]},
{"consent_id":"c3","patient_id":"jordan","users":["DOC:erin"],"objects":["PHI1005"],"operations":["Read"]}]}"#;

/// A chain directory holding one deployed agreement and two decisions.
fn populated_chain(dir: &Path) -> String {
    let chain = dir.join("chain");
    let chain = chain.to_str().unwrap().to_owned();
    let ppa = dir.join("ppa.json");
    std::fs::write(&ppa, PPA).unwrap();
    let o = run(&["--chain", &chain, "ppa-create", "--file", ppa.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for (user, phi) in [("DOC:david", "PHI1006"), ("PHR:paul", "PHI1005")] {
        let o = run(&[
            "--chain", &chain, "request", "--user", user, "--patient", "jordan", "--phi", phi, "--operation", "Read",
            "--at", "2024-06-04T10:00:00",
        ]);
        assert_eq!(code(&o), 0);
    }
    chain
}

#[test]
fn bundled_oracle_scenario_passes() {
    let o = run(&["run", "--scenario", scenario("role_table_oracle.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" request ")).count(), 330);
}

#[test]
fn wrong_expectation_exits_one_and_names_the_step() {
    let o = run(&["run", "--scenario", scenario("phr_expect_grant.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("notes"));
}

#[test]
fn empty_and_malformed_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, "name = \"empty\"\nsteps = []\n").unwrap();
    let o = run(&["run", "--scenario", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \n").unwrap();
    assert_eq!(code(&run(&["run", "--scenario", bad.to_str().unwrap()])), 2);

    let forward = dir.path().join("forward.toml");
    std::fs::write(
        &forward,
        "name = \"fwd\"\n[[steps]]\nop = \"expect\"\nstep = \"later\"\noutcome = \"Grant\"\n[[steps]]\nid = \"later\"\nop = \"seal\"\n",
    )
    .unwrap();
    assert_eq!(code(&run(&["run", "--scenario", forward.to_str().unwrap()])), 2);

    assert_eq!(code(&run(&["run", "--scenario", "/nonexistent/scenario.toml"])), 2);
}

#[test]
fn machine_transcripts_are_deterministic() {
    let path = scenario("jordan_david.toml");
    let a = run(&["--machine", "run", "--scenario", path.to_str().unwrap()]);
    let b = run(&["--machine", "run", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    for line in stdout(&a).lines() {
        let _: serde_json::Value = serde_json::from_str(line).expect("each line is JSON");
    }
}

#[test]
fn fixture_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("jordan_david.toml");
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let o = bin()
        .env("CONSENT_FIXTURES", &fixtures)
        .args(["run", "--scenario", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin()
        .env("CONSENT_FIXTURES", dir.path().join("missing"))
        .args(["run", "--scenario", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn chain_verify_fresh_then_tampered() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("fresh");
    let o = run(&["--chain", fresh.to_str().unwrap(), "chain-verify"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "Valid\n");

    let chain = populated_chain(dir.path());
    let o = run(&["--chain", &chain, "chain-verify"]);
    assert_eq!((code(&o), stdout(&o)), (0, "Valid\n".to_owned()));

    let dump = stdout(&run(&["--chain", &chain, "chain-dump"]));
    assert!(dump.lines().count() >= 5);
    let mut lines: Vec<String> = dump.lines().map(str::to_owned).collect();
    let mut block: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    block["timestamp"] = serde_json::json!(block["timestamp"].as_u64().unwrap() + 7);
    lines[3] = block.to_string();
    let edited = dir.path().join("edited.jsonl");
    std::fs::write(&edited, lines.join("\n") + "\n").unwrap();

    let o = run(&["--chain", &chain, "chain-verify", "--dump", edited.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert_eq!(stdout(&o), "Broken(3)\n");
    let o = run(&["--chain", &chain, "--machine", "chain-verify", "--dump", edited.to_str().unwrap()]);
    assert_eq!(stdout(&o).trim(), r#"{"status":"Broken(3)"}"#);

    // The edited dump placed in a chain directory refuses to load.
    let copy = dir.path().join("copy");
    std::fs::create_dir_all(&copy).unwrap();
    for f in ["chain-config.json", "ppas.json"] {
        std::fs::copy(Path::new(&chain).join(f), copy.join(f)).unwrap();
    }
    std::fs::copy(&edited, copy.join("chain.jsonl")).unwrap();
    let o = run(&["--chain", copy.to_str().unwrap(), "chain-verify"]);
    assert_eq!((code(&o), stdout(&o)), (1, "Broken(3)\n".to_owned()));
    assert_eq!(code(&run(&["--chain", copy.to_str().unwrap(), "chain-dump"])), 1);
}

#[test]
fn administrative_subcommands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let chain = populated_chain(dir.path());
    let ppa = dir.path().join("ppa.json");

    let o = run(&["--chain", &chain, "ppa-verify", "--id", "P1", "--file", ppa.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Intact"));
    let tampered = dir.path().join("tampered.json");
    std::fs::write(&tampered, PPA.replace("hipaa", "none")).unwrap();
    let o = run(&["--chain", &chain, "ppa-verify", "--id", "P1", "--file", tampered.to_str().unwrap()]);
    assert!(stdout(&o).contains("Tampered"));

    let alt = dir.path().join("alt.json");
    std::fs::write(
        &alt,
        r#"{"consent_id":"c1b","patient_id":"jordan","users":["DOC:david"],"objects":["PHI1005"],"operations":["Read","Write"]}"#,
    )
    .unwrap();
    let o = run(&["--chain", &chain, "consent-alter", "--old", "c1", "--file", alt.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // Removing the only nurse would leave the team incomplete.
    let o = run(&["--chain", &chain, "consent-terminate", "--id", "c2"]);
    assert_eq!(code(&o), 1);
    let o = run(&["--chain", &chain, "consent-terminate", "--id", "missing"]);
    assert_eq!(code(&o), 1);

    let o = run(&["--chain", &chain, "--machine", "provenance-query", "--orientation", "user", "--key", "DOC:david"]);
    assert_eq!(code(&o), 0);
    let rows: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2, "c1 is historical, c1b is active");

    let o = run(&["--chain", &chain, "chain-verify"]);
    assert_eq!(stdout(&o), "Valid\n");
}

#[test]
fn provenance_export_is_valid_dot() {
    let dir = tempfile::tempdir().unwrap();
    let chain = populated_chain(dir.path());
    let out = dir.path().join("graph.dot");
    let o = run(&["--chain", &chain, "--out", out.to_str().unwrap(), "provenance-export", "--format", "dot"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let (nodes, edges) = dot::validate(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    assert!(nodes.contains("consent:c1"));
    assert!(edges >= 6);

    let o = run(&["--chain", &chain, "provenance-export", "--format", "json"]);
    let _: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
}

#[test]
fn bench_report_shape() {
    let o = run(&[
        "--profile", "ethereum-like", "--profile", "polygon-like", "bench", "--counts", "4,8,12", "--operations",
        "create,terminate",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("consent_count,operation,chain_profile,total_gas,write_latency_ms,read_latency_ms,fee_units")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 3 * 2);
    assert!(rows.iter().all(|r| r.len() == 7));
    let profiles: BTreeSet<&str> = rows.iter().map(|r| r[2]).collect();
    assert_eq!(profiles, ["ethereum-like", "polygon-like"].into());
    assert_eq!(rows[0][..3], ["4", "create", "ethereum-like"]);
    assert_eq!(code(&run(&["--profile", "nowhere-like", "bench", "--counts", "4"])), 2);
}

/// A small reader for the dot subset: `digraph ID { stmt* }` where a
/// statement is a node or an edge with an optional attribute list.
mod dot {
    use std::collections::BTreeSet;

    #[derive(Debug, PartialEq)]
    enum Tok {
        Id(String),
        Arrow,
        Sym(char),
    }

    fn lex(s: &str) -> Result<Vec<Tok>, String> {
        let mut out = Vec::new();
        let mut it = s.chars().peekable();
        while let Some(&c) = it.peek() {
            match c {
                c if c.is_whitespace() => {
                    it.next();
                }
                '{' | '}' | '[' | ']' | '=' | ',' | ';' => {
                    out.push(Tok::Sym(c));
                    it.next();
                }
                '-' => {
                    it.next();
                    if it.next() != Some('>') {
                        return Err("lone '-'".into());
                    }
                    out.push(Tok::Arrow);
                }
                '"' => {
                    it.next();
                    let mut id = String::new();
                    loop {
                        match it.next() {
                            Some('\\') => id.push(it.next().ok_or("dangling escape")?),
                            Some('"') => break,
                            Some(ch) => id.push(ch),
                            None => return Err("unterminated string".into()),
                        }
                    }
                    out.push(Tok::Id(id));
                }
                c if c.is_alphanumeric() || c == '_' || c == '.' => {
                    let mut id = String::new();
                    while let Some(&ch) = it.peek() {
                        if ch.is_alphanumeric() || ch == '_' || ch == '.' {
                            id.push(ch);
                            it.next();
                        } else {
                            break;
                        }
                    }
                    out.push(Tok::Id(id));
                }
                other => return Err(format!("unexpected character {other:?}")),
            }
        }
        Ok(out)
    }

    /// Returns declared node ids and the edge count. Every edge endpoint
    /// must be declared.
    pub fn validate(s: &str) -> Result<(BTreeSet<String>, usize), String> {
        if !s.ends_with('\n') {
            return Err("not newline-terminated".into());
        }
        let toks = lex(s)?;
        let mut i = 0;
        let id = |i: &mut usize| match toks.get(*i) {
            Some(Tok::Id(s)) => {
                *i += 1;
                Ok(s.clone())
            }
            t => Err(format!("expected id at {i}, got {t:?}")),
        };
        let sym = |i: &mut usize, c: char| {
            if toks.get(*i) == Some(&Tok::Sym(c)) {
                *i += 1;
                Ok(())
            } else {
                Err(format!("expected {c:?} at token {i}, got {:?}", toks.get(*i)))
            }
        };
        if id(&mut i)? != "digraph" {
            return Err("not a digraph".into());
        }
        id(&mut i)?;
        sym(&mut i, '{')?;
        let mut nodes = BTreeSet::new();
        let mut endpoints = Vec::new();
        while toks.get(i) != Some(&Tok::Sym('}')) {
            let a = id(&mut i)?;
            if toks.get(i) == Some(&Tok::Arrow) {
                i += 1;
                let b = id(&mut i)?;
                endpoints.push((a, b));
            } else {
                nodes.insert(a);
            }
            if toks.get(i) == Some(&Tok::Sym('[')) {
                i += 1;
                loop {
                    id(&mut i)?;
                    sym(&mut i, '=')?;
                    id(&mut i)?;
                    if toks.get(i) == Some(&Tok::Sym(',')) {
                        i += 1;
                    } else {
                        break;
                    }
                }
                sym(&mut i, ']')?;
            }
            sym(&mut i, ';')?;
        }
        sym(&mut i, '}')?;
        if i != toks.len() {
            return Err("trailing tokens".into());
        }
        for (a, b) in &endpoints {
            if !nodes.contains(a) || !nodes.contains(b) {
                return Err(format!("edge {a} -> {b} uses an undeclared node"));
            }
        }
        Ok((nodes, endpoints.len()))
    }

    #[test]
    fn rejects_broken_text() {
        assert!(validate("digraph g {\n}\n").is_ok());
        assert!(validate("digraph g {\n  \"a\" -> \"b\";\n}\n").is_err());
        assert!(validate("digraph g {\n  \"a\" [label=\"x\"\n}\n").is_err());
        assert!(validate("graph g {\n}\n").is_err());
    }
}
