//! Replay of a persisted run: integrity of the stored inputs, recomputation
//! of the budget and the certificates from them, and a fresh run compared
//! field by field with the stored record.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::sha256_file;
use crate::pipeline::{budget_phi, run_pipeline};
use crate::record::RunRecord;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use unavoid::cantor::StepCertificate;
use unavoid::champagne::BubbleConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMismatch {
    pub field: String,
    pub stored: Value,
    pub recomputed: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub dir: PathBuf,
    pub identical: bool,
    /// Names of the checks that ran.
    pub checks: Vec<String>,
    pub mismatches: Vec<FieldMismatch>,
}

fn record_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    }
}

pub fn load_record(dir: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(dir.join("record.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn same_number(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

struct Checker {
    checks: Vec<String>,
    mismatches: Vec<FieldMismatch>,
}

impl Checker {
    fn mismatch(
        &mut self,
        field: impl Into<String>,
        stored: impl Serialize,
        recomputed: impl Serialize,
    ) {
        let v = |x: serde_json::Result<Value>| x.unwrap_or(Value::Null);
        self.mismatches.push(FieldMismatch {
            field: field.into(),
            stored: v(serde_json::to_value(stored)),
            recomputed: v(serde_json::to_value(recomputed)),
        });
    }
}

/// Replay the run stored in `path` (a record file or its directory). The
/// fresh run goes to `<dir>/replay`; the report to `<dir>/replay_report.json`.
pub fn replay(path: &Path) -> Result<ReplayReport> {
    let dir = record_dir(path);
    let stored = load_record(&dir)?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    let mut c = Checker {
        checks: Vec::new(),
        mismatches: Vec::new(),
    };

    c.checks.push("config_hash".into());
    let hash = cfg.hash();
    if hash != stored.config_hash {
        c.mismatch("config_hash", &stored.config_hash, &hash);
    }

    c.checks.push("artifacts".into());
    for a in &stored.artifacts {
        let p = dir.join(&a.name);
        let now = if p.exists() {
            sha256_file(&p)?
        } else {
            "missing".into()
        };
        if now != a.sha256 {
            c.mismatch(format!("artifact.{}", a.name), &a.sha256, &now);
        }
    }

    let profile = cfg.profile.build()?;
    let bubbles_path = dir.join("bubbles.csv");
    if bubbles_path.exists() {
        c.checks.push("budget_check".into());
        let bubbles = BubbleConfig::bubbles_from_csv(&std::fs::read_to_string(&bubbles_path)?)?;
        let phi = budget_phi(&cfg, &profile);
        let term = |r: f64| phi.ln_eval(r.ln()).exp();
        let sum: f64 = bubbles.iter().map(|b| term(b.radius)).sum();
        let mut per_shell: BTreeMap<usize, f64> = BTreeMap::new();
        for b in &bubbles {
            *per_shell.entry(b.shell).or_default() += term(b.radius);
        }
        if let Some(v) = stored
            .summary
            .get("champagne.budget")
            .and_then(Value::as_f64)
        {
            if !same_number(v, sum) {
                c.mismatch("budget_check.sum", v, sum);
            }
        }
        for (n, s) in per_shell {
            if let Some(v) = stored
                .summary
                .get(&format!("champagne.shell{n}.budget"))
                .and_then(Value::as_f64)
            {
                if !same_number(v, s) {
                    c.mismatch(format!("budget_check.shell{n}"), v, s);
                }
            }
        }
    }

    let certs_path = dir.join("certificates.jsonl");
    if certs_path.exists() {
        c.checks.push("certificates".into());
        let phi = cfg.phi.build(&profile);
        for line in std::fs::read_to_string(&certs_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
        {
            let cert: StepCertificate = serde_json::from_str(line)?;
            if let Err(e) = cert.reevaluate(&profile, &phi) {
                c.mismatch(
                    format!("certificate.step{}", cert.m),
                    "holds",
                    e.to_string(),
                );
            }
        }
    }

    c.checks.push("rerun".into());
    let fresh = run_pipeline(&cfg, &dir.join("replay"))?;
    compare_records(&stored, &fresh, &mut c);

    let report = ReplayReport {
        dir: dir.clone(),
        identical: c.mismatches.is_empty(),
        checks: c.checks,
        mismatches: c.mismatches,
    };
    std::fs::write(
        dir.join("replay_report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

fn compare_records(stored: &RunRecord, fresh: &RunRecord, c: &mut Checker) {
    let keys: BTreeSet<&String> = stored.summary.keys().chain(fresh.summary.keys()).collect();
    for k in keys {
        let (a, b) = (stored.summary.get(k), fresh.summary.get(k));
        let equal = match (a, b) {
            (Some(x), Some(y)) => match (x.as_f64(), y.as_f64()) {
                (Some(p), Some(q)) => p == q,
                _ => x == y,
            },
            _ => false,
        };
        if !equal {
            c.mismatch(format!("summary.{k}"), a, b);
        }
    }
    let verdicts = |r: &RunRecord| {
        r.verdicts
            .iter()
            .map(|v| (v.name.clone(), v.pass))
            .collect::<BTreeMap<_, _>>()
    };
    let (va, vb) = (verdicts(stored), verdicts(fresh));
    if va != vb {
        c.mismatch("verdicts", va, vb);
    }
    let stages = |r: &RunRecord| {
        r.stages
            .iter()
            .map(|s| (s.name.clone(), s.status.clone()))
            .collect::<Vec<_>>()
    };
    if stages(stored) != stages(fresh) {
        c.mismatch("stages", stages(stored), stages(fresh));
    }
    let hashes = |r: &RunRecord| {
        r.artifacts
            .iter()
            .map(|a| (a.name.clone(), a.sha256.clone()))
            .collect::<BTreeMap<_, _>>()
    };
    let (ha, hb) = (hashes(stored), hashes(fresh));
    for name in ha.keys().chain(hb.keys()).collect::<BTreeSet<_>>() {
        if ha.get(name) != hb.get(name) {
            c.mismatch(format!("rerun.{name}"), ha.get(name), hb.get(name));
        }
    }
}
