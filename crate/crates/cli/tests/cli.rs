use proptest::prelude::*;
use serde_json::Value;
use std::path::Path;
use std::process::Command;
use unavoid_cli::config::{ChampagneSpec, DomainSpec, PhiSpec, ProfileSpec};
use unavoid_cli::record::StageStatus;
use unavoid_cli::{replay, run_pipeline, ExperimentConfig, Overrides, Pipeline};

const CANTOR: &str = r#"
schema_version = 1
seed = 3

[profile]
kind = "riesz"
d = 2
alpha = 1.0

[phi]
family = "cap_over_log"

[cantor]
depth = 3
growth_samples = 100
"#;

const VERIFY: &str = r#"
schema_version = 1
seed = 42

[profile]
kind = "classical"
d = 3

[domain]
kind = "ball"
center = [0.0, 0.0, 0.0]
radius = 1.0

[champagne]
method = "boundary_cover"
delta = 0.1
depth = 2

[verify]
samples = 300
probes_per_shell = 3
shells = 2
free = [[0.2, 0.1, 0.0]]
"#;

fn config(text: &str, verb: Pipeline) -> ExperimentConfig {
    ExperimentConfig::parse(text)
        .unwrap()
        .resolve(verb, &Overrides::default())
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_unavoid"))
}

#[test]
fn cantor_record_has_three_green_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&config(CANTOR, Pipeline::Cantor), dir.path()).unwrap();
    assert!(rec.passed(), "{:?}", rec.verdicts);
    let lines: Vec<Value> = read(dir.path(), "certificates.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    // re-assert from the persisted numbers alone
    for (k, c) in lines.iter().enumerate() {
        let m = c["m"].as_u64().unwrap();
        assert_eq!(m, k as u64 + 1);
        let f = |p: &str| c.pointer(p).and_then(Value::as_f64).unwrap();
        assert!(f("/covering/ln_bound") < -(m as f64).ln());
        assert!(f("/check_iii/ln_lower") < f("/check_iii/ln_value"));
        assert!(f("/check_iii/ln_value") < f("/check_iii/ln_upper"));
        assert!(f("/check_iii/ln_two_r") < f("/check_iii/ln_a_over_n"));
    }
    let growth = read(dir.path(), "growth.csv");
    assert_eq!(growth.lines().count(), 4);
    assert!(growth.lines().next().unwrap().starts_with("m,lhs_max"));
    for name in [
        "levels.csv",
        "covering.csv",
        "covering.svg",
        "cubes.svg",
        "record.json",
        "config.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn verify_is_byte_identical_across_runs() {
    let cfg = config(VERIFY, Pipeline::Verify);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&cfg, a.path()).unwrap();
    let rb = run_pipeline(&cfg, b.path()).unwrap();
    assert_eq!(
        read(a.path(), "estimates.jsonl"),
        read(b.path(), "estimates.jsonl")
    );
    assert_eq!(read(a.path(), "hitting.csv"), read(b.path(), "hitting.csv"));
    assert_eq!(ra.summary, rb.summary);
    assert_eq!(ra.artifacts, rb.artifacts);
    assert_eq!(read(a.path(), "estimates.jsonl").lines().count(), 7);
}

#[test]
fn seed_changes_the_estimates() {
    let cfg = config(VERIFY, Pipeline::Verify);
    let other = ExperimentConfig {
        seed: 43,
        ..cfg.clone()
    };
    assert_ne!(cfg.hash(), other.hash());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&cfg, a.path()).unwrap();
    run_pipeline(&other, b.path()).unwrap();
    assert_ne!(
        read(a.path(), "estimates.jsonl"),
        read(b.path(), "estimates.jsonl")
    );
}

#[test]
fn fresh_replay_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(VERIFY, Pipeline::Verify), dir.path()).unwrap();
    let rep = replay(&dir.path().join("record.json")).unwrap();
    assert!(rep.identical, "{:?}", rep.mismatches);
    assert!(rep.checks.iter().any(|c| c == "budget_check"));
    assert!(dir.path().join("replay_report.json").exists());
}

#[test]
fn edited_radius_is_caught_at_budget_check() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(VERIFY, Pipeline::Verify), dir.path()).unwrap();
    let path = dir.path().join("bubbles.csv");
    let text = read(dir.path(), "bubbles.csv");
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut f: Vec<String> = lines[1].split(',').map(String::from).collect();
    let r: f64 = f[3].parse().unwrap();
    f[3] = (0.5 * r).to_string();
    lines[1] = f.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let rep = replay(dir.path()).unwrap();
    assert!(!rep.identical);
    assert!(
        rep.mismatches.iter().any(|m| m.field == "budget_check.sum"),
        "{:?}",
        rep.mismatches
    );
    assert!(rep
        .mismatches
        .iter()
        .any(|m| m.field == "budget_check.shell1"));
}

#[test]
fn edited_certificate_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(CANTOR, Pipeline::Cantor), dir.path()).unwrap();
    let text = read(dir.path(), "certificates.jsonl");
    let mut first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["covering"]["ln_bound"] = Value::from(0.5);
    let rest: Vec<&str> = text.lines().skip(1).collect();
    std::fs::write(
        dir.path().join("certificates.jsonl"),
        format!("{first}\n{}\n", rest.join("\n")),
    )
    .unwrap();
    let rep = replay(dir.path()).unwrap();
    assert!(
        rep.mismatches
            .iter()
            .any(|m| m.field == "certificate.step1"),
        "{:?}",
        rep.mismatches
    );
}

#[test]
fn full_pipeline_in_a_ball() {
    let text = r#"
schema_version = 1
seed = 11

[profile]
kind = "classical"
d = 3

[domain]
kind = "ball"
center = [0.0, 0.0, 0.0]
radius = 1.0

[cantor]
depth = 2
growth_samples = 50

[champagne]
method = "boundary_cover"
delta = 0.1
depth = 2

[verify]
samples = 200
probes_per_shell = 2
shells = 1
"#;
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&config(text, Pipeline::Full), dir.path()).unwrap();
    let names: Vec<&str> = rec.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["champagne", "cantor", "pattern", "verify"]);
    assert!(rec.stages.iter().all(|s| s.status == StageStatus::Ok));
    let budget = rec.summary["champagne.budget"].as_f64().unwrap();
    assert!(budget < 0.1);
    assert_eq!(read(dir.path(), "certificates.jsonl").lines().count(), 2);
    let base: Value = serde_json::from_str(&read(dir.path(), "pattern_base.json")).unwrap();
    assert_eq!(base["kind"], "cubes");
    let pass = |n: &str| rec.verdicts.iter().find(|v| v.name == n).map(|v| v.pass);
    assert_eq!(pass("pattern.containment"), Some(true));
    assert_eq!(pass("champagne.budget"), Some(true));
    assert!(pass("verify.kappa").is_some());
    let shapes = rec.summary["pattern.shapes"].as_u64().unwrap();
    let bubbles = rec.summary["champagne.bubbles"].as_u64().unwrap();
    assert_eq!(shapes % bubbles, 0);
}

#[test]
fn hausdorff_fit_near_target() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&config(CANTOR, Pipeline::Hausdorff), dir.path()).unwrap();
    let g = rec.summary["hausdorff.gamma"].as_f64().unwrap();
    assert!((0.9..=1.1).contains(&g), "gamma {g}");
    assert!(!dir.path().join("growth.csv").exists());
    assert_eq!(read(dir.path(), "content.csv").lines().count(), 4);
}

#[test]
fn riesz_shells_in_whole_space() {
    let text = r#"
schema_version = 1
seed = 7

[profile]
kind = "riesz"
d = 2
alpha = 1.0

[domain]
kind = "whole_space"
d = 2

[champagne]
method = "riesz_shell"
radii = [1.0, 2.0, 4.0]
delta_shell = 0.2

[verify]
samples = 200
probes_per_shell = 2
shells = 1
escape_radius = 200.0
"#;
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&config(text, Pipeline::Verify), dir.path()).unwrap();
    assert!(rec.failed_stage().is_none(), "{:?}", rec.stages);
    assert!(rec.summary.contains_key("champagne.divergence_sum"));
    assert!(!rec.verdicts.iter().any(|v| v.name == "champagne.budget"));
}

#[test]
fn listed_bubbles_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("b.csv"),
        "x0,x1,x2,radius,shell\n0.5,0,0,0.01,1\n-0.5,0,0,0.02,1\n0,0.8,0,0.005,2\n",
    )
    .unwrap();
    let text = r#"
schema_version = 1
seed = 1

[profile]
kind = "classical"
d = 3

[domain]
kind = "ball"
center = [0.0, 0.0, 0.0]
radius = 1.0

[champagne]
method = "listed"
bubbles = "b.csv"
"#;
    std::fs::write(dir.path().join("c.toml"), text).unwrap();
    let cfg = ExperimentConfig::load(&dir.path().join("c.toml"))
        .unwrap()
        .resolve(Pipeline::Champagne, &Overrides::default())
        .unwrap();
    let out = dir.path().join("run");
    let rec = run_pipeline(&cfg, &out).unwrap();
    assert!(rec.passed(), "{:?}", rec.stages);
    assert_eq!(rec.summary["champagne.bubbles"], 3);
    assert!(replay(&out).unwrap().identical);
}

#[test]
fn failing_stage_persists_partial_state() {
    // phi = cap never falls below the shell budgets
    let text = VERIFY.replace("[domain]", "[phi]\nfamily = \"cap\"\n\n[domain]");
    let dir = tempfile::tempdir().unwrap();
    let rec = run_pipeline(&config(&text, Pipeline::Verify), dir.path()).unwrap();
    let failed = rec.failed_stage().unwrap();
    assert_eq!(failed.name, "champagne");
    assert!(failed.error.as_ref().unwrap().contains("scan exhausted"));
    assert_eq!(rec.stages.len(), 1);
    assert!(!rec.passed());
    assert!(dir.path().join("record.json").exists());
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn schema_checks() {
    let unknown = CANTOR.replace("seed = 3", "seed = 3\ncolour = \"red\"");
    assert!(ExperimentConfig::parse(&unknown)
        .unwrap_err()
        .to_string()
        .contains("colour"));
    let version = CANTOR.replace("schema_version = 1", "schema_version = 2");
    assert!(ExperimentConfig::parse(&version)
        .unwrap_err()
        .to_string()
        .contains("schema_version"));
    let no_seed = CANTOR.replace("seed = 3", "");
    assert!(ExperimentConfig::parse(&no_seed).is_err());
    let nested = CANTOR.replace("growth_samples = 100", "growth_samples = 100\nwidth = 2");
    assert!(ExperimentConfig::parse(&nested).is_err());

    let cfg = ExperimentConfig::parse(CANTOR).unwrap();
    let pinned = ExperimentConfig {
        pipeline: Some(Pipeline::Cantor),
        ..cfg.clone()
    };
    assert!(pinned
        .resolve(Pipeline::Verify, &Overrides::default())
        .is_err());
    // verify needs bubbles
    assert!(cfg
        .clone()
        .resolve(Pipeline::Verify, &Overrides::default())
        .is_err());
    let deep = Overrides {
        depth: Some(0),
        ..Default::default()
    };
    assert!(cfg.clone().resolve(Pipeline::Cantor, &deep).is_err());
    let samples = Overrides {
        samples: Some(10),
        ..Default::default()
    };
    assert!(cfg.resolve(Pipeline::Cantor, &samples).is_err());
    let v = ExperimentConfig::parse(VERIFY).unwrap();
    let mut bad = v.clone();
    bad.domain = Some(DomainSpec::Ball {
        center: vec![0.0, 0.0],
        radius: 1.0,
    });
    assert!(bad
        .resolve(Pipeline::Verify, &Overrides::default())
        .is_err());
    let mut bad = v;
    bad.verify.as_mut().unwrap().kappa = Some(1.5);
    assert!(bad
        .resolve(Pipeline::Verify, &Overrides::default())
        .is_err());
}

#[test]
fn overrides_apply() {
    let o = Overrides {
        seed: Some(9),
        out: Some("x".into()),
        samples: Some(17),
        depth: Some(3),
    };
    let cfg = ExperimentConfig::parse(VERIFY)
        .unwrap()
        .resolve(Pipeline::Verify, &o)
        .unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.verify.as_ref().unwrap().samples, 17);
    assert!(matches!(
        cfg.champagne,
        Some(ChampagneSpec::BoundaryCover { depth: 3, .. })
    ));
    // the output directory does not enter the hash
    let moved = ExperimentConfig {
        out: Some("elsewhere".into()),
        ..cfg.clone()
    };
    assert_eq!(cfg.hash(), moved.hash());
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, CANTOR).unwrap();
    let out = dir.path().join("run");
    let st = bin()
        .args(["cantor", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        st.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&st.stdout)
    );
    assert!(String::from_utf8_lossy(&st.stdout).contains("PASS cantor.step3"));
    let st = bin().arg("replay").arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(0));

    let strict = dir.path().join("strict.toml");
    std::fs::write(&strict, VERIFY.replace("free = ", "kappa = 0.999\nfree = ")).unwrap();
    let st = bin()
        .args(["verify", "--samples", "50", "--config"])
        .arg(&strict)
        .arg("--out")
        .arg(dir.path().join("v"))
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(1));

    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        CANTOR.replace("schema_version = 1", "schema_version = 7"),
    )
    .unwrap();
    let st = bin()
        .args(["cantor", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));

    let st = bin()
        .args(["champagne", "--config"])
        .arg(&good)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}

fn profile_strategy() -> impl Strategy<Value = ProfileSpec> {
    prop_oneof![
        (3usize..6).prop_map(|d| ProfileSpec::Classical { d }),
        (0.01f64..0.9, prop::option::of(0.1f64..0.5))
            .prop_map(|(eta, r0)| ProfileSpec::Logarithmic { eta, r0 }),
        (2usize..4, 0.1f64..1.9).prop_map(|(d, alpha)| ProfileSpec::Riesz { d, alpha }),
    ]
}

fn phi_strategy() -> impl Strategy<Value = PhiSpec> {
    prop_oneof![
        Just(PhiSpec::Cap),
        Just(PhiSpec::CapOverLog),
        (0.01f64..2.0).prop_map(|eps| PhiSpec::CapTimesPower { eps }),
        (0.01f64..3.0).prop_map(|gamma| PhiSpec::Power { gamma }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_roundtrip(
        seed in any::<u64>(),
        profile in profile_strategy(),
        phi in phi_strategy(),
        depth in 1usize..6,
        samples in 1usize..5000,
        delta in 0.001f64..1.0,
        radius in 0.1f64..10.0,
    ) {
        let d = match profile { ProfileSpec::Classical { d } | ProfileSpec::Riesz { d, .. } => d, ProfileSpec::Logarithmic { .. } => 2 };
        let mut cfg = ExperimentConfig::parse(VERIFY).unwrap();
        cfg.seed = seed;
        cfg.profile = profile;
        cfg.phi = phi;
        cfg.cantor.depth = depth;
        cfg.domain = Some(DomainSpec::Ball { center: vec![0.0; d], radius });
        cfg.champagne = Some(ChampagneSpec::BoundaryCover { delta, depth, psi: 1.0 });
        cfg.verify.as_mut().unwrap().samples = samples;
        cfg.verify.as_mut().unwrap().free = vec![vec![0.0; d]];
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        let json: ExperimentConfig = serde_json::from_str(&cfg.canonical()).unwrap();
        prop_assert_eq!(json.hash(), cfg.hash());
    }
}
