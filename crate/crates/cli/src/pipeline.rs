//! Stage orchestration. Stages run in order; the first failing stage ends
//! the run, and everything written up to then stays on disk with the record.

use crate::config::{ChampagneSpec, ExperimentConfig, Pipeline};
use crate::error::{CliError, Result};
use crate::output::{bars_svg, line_svg, scatter_svg, OutputDir};
use crate::record::{RunRecord, StageRecord, StageStatus, Summary, Verdict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};
use unavoid::cantor::{
    covering_certificate, potential_growth_check, run_cantor, CantorOptions, CantorRun,
};
use unavoid::champagne::{
    boundary_cover_config, budget_check, kz_config, listed_config, replace_with_pattern,
    riesz_shell_config, BubbleConfig, KzOptions, PatternBase,
};
use unavoid::geometry::{random_on_sphere, Ball, Domain, Region};
use unavoid::hausdorff::{content_upper_profile, dim_upper_fit, level_scales, log_dimension_sums};
use unavoid::hitting::{verify_unavoidable, HittingEstimate, Obstacles, Shape, WalkParams};
use unavoid::kernels::{CapacityProfile, MeasureFunction};
use unavoid::rng::derive_seed;

/// Largest number of placed shapes the full pipeline hands to the walker.
pub const PATTERN_SHAPE_LIMIT: u64 = 2_000_000;
/// Hitting level used when the configuration gives none.
pub const DEFAULT_KAPPA: f64 = 0.0625;
/// Slack on the sampled potential growth, relative to `c_1`.
pub const GROWTH_SLACK: f64 = 1e-2;
/// Drawn shapes per figure.
const FIGURE_LIMIT: usize = 40_000;

pub const SEED_TAG_GROWTH: u64 = 1;
pub const SEED_TAG_VERIFY: u64 = 2;

/// The measure function used for the budget of a configuration.
pub fn budget_phi(cfg: &ExperimentConfig, profile: &CapacityProfile) -> MeasureFunction {
    match cfg.champagne {
        Some(ChampagneSpec::RieszShell { .. }) => MeasureFunction::cap(profile),
        _ => cfg.phi.build(profile),
    }
}

#[derive(Serialize)]
struct LevelRow {
    m: usize,
    ln_count: f64,
    count: Option<u64>,
    ln_a: f64,
    explicit_cubes: Option<usize>,
}

#[derive(Serialize)]
struct CoveringRow {
    m: usize,
    bound: f64,
    threshold: f64,
}

#[derive(Serialize)]
struct DimensionRow {
    level: usize,
    ln_count: f64,
    ln_r: f64,
    slope_to_next: Option<f64>,
}

#[derive(Serialize)]
struct LogSumRow {
    level: usize,
    gamma: f64,
    ln_sum: f64,
}

/// One hitting estimate with its role, as persisted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub role: String,
    pub index: usize,
    pub estimate: HittingEstimate,
}

#[derive(Serialize)]
struct HittingRow {
    role: String,
    index: usize,
    x: String,
    p_hat: f64,
    stderr: f64,
    lower: f64,
    n: usize,
    seed: u64,
    truncation_bias_bound: f64,
    ties: usize,
    stalled: usize,
    valid: bool,
    mean_steps: f64,
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: OutputDir,
    record: RunRecord,
    profile: CapacityProfile,
    phi: MeasureFunction,
    cantor: Option<CantorRun>,
    bubbles: Option<BubbleConfig>,
    target: Option<Obstacles>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Centre and length scale of a domain; `whole` is the scale of the whole space.
fn center_scale(domain: &Domain, whole: f64) -> (Vec<f64>, f64) {
    match domain {
        Domain::Ball { center, radius } => (center.clone(), *radius),
        Domain::Annulus { center, outer, .. } => (center.clone(), *outer),
        Domain::Box { lo, hi } => (
            lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            lo.iter()
                .zip(hi)
                .map(|(a, b)| 0.5 * (b - a))
                .fold(0.0, f64::max),
        ),
        Domain::WholeSpace { d } => (vec![0.0; *d], whole),
    }
}

fn val<T: Serialize>(v: T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

impl<'a> Runner<'a> {
    fn put<T: Serialize>(&mut self, key: impl Into<String>, v: T) {
        self.record.summary.insert(key.into(), val(v));
    }

    fn verdict(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.record.verdicts.push(Verdict {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    /// Run one stage; `false` when it failed and the run must stop.
    fn stage(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<()>) -> bool {
        let t = Instant::now();
        let res = f(self);
        let elapsed_s = t.elapsed().as_secs_f64();
        let (status, error) = match res {
            Ok(()) => (StageStatus::Ok, None),
            Err(e) => (StageStatus::Failed, Some(e.to_string())),
        };
        let ok = status == StageStatus::Ok;
        self.record.stages.push(StageRecord {
            name: name.to_string(),
            status,
            error,
            elapsed_s,
        });
        ok
    }

    fn cantor(&mut self, growth: bool) -> Result<()> {
        let opts = CantorOptions::default();
        let run = run_cantor(&self.profile, &self.phi, self.cfg.cantor.depth, &opts)?;
        self.out
            .write_jsonl("certificates.jsonl", &run.certificates)?;
        let levels: Vec<LevelRow> = run
            .levels
            .iter()
            .map(|l| LevelRow {
                m: l.m,
                ln_count: l.ln_count,
                count: l.count,
                ln_a: l.ln_a,
                explicit_cubes: l.cubes.as_ref().map(Vec::len),
            })
            .collect();
        self.out.write_csv("levels.csv", &levels)?;
        self.put("cantor.c1", run.consts.c1);
        self.put("cantor.c", run.consts.c);
        self.put("cantor.big_c", run.consts.big_c);
        self.put("cantor.v_unit", run.consts.v_unit);
        for c in &run.certificates {
            let k = format!("cantor.step{}", c.m);
            self.put(format!("{k}.ln_n"), c.ln_n);
            self.put(format!("{k}.ln_r"), c.ln_r);
            self.put(format!("{k}.ln_count"), c.ln_count);
            self.put(format!("{k}.check_i"), c.check_i.value);
            self.put(format!("{k}.ln_covering"), c.covering.ln_bound);
            let check = c
                .reassert()
                .and_then(|_| c.reevaluate(&self.profile, &self.phi));
            let detail = match &check {
                Ok(()) => format!(
                    "ln M n^d phi(r) = {:.6} < ln(1/{})",
                    c.covering.ln_bound, c.m
                ),
                Err(e) => e.to_string(),
            };
            self.verdict(format!("cantor.step{}", c.m), check.is_ok(), detail);
        }
        let cov = covering_certificate(&run.certificates, &self.phi);
        let rows: Vec<CoveringRow> = run
            .certificates
            .iter()
            .map(|c| CoveringRow {
                m: c.m,
                bound: c.covering.ln_bound.exp(),
                threshold: 1.0 / c.m as f64,
            })
            .collect();
        self.out.write_csv("covering.csv", &rows)?;
        self.verdict(
            "cantor.covering",
            cov.is_ok(),
            cov.err()
                .map_or("every step below 1/m".into(), |e| e.to_string()),
        );
        let decay = vec![
            (
                "ln covering sum",
                rows.iter().map(|r| (r.m as f64, r.bound.ln())).collect(),
            ),
            (
                "ln(1/m)",
                rows.iter()
                    .map(|r| (r.m as f64, r.threshold.ln()))
                    .collect(),
            ),
        ];
        self.out.write_bytes(
            "covering.svg",
            line_svg(
                "covering sums of the Cantor levels",
                "step m",
                "log",
                &decay,
            )
            .as_bytes(),
        )?;
        if let Some(level) = run.levels.iter().rev().find(|l| l.cubes.is_some()) {
            let squares: Vec<([f64; 2], f64)> = level
                .cubes
                .as_ref()
                .unwrap()
                .iter()
                .map(|q| {
                    (
                        [q.center[0], q.center.get(1).copied().unwrap_or(0.0)],
                        q.half_side(),
                    )
                })
                .collect();
            let title = format!("Cantor level {} ({} cubes)", level.m, squares.len());
            self.out.write_bytes(
                "cubes.svg",
                scatter_svg(&title, &[], &squares, FIGURE_LIMIT).as_bytes(),
            )?;
        }
        if growth {
            let recs = potential_growth_check(
                &run,
                self.cfg.cantor.growth_samples,
                derive_seed(self.cfg.seed, SEED_TAG_GROWTH),
                &opts,
            )?;
            self.out.write_csv("growth.csv", &recs)?;
            let slack = GROWTH_SLACK * run.consts.c1;
            for g in &recs {
                self.put(format!("cantor.growth{}.max_gap", g.m), g.max_gap);
                self.put(
                    format!("cantor.growth{}.sup_potential", g.m),
                    g.sup_potential,
                );
                self.verdict(
                    format!("cantor.growth{}", g.m),
                    g.max_gap <= slack,
                    format!("largest gap {:.4e} against slack {:.4e}", g.max_gap, slack),
                );
            }
        }
        self.cantor = Some(run);
        Ok(())
    }

    fn hausdorff(&mut self) -> Result<()> {
        let run = self.cantor.as_ref().expect("cantor stage ran");
        let content = content_upper_profile(&run.certificates, &self.phi);
        let scales = level_scales(&run.certificates);
        let h = &self.cfg.hausdorff;
        let steps = (h.grid_max / h.grid_step).round() as usize;
        let grid: Vec<f64> = (0..=steps).map(|i| i as f64 * h.grid_step).collect();
        let fit = dim_upper_fit(&scales, &grid)?;
        let sums = log_dimension_sums(&scales, &grid);
        self.out.write_csv("content.csv", &content)?;
        let dims: Vec<DimensionRow> = scales
            .iter()
            .enumerate()
            .map(|(i, &(ln_count, ln_r))| DimensionRow {
                level: i + 1,
                ln_count,
                ln_r,
                slope_to_next: fit.slopes.get(i).copied(),
            })
            .collect();
        self.out.write_csv("dimension.csv", &dims)?;
        let log_rows: Vec<LogSumRow> = sums
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter().zip(&grid).map(move |(&s, &g)| LogSumRow {
                    level: i + 1,
                    gamma: g,
                    ln_sum: s,
                })
            })
            .collect();
        self.out.write_csv("log_sums.csv", &log_rows)?;
        let series = vec![
            (
                "ln content bound",
                content.iter().map(|c| (c.m as f64, c.ln_bound)).collect(),
            ),
            (
                "ln(1/m)",
                content
                    .iter()
                    .map(|c| (c.m as f64, -(c.m as f64).ln()))
                    .collect(),
            ),
        ];
        self.out.write_bytes(
            "content.svg",
            line_svg("content upper bounds", "step m", "log", &series).as_bytes(),
        )?;
        for c in &content {
            self.put(format!("hausdorff.content{}.ln_bound", c.m), c.ln_bound);
        }
        self.put("hausdorff.gamma", fit.gamma);
        self.put("hausdorff.saturated", fit.saturated);
        let detail = format!("gamma = {} on a grid up to {}", fit.gamma, h.grid_max);
        self.verdict("hausdorff.fit", !fit.saturated, detail);
        Ok(())
    }

    fn champagne(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let spec = cfg.champagne.as_ref().expect("validated");
        let domain = cfg.domain.as_ref().expect("validated").build();
        let (bc, limit) = match spec {
            ChampagneSpec::BoundaryCover { delta, depth, psi } => {
                let psi = *psi;
                let c = boundary_cover_config(
                    &domain,
                    &self.profile,
                    &self.phi,
                    *delta,
                    &move |_| psi,
                    *depth,
                    cfg.seed,
                )?;
                (c, Some(*delta))
            }
            ChampagneSpec::RieszShell { radii, delta_shell } => (
                riesz_shell_config(&self.profile, radii, *delta_shell, cfg.seed)?,
                None,
            ),
            ChampagneSpec::Kz {
                k_radius,
                k_prime_radius,
                eta,
                kappa,
                resolution,
            } => {
                let center = center_scale(&domain, 1.0).0;
                let k = Region::Ball {
                    center: center.clone(),
                    radius: *k_radius,
                };
                let kp = Region::Ball {
                    center,
                    radius: *k_prime_radius,
                };
                let mut opts = KzOptions::default();
                if let Some(r) = resolution {
                    opts.resolution = *r;
                }
                let rep = kz_config(
                    &k,
                    &kp,
                    &self.profile,
                    &self.phi,
                    *eta,
                    *kappa,
                    cfg.seed,
                    &opts,
                )?;
                let mut meta = val(&rep);
                if let Some(m) = meta.as_object_mut() {
                    m.remove("config");
                    m.remove("masses");
                }
                self.out.write_json("kz_report.json", &meta)?;
                for key in [
                    "gamma",
                    "c",
                    "big_c",
                    "a",
                    "tau",
                    "big_r",
                    "beta",
                    "cap_inversion_error",
                ] {
                    if let Some(v) = meta.get(key).cloned() {
                        self.put(format!("kz.{key}"), v);
                    }
                }
                (rep.config, Some(*eta))
            }
            ChampagneSpec::Listed { bubbles } => {
                let text = std::fs::read_to_string(bubbles)
                    .map_err(|e| CliError::Config(format!("{}: {e}", bubbles.display())))?;
                let list = BubbleConfig::bubbles_from_csv(&text)?;
                (
                    listed_config(&domain, &self.profile, &self.phi, list)?,
                    None,
                )
            }
        };
        self.out
            .write_bytes("bubbles.csv", bc.to_csv().as_bytes())?;
        self.out.write_csv("shells.csv", &bc.shells)?;
        let phi = budget_phi(cfg, &self.profile);
        let report = budget_check(&bc, &phi);
        self.out.write_json("budget.json", &report)?;
        self.put("champagne.bubbles", bc.len());
        self.put("champagne.budget", bc.budget);
        for s in &bc.shells {
            self.put(format!("champagne.shell{}.count", s.n), s.count);
            self.put(format!("champagne.shell{}.budget", s.n), s.budget);
            self.put(format!("champagne.shell{}.radius", s.n), s.radius);
        }
        if let Some(p) = &report.divergence_partial_sums {
            self.put("champagne.divergence_sum", p.last().copied());
        }
        let valid = bc.validate();
        self.verdict(
            "champagne.valid",
            valid.is_ok(),
            valid
                .err()
                .map_or("disjoint and contained".into(), |e| e.to_string()),
        );
        let agree =
            (report.sum - bc.budget).abs() <= 1e-12 * bc.budget.abs().max(f64::MIN_POSITIVE);
        self.verdict(
            "champagne.budget_recomputed",
            agree,
            format!("recorded {:e}, recomputed {:e}", bc.budget, report.sum),
        );
        if let Some(limit) = limit {
            self.verdict(
                "champagne.budget",
                bc.budget < limit,
                format!("budget {:e} against {limit}", bc.budget),
            );
        }
        let circles: Vec<([f64; 2], f64)> = bc
            .bubbles
            .iter()
            .map(|b| {
                (
                    [b.center[0], b.center.get(1).copied().unwrap_or(0.0)],
                    b.radius,
                )
            })
            .collect();
        let title = format!("{} bubbles", bc.len());
        self.out.write_bytes(
            "bubbles.svg",
            scatter_svg(&title, &circles, &[], FIGURE_LIMIT).as_bytes(),
        )?;
        self.target = Some(bc.obstacles()?);
        self.bubbles = Some(bc);
        Ok(())
    }

    fn pattern(&mut self) -> Result<()> {
        let run = self.cantor.as_ref().expect("cantor stage ran");
        let bc = self.bubbles.as_ref().expect("champagne stage ran");
        let n = bc.len() as u64;
        let level = run
            .levels
            .iter()
            .rev()
            .find(|l| {
                l.cubes
                    .as_ref()
                    .is_some_and(|c| c.len() as u64 * n <= PATTERN_SHAPE_LIMIT)
            })
            .ok_or_else(|| {
                unavoid::Error::Unsupported(format!(
                    "no Cantor level fits {n} bubbles under {PATTERN_SHAPE_LIMIT} shapes"
                ))
            })?;
        let base = PatternBase::from_level(level)?;
        let set = replace_with_pattern(bc, base)?;
        let contained = set.check_containment(bc);
        let sum = set.covering_sum(&self.phi);
        let target = set.obstacles()?;
        self.out.write_json("pattern_base.json", &set.base)?;
        self.put("pattern.level", level.m);
        self.put("pattern.shapes", target.len());
        self.put("pattern.covering_sum", sum);
        self.verdict(
            "pattern.containment",
            contained.is_ok(),
            contained
                .err()
                .map_or("every copy inside its bubble".into(), |e| e.to_string()),
        );
        self.target = Some(target);
        Ok(())
    }

    fn verify(&mut self) -> Result<()> {
        let v = self.cfg.verify.as_ref().expect("validated");
        let bc = self.bubbles.as_ref().expect("champagne stage ran");
        let target = self.target.as_ref().expect("target built");
        let seed = derive_seed(self.cfg.seed, SEED_TAG_VERIFY);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (center, scale) = center_scale(
            &bc.domain,
            bc.shells.iter().map(|s| s.level_radius).fold(1.0, f64::max),
        );
        let mut probes = Vec::new();
        for s in bc.shells.iter().take(v.shells) {
            let sphere = Ball::new(center.clone(), s.level_radius, true)?;
            probes.extend((0..v.probes_per_shell).map(|_| random_on_sphere(&sphere, &mut rng)));
        }
        let smallest = target
            .shapes
            .iter()
            .map(|s| match s {
                Shape::Ball { radius, .. } => *radius,
                Shape::Cube { half, .. } => *half,
                Shape::Annulus { inner, outer, .. } => 0.5 * (outer - inner),
            })
            .fold(f64::INFINITY, f64::min);
        let base = WalkParams::for_scale(scale, seed);
        let params = WalkParams {
            eps_shell: v.eps_shell.unwrap_or(if smallest.is_finite() {
                1e-3 * smallest
            } else {
                base.eps_shell
            }),
            escape_radius: v.escape_radius.unwrap_or(base.escape_radius),
            ..base
        };
        let kappa = v.kappa.unwrap_or(DEFAULT_KAPPA);
        let rep = verify_unavoidable(
            &bc.domain,
            target,
            &bc.profile,
            &probes,
            &v.free,
            kappa,
            &params,
            v.samples,
        )?;
        let rows: Vec<EstimateRow> = rep
            .probes
            .iter()
            .enumerate()
            .map(|(i, e)| EstimateRow {
                role: "probe".into(),
                index: i,
                estimate: e.clone(),
            })
            .chain(rep.free.iter().enumerate().map(|(i, e)| EstimateRow {
                role: "free".into(),
                index: i,
                estimate: e.clone(),
            }))
            .collect();
        self.out.write_jsonl("estimates.jsonl", &rows)?;
        let table: Vec<HittingRow> = rows
            .iter()
            .map(|r| {
                let e = &r.estimate;
                HittingRow {
                    role: r.role.clone(),
                    index: r.index,
                    x: e.x
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(" "),
                    p_hat: e.p_hat,
                    stderr: e.stderr,
                    lower: e.lower(),
                    n: e.n_samples,
                    seed: e.seed,
                    truncation_bias_bound: e.truncation_bias_bound,
                    ties: e.ties,
                    stalled: e.stalled,
                    valid: e.valid,
                    mean_steps: e.mean_steps,
                }
            })
            .collect();
        self.out.write_csv("hitting.csv", &table)?;
        let bars: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.estimate.p_hat, r.estimate.stderr))
            .collect();
        let title = format!(
            "hitting estimates, {} probes then {} free points",
            rep.probes.len(),
            rep.free.len()
        );
        self.out
            .write_bytes("hitting.svg", bars_svg(&title, &bars, kappa).as_bytes())?;
        for r in &rows {
            self.put(
                format!("verify.{}{}.p_hat", r.role, r.index),
                r.estimate.p_hat,
            );
            self.put(
                format!("verify.{}{}.stderr", r.role, r.index),
                r.estimate.stderr,
            );
        }
        self.put("verify.min_lower", rep.min_lower);
        self.put("verify.kappa", kappa);
        let detail = format!(
            "min p_hat - 3 stderr = {:.5} against kappa {kappa}",
            rep.min_lower
        );
        self.verdict("verify.kappa", rep.satisfied, detail);
        Ok(())
    }
}

/// Run the configured pipeline into `dir`. Stage failures are recorded, not
/// returned; errors are only for unusable configurations and I/O.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    let profile = cfg.profile.build()?;
    let phi = cfg.phi.build(&profile);
    let mut out = OutputDir::create(dir)?;
    out.write_json("config.json", cfg)?;
    let pipeline = cfg.pipeline();
    let record = RunRecord {
        schema_version: crate::config::SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        pipeline,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        started_unix: now_unix(),
        finished_unix: 0,
        stages: Vec::new(),
        artifacts: Vec::new(),
        verdicts: Vec::new(),
        summary: Summary::new(),
    };
    let mut r = Runner {
        cfg,
        out,
        record,
        profile,
        phi,
        cantor: None,
        bubbles: None,
        target: None,
    };
    let _ = match pipeline {
        Pipeline::Cantor => r.stage("cantor", |r| r.cantor(true)),
        Pipeline::Hausdorff => {
            r.stage("cantor", |r| r.cantor(false)) && r.stage("hausdorff", Runner::hausdorff)
        }
        Pipeline::Champagne => r.stage("champagne", Runner::champagne),
        Pipeline::Verify => {
            r.stage("champagne", Runner::champagne) && r.stage("verify", Runner::verify)
        }
        Pipeline::Full => {
            r.stage("champagne", Runner::champagne)
                && r.stage("cantor", |r| r.cantor(true))
                && r.stage("pattern", Runner::pattern)
                && r.stage("verify", Runner::verify)
        }
    };
    let verdicts = r.record.verdicts.clone();
    r.out.write_jsonl("verdicts.jsonl", &verdicts)?;
    r.record.artifacts = r.out.artifacts.clone();
    r.record.artifacts.sort_by(|a, b| a.name.cmp(&b.name));
    r.record.finished_unix = now_unix();
    let mut text = serde_json::to_string_pretty(&r.record)?;
    text.push('\n');
    std::fs::write(dir.join("record.json"), text)?;
    Ok(r.record)
}
