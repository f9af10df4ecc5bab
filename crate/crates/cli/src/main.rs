use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use unavoid_cli::record::StageStatus;
use unavoid_cli::{replay, run_pipeline, ExperimentConfig, Overrides, Pipeline, RunRecord};

#[derive(Parser)]
#[command(name = "unavoid", version, about = "Unavoidable-set experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Certified Cantor construction with the potential growth check.
    Cantor(RunArgs),
    /// Bubble configuration and its budget.
    Champagne(RunArgs),
    /// Bubble configuration followed by hitting estimates.
    Verify(RunArgs),
    /// Cantor construction with content bounds and the dimension fit.
    Hausdorff(RunArgs),
    /// Bubbles, Cantor set, pattern replacement and hitting estimates.
    Full(RunArgs),
    /// Recompute a stored run and compare it field by field.
    Replay {
        /// A record.json file or the directory holding it.
        record: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo samples per hitting estimate.
    #[arg(long)]
    samples: Option<usize>,
    /// Cantor depth, and boundary-cover depth where it applies.
    #[arg(long)]
    depth: Option<usize>,
}

fn print_record(rec: &RunRecord, dir: &std::path::Path) {
    for s in &rec.stages {
        match s.status {
            StageStatus::Ok => println!("stage {:<10} ok      {:8.2}s", s.name, s.elapsed_s),
            StageStatus::Failed => println!(
                "stage {:<10} FAILED  {}",
                s.name,
                s.error.as_deref().unwrap_or("")
            ),
        }
    }
    for v in &rec.verdicts {
        println!(
            "{} {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.name,
            v.detail
        );
    }
    println!("record: {}", dir.join("record.json").display());
}

fn run(verb: Pipeline, a: RunArgs) -> Result<ExitCode, unavoid_cli::CliError> {
    let o = Overrides {
        seed: a.seed,
        out: a.out,
        samples: a.samples,
        depth: a.depth,
    };
    let cfg = ExperimentConfig::load(&a.config)?.resolve(verb, &o)?;
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{verb:?}-{}", cfg.seed).to_lowercase()));
    let rec = run_pipeline(&cfg, &dir)?;
    print_record(&rec, &dir);
    Ok(if rec.failed_stage().is_some() {
        ExitCode::from(2)
    } else if rec.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Cantor(a) => run(Pipeline::Cantor, a),
        Cmd::Champagne(a) => run(Pipeline::Champagne, a),
        Cmd::Verify(a) => run(Pipeline::Verify, a),
        Cmd::Hausdorff(a) => run(Pipeline::Hausdorff, a),
        Cmd::Full(a) => run(Pipeline::Full, a),
        Cmd::Replay { record } => replay(&record).map(|r| {
            for m in &r.mismatches {
                println!(
                    "MISMATCH {}: stored {} recomputed {}",
                    m.field, m.stored, m.recomputed
                );
            }
            println!(
                "replay {} ({} checks)",
                if r.identical { "identical" } else { "differs" },
                r.checks.len()
            );
            if r.identical {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
