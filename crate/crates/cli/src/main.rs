use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sns_core::config::ExperimentConfig;
use sns_core::diagnostics::{lyapunov_decay_experiment, mixing_diagnostic, smooth_profile, InvariantRun};
use sns_core::run::{load_invariant, load_state, run_trajectory, save_invariant, save_state, CheckpointPlan, Provenance, TerminalStatus};
use sns_core::solver::{AnsatzState, CheckpointMeta, PipelineState};
use sns_core::suites::{run_suite, write_suite_csv, Suite};
use sns_core::Error;

#[derive(Parser)]
#[command(name = "sns", version, about = "Stochastic Navier-Stokes experiments on the 2D torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[ensemble] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `[output] dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for ensembles; overrides `[ensemble] threads`.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One trajectory of the decomposition with per-step report and checkpoints.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Verification suites; exits 1 if any assertion fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite to run (repeatable). Defaults to `[verify] suites`, else all.
        #[arg(long = "suite")]
        suites: Vec<String>,
    },
    /// Long sharp-Galerkin run: per-mode variance and tail tables.
    Invariant {
        #[command(flatten)]
        common: Common,
        /// Stem of a saved invariant run (`<stem>.snsc` + `<stem>.json`) to extend.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decay of the Lyapunov functional from several initial norms.
    Decay {
        #[command(flatten)]
        common: Common,
    },
    /// Distance between two solutions driven by the same noise.
    Mixing {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Assertion,
    Usage(String),
    BlowUp(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::BlowUp { .. } => Failure::BlowUp(e.to_string()),
            e => Failure::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate { common, resume } => setup(&common).and_then(|c| simulate(&c, resume.as_deref())),
        Command::Verify { common, suites } => setup(&common).and_then(|c| verify(&c, &suites)),
        Command::Invariant { common, resume } => setup(&common).and_then(|c| invariant(&c, resume.as_deref())),
        Command::Decay { common } => setup(&common).and_then(|c| decay(&c)),
        Command::Mixing { common } => setup(&common).and_then(|c| mixing(&c)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion) => {
            eprintln!("sns: assertion failed");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("sns: error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::BlowUp(m)) => {
            eprintln!("sns: numerical blow-up: {m}");
            ExitCode::from(3)
        }
    }
}

/// Loads the config, applies command-line overrides, sizes the thread pool
/// and creates the output directory.
fn setup(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.ensemble.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(t) = c.threads {
        cfg.ensemble.threads = t;
    }
    cfg.validate()?;
    if cfg.ensemble.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.ensemble.threads)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, v: &serde_json::Value) -> Outcome {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::Usage(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// CSV writer preceded by a `# config_hash:` line.
fn csv_out(dir: &Path, name: &str, hash: &str) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    let mut w = create(dir, name)?;
    writeln!(w, "# config_hash: {hash}")?;
    Ok(csv::Writer::from_writer(w))
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn verdict(pass: bool) -> Outcome {
    if pass {
        Ok(())
    } else {
        Err(Failure::Assertion)
    }
}

fn simulate(cfg: &ExperimentConfig, resume: Option<&Path>) -> Outcome {
    let out = &cfg.output.dir;
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir)?;
    let start = match resume {
        Some(p) => match load_state(p)? {
            (PipelineState::Ansatz(s), meta) => {
                if meta.key.seed != cfg.ensemble.seed || meta.base_h != cfg.time.h {
                    return Err(Failure::Usage("checkpoint was written with a different seed or time step".into()));
                }
                Some(s)
            }
            _ => return Err(Failure::Usage("checkpoint does not hold a decomposition state".into())),
        },
        None => None,
    };
    let mut written = Vec::new();
    let mut sink = |s: &AnsatzState, meta: &CheckpointMeta| -> sns_core::Result<()> {
        let path = ck_dir.join(format!("ckpt_{:08}.snsc", s.step));
        save_state(&path, &PipelineState::Ansatz(s.clone()), meta)?;
        written.push(path);
        Ok(())
    };
    let every = if cfg.time.checkpoint_every > 0.0 {
        ((cfg.time.checkpoint_every / cfg.time.h).round() as u64).max(1)
    } else {
        0
    };
    let (report, _) = run_trajectory(
        cfg,
        start,
        Some(CheckpointPlan {
            every_steps: every,
            sink: &mut sink,
        }),
    )?;
    report.write_csv(create(out, "report.csv")?)?;
    let mut summary = report.summary();
    summary["checkpoints"] = json!(written);
    write_json(out, "summary.json", &summary)?;
    let last = report.rows.last().expect("initial row");
    println!(
        "t = {:.4}  |w| = {:.4e}  |w^L| = {:.4e}  K = {:.3}  stop = {}",
        last.t,
        last.w_norm,
        last.wl_norm,
        last.k,
        report.stop.map_or("none".to_string(), |e| format!("{:?} at t = {:.4}", e.cause, e.t))
    );
    match report.status {
        TerminalStatus::Completed => Ok(()),
        TerminalStatus::BlowUp { t, detail } => Err(Failure::BlowUp(format!("t = {t}: {detail}"))),
    }
}

fn verify(cfg: &ExperimentConfig, named: &[String]) -> Outcome {
    let names: Vec<String> = if !named.is_empty() {
        named.to_vec()
    } else {
        cfg.verify.suites.clone()
    };
    let suites: Vec<Suite> = if names.is_empty() {
        Suite::ALL.to_vec()
    } else {
        names
            .iter()
            .map(|n| Suite::parse(n).ok_or_else(|| Failure::Usage(format!("unknown suite {n:?}"))))
            .collect::<Result<_, _>>()?
    };
    let sc = cfg.suite_config();
    let mut reports = Vec::new();
    for s in suites {
        let r = run_suite(s, &sc)?;
        println!("{:18} {}", s.name(), if r.pass { "PASS" } else { "FAIL" });
        reports.push(r);
    }
    let hash = cfg.hash();
    let mut w = create(&cfg.output.dir, "suites.csv")?;
    writeln!(w, "# config_hash: {hash}")?;
    write_suite_csv(&mut w, &reports)?;
    w.flush()?;
    let pass = reports.iter().all(|r| r.pass);
    let verdicts: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "suite": r.suite,
                "pass": r.pass,
                "notes": r.notes,
                "failed_rows": r.rows.iter().filter(|x| !x.pass).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(
        &cfg.output.dir,
        "verdicts.json",
        &json!({ "provenance": Provenance::new(cfg), "pass": pass, "suites": verdicts }),
    )?;
    verdict(pass)
}

fn invariant(cfg: &ExperimentConfig, resume: Option<&Path>) -> Outcome {
    let icfg = cfg.invariant_config()?;
    let grid = cfg.grid_checked()?;
    let mut run = InvariantRun::new(icfg, grid)?;
    if let Some(stem) = resume {
        load_invariant(stem, &mut run)?;
    }
    run.advance(cfg.time.t_end)?;
    let hash = cfg.hash();
    let out = &cfg.output.dir;
    save_invariant(&out.join("invariant_state"), &run, &hash)?;
    let rep = run.report()?;
    let mut w = csv_out(out, "variance.csv", &hash)?;
    w.write_record(["k1", "k2", "estimate", "stderr", "theory", "z-score"]).map_err(csv_err)?;
    for m in &rep.table {
        w.serialize((m.k1, m.k2, m.estimate, m.stderr, m.theory, m.z)).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv_out(out, "tail.csv", &hash)?;
    for p in &rep.tail {
        w.serialize(p).map_err(csv_err)?;
    }
    w.flush()?;
    write_json(
        out,
        "invariant.json",
        &json!({
            "provenance": Provenance::new(cfg),
            "t": run.state.t,
            "batches": rep.batches,
            "fraction_within_3": rep.fraction_within_3,
            "stretched_exponent": rep.stretched_exponent,
            "pass": rep.pass,
        }),
    )?;
    println!(
        "t = {:.1}  batches = {}  |z| <= 3 for {:.1}% of {} modes",
        run.state.t,
        rep.batches,
        100.0 * rep.fraction_within_3,
        rep.table.len()
    );
    verdict(rep.pass)
}

fn decay(cfg: &ExperimentConfig) -> Outcome {
    let dc = cfg.decay_config()?;
    let res = lyapunov_decay_experiment(&dc, cfg.grid_checked()?)?;
    let hash = cfg.hash();
    let mut w = csv_out(&cfg.output.dir, "decay.csv", &hash)?;
    w.write_record(["t", "lambda", "mean", "se"]).map_err(csv_err)?;
    for c in &res.curves {
        for (i, &t) in res.times.iter().enumerate() {
            w.serialize((t, c.lambda, c.mean[i], c.se[i])).map_err(csv_err)?;
        }
    }
    w.flush()?;
    let mut v = serde_json::to_value(&res).map_err(|e| Failure::Usage(e.to_string()))?;
    v["provenance"] = json!(Provenance::new(cfg));
    write_json(&cfg.output.dir, "decay.json", &v)?;
    println!(
        "plateau = {:.4e}  common = {}  gamma_hat = {:?}",
        res.plateau, res.common_plateau, res.gamma_hat
    );
    verdict(res.pass)
}

fn mixing(cfg: &ExperimentConfig) -> Outcome {
    let (mc, a, b) = cfg.mixing_config()?;
    let g = cfg.grid_checked()?;
    let p = smooth_profile(g);
    let res = mixing_diagnostic(&mc, &p.scale(a), &p.scale(b))?;
    let hash = cfg.hash();
    let mut w = csv_out(&cfg.output.dir, "mixing.csv", &hash)?;
    w.write_record(["t", "median", "q10", "q90", "energy_w1"]).map_err(csv_err)?;
    for i in 0..res.times.len() {
        w.serialize((res.times[i], res.median[i], res.q10[i], res.q90[i], res.energy_w1[i]))
            .map_err(csv_err)?;
    }
    w.flush()?;
    let mut v = serde_json::to_value(&res).map_err(|e| Failure::Usage(e.to_string()))?;
    v["provenance"] = json!(Provenance::new(cfg));
    write_json(&cfg.output.dir, "mixing.json", &v)?;
    println!("spearman = {:.3}  final median = {:.4e}", res.spearman, res.median.last().copied().unwrap_or(0.0));
    verdict(res.pass)
}
