//! Single trajectories of the decomposition with per-step reporting, and
//! persistence of long runs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::diagnostics::{lyapunov_v, smooth_profile, InvariantRun, LyapunovConfig, ModeAccumulator, StopEvent, StopMonitor, StopThresholds};
use crate::error::{Error, Result};
use crate::lp::{DyadicSystem, NORM_OVERSAMPLE};
use crate::noise::{sample_stochastic_convolution, NoisePart, NoiseSource};
use crate::rng::StreamKey;
use crate::solver::{read_checkpoint, write_checkpoint, Ansatz, AnsatzState, CheckpointMeta, InitialSplit, LedgerRow, PipelineState, StepContext};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Stream index of the rough initial datum; trajectories use stream 0.
pub const INITIAL_STREAM: u32 = u32::MAX;

/// One reported time of a trajectory. Ledger entries refer to the step
/// ending at `t` and are zero on the initial row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: f64,
    pub w_norm: f64,
    pub wl_norm: f64,
    pub grad_wl_norm: f64,
    pub x_holder: f64,
    pub y_sup: f64,
    pub k: f64,
    pub saturated: bool,
    pub dissipation: f64,
    pub remainder: f64,
    pub band_pairing: f64,
    pub cross_pairing: f64,
    pub martingale: f64,
    pub quadratic_variation: f64,
    pub ito_expected: f64,
    pub realized: f64,
    pub residual: f64,
}

impl ReportRow {
    fn new(d: &DyadicSystem, s: &AnsatzState, kappa: f64, ledger: Option<&LedgerRow>) -> Result<Self> {
        let l = ledger.cloned().unwrap_or_default();
        Ok(Self {
            t: s.t,
            w_norm: s.w(d).l2_norm(),
            wl_norm: s.w_l.l2_norm(),
            grad_wl_norm: s.w_l.grad_norm_sq().sqrt(),
            x_holder: d.holder_norm(&s.x.x, -kappa)?,
            y_sup: s.y.to_physical(NORM_OVERSAMPLE)?.lp_norm(f64::INFINITY),
            k: s.k,
            saturated: s.k_saturated,
            dissipation: l.dissipation,
            remainder: l.remainder,
            band_pairing: l.band_pairing,
            cross_pairing: l.cross_pairing,
            martingale: l.martingale,
            quadratic_variation: l.quadratic_variation,
            ito_expected: l.ito_expected,
            realized: l.realized,
            residual: l.residual,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TerminalStatus {
    Completed,
    BlowUp { t: f64, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.ensemble.seed,
            code_version: CODE_VERSION.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    pub status: TerminalStatus,
    pub stop: Option<StopEvent>,
    pub lambda: f64,
    pub v0: f64,
    pub saturated_steps: u64,
    pub provenance: Provenance,
}

impl RunReport {
    /// CSV with a leading `# config_hash: ...` comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# config_hash: {}", self.provenance.config_hash)?;
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// The report without its rows, for JSON summaries.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "status": self.status,
            "stop": self.stop,
            "lambda": self.lambda,
            "v0": self.v0,
            "rows": self.rows.len(),
            "saturated_steps": self.saturated_steps,
            "final": self.rows.last(),
            "provenance": self.provenance,
        })
    }
}

/// Reads a CSV written with a `#` comment header.
pub fn read_report_csv<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Initial data described by the `[initial]` section.
pub fn initial_split(cfg: &ExperimentConfig, d: &DyadicSystem) -> Result<InitialSplit> {
    let g = d.grid();
    let u_s = smooth_profile(g).scale(cfg.initial.smooth_norm);
    let u_r = if cfg.initial.rough_scale > 0.0 {
        let key = StreamKey::new(cfg.ensemble.seed, INITIAL_STREAM);
        sample_stochastic_convolution(&cfg.spectrum()?, key, f64::INFINITY, NoisePart::Full).scale(cfg.initial.rough_scale)
    } else {
        crate::field::SpectralField::zeros(g)
    };
    InitialSplit::new(u_s, u_r, 2.0 * cfg.noise.alpha0, d, cfg.grid.kappa).map_err(|e| Error::Config(format!("initial data: {e}")))
}

/// Where and how often states are written.
pub struct CheckpointPlan<'a> {
    pub every_steps: u64,
    pub sink: &'a mut dyn FnMut(&AnsatzState, &CheckpointMeta) -> Result<()>,
}

/// Advances the decomposition from the configured initial data (or from
/// `resume`) to `t_end`, observing the stopping time every step. A blow-up
/// ends the run and is reported in the status, not as an error.
pub fn run_trajectory(
    cfg: &ExperimentConfig,
    resume: Option<AnsatzState>,
    mut plan: Option<CheckpointPlan<'_>>,
) -> Result<(RunReport, AnsatzState)> {
    let g = cfg.grid_checked()?;
    let d = DyadicSystem::new(g);
    let key = StreamKey::new(cfg.ensemble.seed, 0);
    let src = NoiseSource::new(cfg.spectrum()?, key, cfg.time.h)?;
    let ansatz = Ansatz::new(StepContext::new(&d, &src, 1)?);
    let split = initial_split(cfg, &d)?;
    let v0 = lyapunov_v(&d, &split.u(), &LyapunovConfig::new(cfg.noise.alpha0, cfg.grid.kappa, g)?)?.value;
    let mut monitor = StopMonitor::new(StopThresholds::new(v0, cfg.noise.alpha0), cfg.grid.kappa);
    let mut s = match resume {
        Some(s) if s.x.x.grid() != g => return Err(Error::Config("checkpoint grid differs from config".into())),
        Some(s) => s,
        None => AnsatzState::new(&split, &d),
    };
    let meta = CheckpointMeta {
        key,
        base_h: cfg.time.h,
        m: 1,
    };
    let steps = (cfg.time.t_end / cfg.time.h).round() as u64;
    let mut rows = vec![ReportRow::new(&d, &s, cfg.grid.kappa, None)?];
    monitor.observe(s.t, s.step, obs_of(&rows[0]));
    let mut status = TerminalStatus::Completed;
    let mut saturated_steps = 0;
    while s.step < steps {
        let ledger = match ansatz.step(&mut s, true) {
            Ok(l) => l,
            Err(Error::BlowUp { t, field, detail }) => {
                status = TerminalStatus::BlowUp {
                    t,
                    detail: format!("{field}: {detail}"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let row = ReportRow::new(&d, &s, cfg.grid.kappa, ledger.as_ref())?;
        saturated_steps += row.saturated as u64;
        monitor.observe(s.t, s.step, obs_of(&row));
        rows.push(row);
        if let Some(p) = plan.as_mut() {
            if p.every_steps > 0 && s.step % p.every_steps == 0 && s.step < steps {
                (p.sink)(&s, &meta)?;
            }
        }
    }
    if let Some(p) = plan.as_mut() {
        (p.sink)(&s, &meta)?;
    }
    Ok((
        RunReport {
            rows,
            status,
            stop: monitor.event,
            lambda: s.lambda,
            v0,
            saturated_steps,
            provenance: Provenance::new(cfg),
        },
        s,
    ))
}

fn obs_of(r: &ReportRow) -> crate::diagnostics::StopObservation {
    crate::diagnostics::StopObservation {
        w: r.w_norm,
        x: r.x_holder,
        y: r.y_sup,
    }
}

pub fn save_state(path: &Path, state: &PipelineState, meta: &CheckpointMeta) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut f, state, meta)?;
    f.flush()?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<(PipelineState, CheckpointMeta)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// Sidecar of an invariant-measure checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct InvariantSidecar {
    config_hash: String,
    accumulator: ModeAccumulator,
}

/// Writes `<stem>.snsc` (Galerkin state) and `<stem>.json` (statistics).
pub fn save_invariant(stem: &Path, run: &InvariantRun, config_hash: &str) -> Result<(PathBuf, PathBuf)> {
    let ck = stem.with_extension("snsc");
    let js = stem.with_extension("json");
    let meta = CheckpointMeta {
        key: StreamKey::new(run.cfg.seed, run.cfg.stream),
        base_h: run.cfg.h,
        m: 1,
    };
    save_state(&ck, &PipelineState::Galerkin(run.state.clone()), &meta)?;
    let side = InvariantSidecar {
        config_hash: config_hash.to_string(),
        accumulator: run.acc.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&js)?), &side)?;
    Ok((ck, js))
}

/// Restores a run saved by [`save_invariant`] into `run`, which must have
/// been built from a config with the same noise and time step.
pub fn load_invariant(stem: &Path, run: &mut InvariantRun) -> Result<()> {
    let (state, meta) = load_state(&stem.with_extension("snsc"))?;
    let PipelineState::Galerkin(st) = state else {
        return Err(Error::Format("not a Galerkin checkpoint".into()));
    };
    if meta.key != StreamKey::new(run.cfg.seed, run.cfg.stream) || meta.base_h != run.cfg.h {
        return Err(Error::Config("checkpoint was written with a different seed or time step".into()));
    }
    if st.u.grid() != run.grid {
        return Err(Error::Config("checkpoint grid differs from config".into()));
    }
    let side: InvariantSidecar = serde_json::from_reader(BufReader::new(File::open(stem.with_extension("json"))?))
        .map_err(|e| Error::Format(format!("invariant statistics: {e}")))?;
    if side.accumulator.modes != run.acc.modes || side.accumulator.batch_len != run.acc.batch_len {
        return Err(Error::Format("statistics do not match the configured run".into()));
    }
    run.state = st;
    run.acc = side.accumulator;
    Ok(())
}
