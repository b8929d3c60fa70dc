//! Experiment configuration: a TOML file with sections `[grid]`, `[noise]`,
//! `[time]`, `[ensemble]`, `[initial]`, `[output]` and optional
//! per-command sections.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{DecayConfig, InvariantConfig, MixingConfig};
use crate::error::{Error, Result};
use crate::grid::TorusGrid;
use crate::noise::NoiseSpectrum;
use crate::suites::{Suite, SuiteConfig};

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    0.01
}

/// How the noise coefficients `phi_k` are given. Values are real, so the
/// spectrum is conjugate-symmetric by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiSpec {
    /// `phi_k = value` on every retained mode.
    Constant { value: f64 },
    /// Listed modes `[k1, k2, value]`; `k` and `-k` may both appear as long
    /// as they agree. Unlisted modes get `default`.
    Table {
        modes: Vec<(i64, i64, f64)>,
        #[serde(default)]
        default: f64,
    },
    /// `amplitude (1 + |k|)^{-decay}` for `k_min <= |k| <= k_max`, zero
    /// elsewhere.
    Band {
        amplitude: f64,
        k_min: f64,
        k_max: f64,
        #[serde(default)]
        decay: f64,
    },
}

impl PhiSpec {
    pub fn spectrum(&self, grid: TorusGrid, alpha0: f64, split_radius: f64) -> Result<NoiseSpectrum> {
        let f: Box<dyn Fn((i64, i64)) -> f64> = match self {
            PhiSpec::Constant { value } => {
                let v = *value;
                Box::new(move |_| v)
            }
            PhiSpec::Table { modes, default } => {
                let mut map = std::collections::HashMap::new();
                for &(k1, k2, v) in modes {
                    for key in [(k1, k2), (-k1, -k2)] {
                        if let Some(old) = map.insert(key, v) {
                            if old != v {
                                return Err(cfg_err(format!("phi table disagrees at {key:?}")));
                            }
                        }
                    }
                }
                let d = *default;
                Box::new(move |k| *map.get(&k).unwrap_or(&d))
            }
            PhiSpec::Band {
                amplitude,
                k_min,
                k_max,
                decay,
            } => {
                let (a, lo, hi, s) = (*amplitude, *k_min, *k_max, *decay);
                if !(lo <= hi) {
                    return Err(cfg_err("band needs k_min <= k_max"));
                }
                Box::new(move |(k1, k2)| {
                    let r = ((k1 * k1 + k2 * k2) as f64).sqrt();
                    if r >= lo && r <= hi {
                        a * (1.0 + r).powf(-s)
                    } else {
                        0.0
                    }
                })
            }
        };
        NoiseSpectrum::from_fn(grid, |k| Complex64::new(f(k), 0.0), Some(alpha0), split_radius)
            .map_err(|e| cfg_err(format!("noise: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub alpha0: f64,
    pub split_radius: f64,
    pub phi: PhiSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub h: f64,
    pub t_end: f64,
    /// Time between checkpoints; 0 writes only the final state.
    #[serde(default)]
    pub checkpoint_every: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "one")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// 0 lets the thread pool decide.
    #[serde(default)]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            paths: 1,
            seed: 0,
            threads: 0,
        }
    }
}

/// Initial data `u = u_s + u_r`: `u_s` is a smooth low-mode profile of the
/// given norm, `u_r` a stationary sample of the linear equation scaled by
/// `rough_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub smooth_norm: f64,
    #[serde(default)]
    pub rough_scale: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            smooth_norm: 0.0,
            rough_scale: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantSection {
    pub sharp_n: i64,
    #[serde(default = "one_f")]
    pub amplitude: f64,
    pub burn_in: f64,
    pub batch_time: f64,
    #[serde(default = "yes")]
    pub nonlinear: bool,
    #[serde(default)]
    pub v_every: f64,
}

fn one_f() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub lambdas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub sample_times: usize,
}

fn default_samples() -> usize {
    41
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingSection {
    pub norm_a: f64,
    pub norm_b: f64,
    #[serde(default = "default_samples")]
    pub sample_times: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Suites to run when none is named on the command line; empty means all.
    #[serde(default)]
    pub suites: Vec<String>,
    /// Overrides of the per-suite grid size and path count.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub paths: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub noise: NoiseSection,
    pub time: TimeSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub invariant: Option<InvariantSection>,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub mixing: Option<MixingSection>,
    #[serde(default)]
    pub verify: VerifySection,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg_err(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_checked()?;
        positive("grid.kappa", self.grid.kappa)?;
        positive("noise.alpha0", self.noise.alpha0)?;
        if !(self.noise.split_radius >= 0.0) {
            return Err(cfg_err("noise.split_radius must be non-negative"));
        }
        positive("time.h", self.time.h)?;
        positive("time.t_end", self.time.t_end)?;
        if !(self.time.checkpoint_every >= 0.0) {
            return Err(cfg_err("time.checkpoint_every must be non-negative"));
        }
        if self.ensemble.paths == 0 {
            return Err(cfg_err("ensemble.paths must be at least 1"));
        }
        if !(self.initial.smooth_norm >= 0.0 && self.initial.rough_scale >= 0.0) {
            return Err(cfg_err("initial norms must be non-negative"));
        }
        if let Some(inv) = &self.invariant {
            positive("invariant.amplitude", inv.amplitude)?;
            positive("invariant.batch_time", inv.batch_time)?;
            if !(inv.burn_in >= 0.0 && inv.burn_in < self.time.t_end) {
                return Err(cfg_err("invariant.burn_in must lie in [0, t_end)"));
            }
        }
        if let Some(dec) = &self.decay {
            if dec.lambdas.is_empty() || dec.lambdas.iter().any(|&l| !(l >= 0.0)) {
                return Err(cfg_err("decay.lambdas must be a non-empty list of norms"));
            }
        }
        for s in &self.verify.suites {
            if Suite::parse(s).is_none() {
                return Err(cfg_err(format!("unknown suite {s:?}")));
            }
        }
        self.spectrum()?;
        Ok(())
    }

    pub fn grid_checked(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.grid.n).map_err(|e| cfg_err(format!("grid.n = {}: {e}", self.grid.n)))
    }

    pub fn spectrum(&self) -> Result<NoiseSpectrum> {
        self.noise
            .phi
            .spectrum(self.grid_checked()?, self.noise.alpha0, self.noise.split_radius)
    }

    /// SHA-256 of the canonical JSON form, hex encoded. Formatting and key
    /// order of the source file do not matter, and neither do the output
    /// directory and thread count, which cannot change any result.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        c.ensemble.threads = 0;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig {
            n: self.verify.n,
            paths: self.verify.paths,
            seed: self.ensemble.seed,
            alpha0: Some(self.noise.alpha0),
            kappa: Some(self.grid.kappa),
        }
    }

    pub fn invariant_config(&self) -> Result<InvariantConfig> {
        let inv = self.invariant.as_ref().ok_or_else(|| cfg_err("missing [invariant] section"))?;
        Ok(InvariantConfig {
            sharp_n: inv.sharp_n,
            amplitude: inv.amplitude,
            h: self.time.h,
            t_end: self.time.t_end,
            burn_in: inv.burn_in,
            batch_time: inv.batch_time,
            nonlinear: inv.nonlinear,
            seed: self.ensemble.seed,
            stream: 0,
            v_every: inv.v_every,
            kappa: self.grid.kappa,
        })
    }

    pub fn decay_config(&self) -> Result<DecayConfig> {
        let dec = self.decay.as_ref().ok_or_else(|| cfg_err("missing [decay] section"))?;
        Ok(DecayConfig {
            alpha0: self.noise.alpha0,
            kappa: self.grid.kappa,
            split_radius: self.noise.split_radius,
            h: self.time.h,
            t_end: self.time.t_end,
            sample_times: dec.sample_times,
            paths: self.ensemble.paths,
            lambdas: dec.lambdas.clone(),
            seed: self.ensemble.seed,
        })
    }

    pub fn mixing_config(&self) -> Result<(MixingConfig, f64, f64)> {
        let mix = self.mixing.as_ref().ok_or_else(|| cfg_err("missing [mixing] section"))?;
        Ok((
            MixingConfig {
                alpha0: self.noise.alpha0,
                split_radius: self.noise.split_radius,
                h: self.time.h,
                t_end: self.time.t_end,
                sample_times: mix.sample_times,
                paths: self.ensemble.paths,
                seed: self.ensemble.seed,
            },
            mix.norm_a,
            mix.norm_b,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
[grid]
n = 32

[noise]
alpha0 = 0.05
split_radius = 2.0
phi = { kind = "constant", value = 0.05 }

[time]
h = 1e-3
t_end = 0.05
"#;

    #[test]
    fn parse_and_defaults() {
        let c = ExperimentConfig::from_toml(SMOKE).unwrap();
        assert_eq!(c.grid.kappa, 0.01);
        assert_eq!(c.ensemble.paths, 1);
        assert_eq!(c.output.dir, PathBuf::from("out"));
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn odd_grid_rejected() {
        let e = ExperimentConfig::from_toml(&SMOKE.replace("n = 32", "n = 33")).unwrap_err();
        assert!(e.to_string().contains("grid.n = 33"), "{e}");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ExperimentConfig::from_toml(&format!("{SMOKE}\n[output]\ndirr = \"x\"\n")).is_err());
    }

    #[test]
    fn alpha0_must_dominate_phi() {
        let t = SMOKE.replace("value = 0.05", "value = 0.5");
        assert!(ExperimentConfig::from_toml(&t).is_err());
    }

    #[test]
    fn table_and_band_specs() {
        let g = TorusGrid::new(16).unwrap();
        let t = PhiSpec::Table {
            modes: vec![(1, 0, 0.3), (-1, 0, 0.3)],
            default: 0.0,
        };
        let sp = t.spectrum(g, 0.3, 0.0).unwrap();
        assert_eq!(sp.phi(g.index_of(-1, 0).unwrap()).re, 0.3);
        assert_eq!(sp.phi(g.index_of(0, 1).unwrap()).re, 0.0);
        let bad = PhiSpec::Table {
            modes: vec![(1, 0, 0.3), (-1, 0, 0.2)],
            default: 0.0,
        };
        assert!(bad.spectrum(g, 0.3, 0.0).is_err());
        let b = PhiSpec::Band {
            amplitude: 1.0,
            k_min: 2.0,
            k_max: 3.0,
            decay: 1.0,
        };
        let sp = b.spectrum(g, 1.0, 0.0).unwrap();
        assert_eq!(sp.phi(g.index_of(1, 0).unwrap()).re, 0.0);
        assert!((sp.phi(g.index_of(2, 0).unwrap()).re - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hash_changes_with_seed() {
        let a = ExperimentConfig::from_toml(SMOKE).unwrap();
        let mut b = a.clone();
        b.ensemble.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
