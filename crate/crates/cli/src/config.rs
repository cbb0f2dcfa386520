use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use drivetopics::eval::PredictiveConfig;
use drivetopics::hdp::{HdpHyper, SamplerConfig};
use drivetopics::hmm::{EmConfig, HmmHyper, InitConfig};
use drivetopics::trips::WorldConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::PipelineError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed. Stage seeds left unset derive from it.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSection,
    pub hmm: HmmSection,
    pub quantize: QuantizeSection,
    pub hdp: HdpSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Trip log to train on. When unset, `synth` output is used.
    pub trips: Option<PathBuf>,
    /// Trips scored by `predict-dest`; falls back to the synthetic held-out
    /// trips, then to the training trips.
    pub heldout_trips: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { trips: None, heldout_trips: None, out: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_trips: usize,
    pub n_heldout: usize,
    pub world: WorldConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { n_trips: 200, n_heldout: 30, world: WorldConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmSection {
    pub lambda_pos: f64,
    pub proximity_scale: f64,
    pub heading_scale: f64,
    pub colocation: f64,
    pub init_max_iter: usize,
    pub alpha: f64,
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub augmented: bool,
}

impl Default for HmmSection {
    fn default() -> Self {
        let init = InitConfig::default();
        let hyper = HmmHyper::<f64>::default();
        let em = EmConfig::default();
        Self {
            lambda_pos: init.lambda_pos,
            proximity_scale: init.proximity_scale,
            heading_scale: init.heading_scale,
            colocation: init.colocation,
            init_max_iter: init.max_iter,
            alpha: hyper.alpha,
            c: hyper.c,
            max_iter: em.max_iter,
            tol: em.tol,
            augmented: false,
        }
    }
}

impl HmmSection {
    /// Initialization always builds the plain model; augmentation happens
    /// after EM.
    pub fn init(&self) -> InitConfig {
        InitConfig {
            lambda_pos: self.lambda_pos,
            proximity_scale: self.proximity_scale,
            heading_scale: self.heading_scale,
            colocation: self.colocation,
            augmented: false,
            max_iter: self.init_max_iter,
        }
    }

    pub fn hyper(&self) -> HmmHyper<f64> {
        HmmHyper { alpha: self.alpha, c: self.c }
    }

    pub fn em(&self) -> EmConfig {
        EmConfig { max_iter: self.max_iter, tol: self.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeSection {
    /// Velocity penalty (m/s).
    pub lambda_v: f64,
    /// Time-of-day penalty (hours).
    pub lambda_t: f64,
    pub max_iter: usize,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        Self { lambda_v: 4.0, lambda_t: 2.0, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HdpSection {
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub iters: usize,
    pub k0: usize,
    pub seed: Option<u64>,
    pub split_merge: bool,
    pub min_split_age: u32,
    pub sub_sweeps: usize,
    pub sub_reset_age: u32,
    /// Score held-out words every this many iterations for the diagnostics
    /// trace; zero disables it.
    pub heldout_every: usize,
    pub top_words: usize,
}

impl Default for HdpSection {
    fn default() -> Self {
        let h = HdpHyper::<f64>::default();
        let s = SamplerConfig::default();
        Self {
            gamma: h.gamma,
            alpha: h.alpha,
            lambda: h.lambda,
            iters: s.iters,
            k0: s.k0,
            seed: None,
            split_merge: s.split_merge,
            min_split_age: s.min_split_age,
            sub_sweeps: s.sub_sweeps,
            sub_reset_age: s.sub_reset_age,
            heldout_every: 50,
            top_words: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ratio: f64,
    pub seed: Option<u64>,
    /// Number of posterior snapshots kept from the end of the chain.
    pub snapshots: usize,
    /// Iterations between kept snapshots.
    pub thin: usize,
    pub burn_in: usize,
    pub samples: usize,
    /// Symmetric Dirichlet prior of the per-document baseline.
    pub baseline_prior: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { ratio: 0.5, seed: None, snapshots: 10, thin: 10, burn_in: 50, samples: 50, baseline_prior: 0.5 }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> PipelineError {
    PipelineError::InvalidConfig { field: field.into(), reason: reason.into() }
}

fn positive(field: &str, x: f64) -> Result<(), PipelineError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {x}")))
    }
}

fn at_least_one(field: &str, x: usize) -> Result<(), PipelineError> {
    if x >= 1 {
        Ok(())
    } else {
        Err(invalid(field, "must be at least 1"))
    }
}

impl PipelineConfig {
    /// Reads a TOML file; missing keys take their defaults.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        at_least_one("synth.n_trips", self.synth.n_trips)?;
        let h = &self.hmm;
        positive("hmm.lambda_pos", h.lambda_pos)?;
        positive("hmm.proximity_scale", h.proximity_scale)?;
        positive("hmm.heading_scale", h.heading_scale)?;
        if !(h.colocation.is_finite() && h.colocation >= 0.0) {
            return Err(invalid("hmm.colocation", "must be non-negative"));
        }
        if !(h.alpha > 0.0 && h.alpha < 1.0) {
            return Err(invalid("hmm.alpha", format!("must lie in (0, 1), got {}", h.alpha)));
        }
        if !(h.c > 1.0 && h.c.is_finite()) {
            return Err(invalid("hmm.c", format!("must exceed 1, got {}", h.c)));
        }
        at_least_one("hmm.max_iter", h.max_iter)?;
        if !(h.tol >= 0.0 && h.tol.is_finite()) {
            return Err(invalid("hmm.tol", "must be non-negative"));
        }
        positive("quantize.lambda_v", self.quantize.lambda_v)?;
        positive("quantize.lambda_t", self.quantize.lambda_t)?;
        at_least_one("quantize.max_iter", self.quantize.max_iter)?;
        let d = &self.hdp;
        positive("hdp.gamma", d.gamma)?;
        positive("hdp.alpha", d.alpha)?;
        positive("hdp.lambda", d.lambda)?;
        at_least_one("hdp.iters", d.iters)?;
        at_least_one("hdp.k0", d.k0)?;
        at_least_one("hdp.sub_sweeps", d.sub_sweeps)?;
        let e = &self.eval;
        if !(e.ratio > 0.0 && e.ratio < 1.0) {
            return Err(invalid("eval.ratio", format!("must lie in (0, 1), got {}", e.ratio)));
        }
        at_least_one("eval.snapshots", e.snapshots)?;
        at_least_one("eval.thin", e.thin)?;
        if (e.snapshots - 1) * e.thin >= d.iters {
            return Err(invalid(
                "eval.snapshots",
                format!("{} snapshots every {} iterations do not fit in {} iterations", e.snapshots, e.thin, d.iters),
            ));
        }
        positive("eval.baseline_prior", e.baseline_prior)?;
        Ok(())
    }

    pub fn hdp_seed(&self) -> u64 {
        self.hdp.seed.unwrap_or(self.seed)
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or(self.seed)
    }

    pub fn hdp_hyper(&self) -> HdpHyper<f64> {
        HdpHyper { gamma: self.hdp.gamma, alpha: self.hdp.alpha, lambda: self.hdp.lambda }
    }

    pub fn sampler(&self) -> SamplerConfig {
        let d = &self.hdp;
        SamplerConfig {
            iters: d.iters,
            k0: d.k0,
            seed: self.hdp_seed(),
            split_merge: d.split_merge,
            min_split_age: d.min_split_age,
            sub_sweeps: d.sub_sweeps,
            sub_reset_age: d.sub_reset_age,
            fixed_k: false,
        }
    }

    pub fn predictive(&self) -> PredictiveConfig {
        PredictiveConfig { burn_in: self.eval.burn_in, samples: self.eval.samples, seed: self.eval_seed() }
    }

    /// Iterations (1-based) whose states are kept as snapshots.
    pub fn snapshot_iterations(&self) -> Vec<u64> {
        let last = self.hdp.iters as u64;
        let mut its: Vec<u64> = (0..self.eval.snapshots as u64).map(|i| last - i * self.eval.thin as u64).collect();
        its.reverse();
        its
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory so
    /// that identical settings hash identically wherever they write.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.out = PathBuf::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }
}
