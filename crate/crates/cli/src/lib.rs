//! Command-line driver for the trip-modeling pipeline.
//!
//! Settings come from a TOML file with one section per stage; flags override
//! file values. Every stage writes its artifacts into the output directory
//! and records their checksums in `manifest.json`.

pub mod commands;
pub mod config;
pub mod export;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{run_stage, Ctx, RouteQuery, Stage};
pub use config::PipelineConfig;
pub use manifest::Manifest;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing artifact {artifact}; run `drivetopics {command}` first")]
    MissingArtifact { artifact: String, command: String },
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
}

#[derive(Debug, Parser)]
#[command(name = "drivetopics", version, about = "Road-network HMMs, destination prediction and signal topic models from trip logs")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic road grid and sample trips from it.
    Synth {
        #[arg(long)]
        n_trips: Option<usize>,
        #[arg(long)]
        n_heldout: Option<usize>,
    },
    /// Fit the road-network HMM by hard EM.
    TrainHmm {
        /// Trip log (JSON Lines) to train on instead of the synthetic trips.
        #[arg(long)]
        trips: Option<PathBuf>,
        /// Condition road states on the trip's source.
        #[arg(long)]
        augmented: bool,
        #[arg(long)]
        lambda_pos: Option<f64>,
        #[arg(long)]
        max_iter: Option<usize>,
    },
    /// Most likely route between states; all source/destination pairs by default.
    PredictRoute {
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        to: Option<usize>,
    },
    /// Destination distributions along each scored trip.
    PredictDest {
        #[arg(long)]
        trips: Option<PathBuf>,
    },
    /// Build the velocity x time-of-day vocabulary.
    Quantize {
        #[arg(long)]
        lambda_v: Option<f64>,
        #[arg(long)]
        lambda_t: Option<f64>,
    },
    /// Collect one bag of signal words per road state.
    Corpus,
    /// Run the HDP sampler on the observed part of the corpus.
    TrainHdp {
        #[command(flatten)]
        hdp: HdpFlags,
    },
    /// Score held-out words against the baseline.
    Eval {
        #[arg(long)]
        snapshots: Option<usize>,
    },
    /// Write GeoJSON maps of roads and trips.
    Export,
    /// Every stage in order.
    All {
        #[command(flatten)]
        hdp: HdpFlags,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct HdpFlags {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub k0: Option<usize>,
    #[arg(long)]
    pub ratio: Option<f64>,
}

impl HdpFlags {
    fn apply(&self, c: &mut PipelineConfig) {
        if let Some(x) = self.iters {
            c.hdp.iters = x;
        }
        if let Some(x) = self.k0 {
            c.hdp.k0 = x;
        }
        if let Some(x) = self.ratio {
            c.eval.ratio = x;
        }
    }
}

impl Cli {
    /// File settings with global and subcommand flags applied on top.
    pub fn effective_config(&self) -> anyhow::Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.paths.out = o.clone();
        }
        match &self.command {
            Command::Synth { n_trips, n_heldout } => {
                if let Some(n) = n_trips {
                    c.synth.n_trips = *n;
                }
                if let Some(n) = n_heldout {
                    c.synth.n_heldout = *n;
                }
            }
            Command::TrainHmm { trips, augmented, lambda_pos, max_iter } => {
                if trips.is_some() {
                    c.paths.trips = trips.clone();
                }
                c.hmm.augmented |= augmented;
                if let Some(x) = lambda_pos {
                    c.hmm.lambda_pos = *x;
                }
                if let Some(x) = max_iter {
                    c.hmm.max_iter = *x;
                }
            }
            Command::PredictDest { trips } => {
                if trips.is_some() {
                    c.paths.heldout_trips = trips.clone();
                }
            }
            Command::Quantize { lambda_v, lambda_t } => {
                if let Some(x) = lambda_v {
                    c.quantize.lambda_v = *x;
                }
                if let Some(x) = lambda_t {
                    c.quantize.lambda_t = *x;
                }
            }
            Command::TrainHdp { hdp } | Command::All { hdp } => hdp.apply(&mut c),
            Command::Eval { snapshots } => {
                if let Some(x) = snapshots {
                    c.eval.snapshots = *x;
                }
            }
            Command::PredictRoute { .. } | Command::Corpus | Command::Export => {}
        }
        Ok(c)
    }

    fn stages(&self) -> (Vec<Stage>, RouteQuery) {
        let one = |s| (vec![s], RouteQuery::default());
        match &self.command {
            Command::Synth { .. } => one(Stage::Synth),
            Command::TrainHmm { .. } => one(Stage::TrainHmm),
            Command::PredictRoute { from, to } => (vec![Stage::PredictRoute], RouteQuery { from: *from, to: *to }),
            Command::PredictDest { .. } => one(Stage::PredictDest),
            Command::Quantize { .. } => one(Stage::Quantize),
            Command::Corpus => one(Stage::Corpus),
            Command::TrainHdp { .. } => one(Stage::TrainHdp),
            Command::Eval { .. } => one(Stage::Eval),
            Command::Export => one(Stage::Export),
            Command::All { .. } => {
                let mut s = Stage::ALL.to_vec();
                // real trip logs have no synthetic stage to run
                if self.config.is_some() && self.effective_config().map(|c| c.paths.trips.is_some()).unwrap_or(false) {
                    s.retain(|&x| x != Stage::Synth);
                }
                (s, RouteQuery::default())
            }
        }
    }
}

/// Runs the parsed command. The thread count only takes effect the first
/// time it is set in a process.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(PipelineError::InvalidConfig { field: "--threads".into(), reason: "must be at least 1".into() }.into());
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already configured");
        }
    }
    let config = cli.effective_config()?;
    let ctx = Ctx { config: &config, out: config.paths.out.clone() };
    let (stages, route) = cli.stages();
    for s in stages {
        run_stage(&ctx, s, route)?;
    }
    Ok(())
}
