//! One function per subcommand. Each reads its inputs from the output
//! directory, writes its artifacts there and records them in the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use drivetopics::eval::{
    baseline_predictive, empirical_marginals, hdp_predictive, heldout_split, ml_marginals, scores_csv, summarize, HeldoutSplit,
    PredictiveConfig,
};
use drivetopics::hdp::{load_checkpoint, run_sampler, save_checkpoint, topic_report, COUNTS_FILE, STATE_FILE};
use drivetopics::hmm::{augment_with_source, em_fit, extract_corpus, init_model};
use drivetopics::predict::{absorption_table, fraction_index, most_likely_destination_per_road, most_likely_route, track_destinations};
use drivetopics::quantize::build_vocab;
use drivetopics::trips::{generate_world, parse_trips, sample_trips, write_trips, GroundTruth};
use drivetopics::{corpus::Corpus, HdpState, HmmModel, Trip, Vocabulary};
use log::{info, warn};
use serde::{de::DeserializeOwned, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::export::{feature_collection, line_feature, point_feature};
use crate::manifest::Manifest;
use crate::PipelineError;

pub const TRIPS: &str = "trips.jsonl";
pub const HELDOUT_TRIPS: &str = "trips_heldout.jsonl";
pub const WORLD: &str = "world.json";
pub const TRUTH: &str = "truth.json";
pub const HELDOUT_TRUTH: &str = "truth_heldout.json";
pub const HMM_MODEL: &str = "hmm_model.json";
pub const HMM_PLAIN: &str = "hmm_plain.json";
pub const HMM_TRACE: &str = "hmm_trace.csv";
pub const REJECTED: &str = "rejected_trips.json";
pub const ROUTES: &str = "routes.json";
pub const ROUTES_GEOJSON: &str = "routes.geojson";
pub const DEST_TRACKS: &str = "destination_tracks.csv";
pub const ABSORPTION_CURVES: &str = "absorption_vs_time.csv";
pub const DEST_SUMMARY: &str = "destination_summary.json";
pub const ROAD_DESTINATIONS: &str = "road_destinations.geojson";
pub const VOCAB: &str = "vocab.json";
pub const CORPUS: &str = "corpus.json";
pub const SPLIT: &str = "heldout_split.json";
pub const HDP_DIR: &str = "hdp";
pub const HDP_SNAPSHOTS: &str = "hdp_snapshots.json";
pub const HDP_DIAGNOSTICS: &str = "hdp_diagnostics.csv";
pub const TOPICS: &str = "topics.json";
pub const EVAL_SUMMARY: &str = "eval_summary.json";
pub const EVAL_SCORES: &str = "eval_scores.csv";
pub const ROAD_MARGINALS: &str = "road_marginals.csv";
pub const ROADS_GEOJSON: &str = "roads.geojson";
pub const TRIPS_GEOJSON: &str = "trips.geojson";

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    TrainHmm,
    PredictRoute,
    PredictDest,
    Quantize,
    Corpus,
    TrainHdp,
    Eval,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::TrainHmm,
        Stage::PredictRoute,
        Stage::PredictDest,
        Stage::Quantize,
        Stage::Corpus,
        Stage::TrainHdp,
        Stage::Eval,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainHmm => "train-hmm",
            Stage::PredictRoute => "predict-route",
            Stage::PredictDest => "predict-dest",
            Stage::Quantize => "quantize",
            Stage::Corpus => "corpus",
            Stage::TrainHdp => "train-hdp",
            Stage::Eval => "eval",
            Stage::Export => "export",
        }
    }
}

/// Route endpoints for `predict-route`; all source/destination pairs when unset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouteQuery {
    pub from: Option<usize>,
    pub to: Option<usize>,
}

pub struct Ctx<'a> {
    pub config: &'a PipelineConfig,
    pub out: PathBuf,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Path of an upstream artifact, or an error naming the stage that makes it.
    fn require(&self, name: &str, producer: Stage) -> Result<PathBuf, PipelineError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact { artifact: name.into(), command: producer.name().into() })
        }
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, producer: Stage) -> anyhow::Result<T> {
        let p = self.require(name, producer)?;
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    fn write(&self, name: &str, text: &str) -> anyhow::Result<()> {
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn record(&self, stage: Stage, seeds: &[(&str, u64)], artifacts: &[&str]) -> anyhow::Result<()> {
        let names: Vec<String> = artifacts.iter().map(|s| s.to_string()).collect();
        Manifest::record(&self.out, self.config, stage.name(), seeds, &names)?;
        info!("{}: wrote {}", stage.name(), names.join(", "));
        Ok(())
    }

    fn model(&self) -> anyhow::Result<HmmModel> {
        let p = self.require(HMM_MODEL, Stage::TrainHmm)?;
        Ok(HmmModel::load(&p)?)
    }

    fn vocab(&self) -> anyhow::Result<Vocabulary> {
        self.read_json(VOCAB, Stage::Quantize)
    }

    fn load_trips(path: &Path) -> anyhow::Result<Vec<Trip>> {
        let log = parse_trips::<f64>(path).with_context(|| format!("reading trips {}", path.display()))?;
        for r in &log.rejected {
            warn!("{}: line {} trip {} rejected: {}", path.display(), r.line, r.id, r.reason);
        }
        Ok(log.trips)
    }

    /// Training trips: the configured log, else the synthetic set.
    fn training_trips(&self) -> anyhow::Result<Vec<Trip>> {
        match &self.config.paths.trips {
            Some(p) => Self::load_trips(p),
            None => Self::load_trips(&self.require(TRIPS, Stage::Synth)?),
        }
    }

    fn scored_trips(&self) -> anyhow::Result<Vec<Trip>> {
        if let Some(p) = &self.config.paths.heldout_trips {
            return Self::load_trips(p);
        }
        if self.config.paths.trips.is_none() && self.path(HELDOUT_TRIPS).exists() {
            return Self::load_trips(&self.path(HELDOUT_TRIPS));
        }
        self.training_trips()
    }
}

pub fn run_stage(ctx: &Ctx, stage: Stage, route: RouteQuery) -> anyhow::Result<()> {
    ctx.config.validate()?;
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    match stage {
        Stage::Synth => synth(ctx),
        Stage::TrainHmm => train_hmm(ctx),
        Stage::PredictRoute => predict_route(ctx, route),
        Stage::PredictDest => predict_dest(ctx),
        Stage::Quantize => quantize(ctx),
        Stage::Corpus => corpus(ctx),
        Stage::TrainHdp => train_hdp(ctx),
        Stage::Eval => eval(ctx),
        Stage::Export => export(ctx),
    }
}

fn synth(ctx: &Ctx) -> anyhow::Result<()> {
    let c = ctx.config;
    let (ws, ts, hs) = (c.seed, c.seed.wrapping_add(1), c.seed.wrapping_add(2));
    let world = generate_world(&c.synth.world, ws)?;
    let train = sample_trips(&world, c.synth.n_trips, ts)?;
    let trips: Vec<Trip> = train.iter().map(|s| s.trip.clone()).collect();
    write_trips(ctx.path(TRIPS), &trips)?;
    ctx.write_json(WORLD, &world)?;
    ctx.write_json(TRUTH, &GroundTruth::new(&world, &train))?;
    let mut artifacts = vec![TRIPS, WORLD, TRUTH];
    if c.synth.n_heldout > 0 {
        let held = sample_trips(&world, c.synth.n_heldout, hs)?;
        let trips: Vec<Trip> = held.iter().map(|s| s.trip.clone()).collect();
        write_trips(ctx.path(HELDOUT_TRIPS), &trips)?;
        ctx.write_json(HELDOUT_TRUTH, &GroundTruth::new(&world, &held))?;
        artifacts.extend([HELDOUT_TRIPS, HELDOUT_TRUTH]);
    } else {
        for stale in [HELDOUT_TRIPS, HELDOUT_TRUTH] {
            let _ = fs::remove_file(ctx.path(stale));
        }
    }
    ctx.record(Stage::Synth, &[("world", ws), ("trips", ts), ("heldout_trips", hs)], &artifacts)
}

fn train_hmm(ctx: &Ctx) -> anyhow::Result<()> {
    let h = &ctx.config.hmm;
    let trips = ctx.training_trips()?;
    let init = init_model(&trips, &h.init(), h.hyper())?;
    let fit = em_fit(&init, &trips, &h.em())?;
    info!("train-hmm: {} states after {} EM iterations", fit.model.n_states(), fit.trace.len());
    let mut trace = String::from("iteration,objective\n");
    for (i, f) in fit.trace.iter().enumerate() {
        trace.push_str(&format!("{},{}\n", i + 1, f));
    }
    ctx.write(HMM_TRACE, &trace)?;
    let mut artifacts = vec![HMM_MODEL, HMM_TRACE];
    if h.augmented {
        fit.model.save(ctx.path(HMM_PLAIN))?;
        augment_with_source(&fit.model, &trips)?.save(ctx.path(HMM_MODEL))?;
        artifacts.push(HMM_PLAIN);
    } else {
        fit.model.save(ctx.path(HMM_MODEL))?;
        let _ = fs::remove_file(ctx.path(HMM_PLAIN));
    }
    ctx.record(Stage::TrainHmm, &[], &artifacts)
}

fn state_label(model: &HmmModel, i: usize) -> String {
    format!("{:?}", model.states[i])
}

fn predict_route(ctx: &Ctx, q: RouteQuery) -> anyhow::Result<()> {
    let model = ctx.model()?;
    let sources: Vec<usize> = match q.from {
        Some(s) => vec![s],
        None => (0..model.n_states()).filter(|&i| matches!(model.states[i], drivetopics::hmm::StateKind::Source(_))).collect(),
    };
    let targets = match q.to {
        Some(t) => vec![t],
        None => model.destination_states(),
    };
    let mut routes = Vec::new();
    let mut features = Vec::new();
    for &a in &sources {
        for &b in &targets {
            let r = match most_likely_route(&model, a, b) {
                Ok(r) => r,
                Err(e) if q.from.is_none() || q.to.is_none() => {
                    info!("predict-route: skipping {a} -> {b}: {e}");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let coords: Vec<[f64; 2]> = r.path.iter().map(|&i| model.emission(i).mu_r).collect();
            let props = json!({"from": a, "to": b, "from_kind": state_label(&model, a), "to_kind": state_label(&model, b), "log_prob": r.log_prob, "prob": r.log_prob.exp()});
            features.push(line_feature(&coords, props));
            routes.push(json!({"from": a, "to": b, "path": r.path, "log_prob": r.log_prob}));
        }
    }
    ctx.write_json(ROUTES, &routes)?;
    ctx.write_json(ROUTES_GEOJSON, &feature_collection(features))?;
    ctx.record(Stage::PredictRoute, &[], &[ROUTES, ROUTES_GEOJSON])
}

fn predict_dest(ctx: &Ctx) -> anyhow::Result<()> {
    let model = ctx.model()?;
    let trips = ctx.scored_trips()?;
    let table = absorption_table(&model)?;
    let mut tracks = String::from("trip_id,step,fraction,state,best_destination,p_best,residual\n");
    let mut curves = String::from("trip_id,fraction,final_destination,p_final\n");
    let (mut at10, mut at50, mut scored) = (0usize, 0usize, 0usize);
    for trip in &trips {
        let track = track_destinations(&model, &table, trip)?;
        let last = trip.len() - 1;
        let fin = table.destinations.iter().position(|&d| d == track.states[last]);
        for t in 0..trip.len() {
            let frac = if last == 0 { 1.0 } else { t as f64 / last as f64 };
            let best = track.best(t);
            tracks.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                trip.id, t, frac, track.states[t], best, track.probs[t][best], track.residual[t]
            ));
            if let Some(f) = fin {
                curves.push_str(&format!("{},{},{},{}\n", trip.id, frac, f, track.probs[t][f]));
            }
        }
        if let Some(f) = fin {
            scored += 1;
            at10 += usize::from(track.best(fraction_index(trip.len(), 0.1)) == f);
            at50 += usize::from(track.best(fraction_index(trip.len(), 0.5)) == f);
        }
    }
    let roads: Vec<_> = most_likely_destination_per_road(&model, &table)
        .into_iter()
        .map(|(i, d)| {
            let props = json!({
                "state": i,
                "kind": state_label(&model, i),
                "destination": d,
                "prob": d.map(|d| table.a[i][d]),
            });
            point_feature(model.emission(i).mu_r, props)
        })
        .collect();
    ctx.write(DEST_TRACKS, &tracks)?;
    ctx.write(ABSORPTION_CURVES, &curves)?;
    ctx.write_json(ROAD_DESTINATIONS, &feature_collection(roads))?;
    ctx.write_json(
        DEST_SUMMARY,
        &json!({"trips": trips.len(), "scored": scored, "correct_after_10pct": at10, "correct_after_50pct": at50, "augmented": model.is_augmented()}),
    )?;
    ctx.record(Stage::PredictDest, &[], &[DEST_TRACKS, ABSORPTION_CURVES, ROAD_DESTINATIONS, DEST_SUMMARY])
}

fn quantize(ctx: &Ctx) -> anyhow::Result<()> {
    let q = &ctx.config.quantize;
    let trips = ctx.training_trips()?;
    let (mut v, mut h) = (Vec::new(), Vec::new());
    for t in &trips {
        let s = t.signals.as_ref().ok_or_else(|| anyhow::anyhow!("trip {} has no velocity/time-of-day signals", t.id))?;
        v.extend_from_slice(&s.velocity);
        h.extend_from_slice(&s.hour);
    }
    let (vocab, size) = build_vocab(&v, &h, q.lambda_v, q.lambda_t, q.max_iter)?;
    info!("quantize: {} velocity x {} time bins = {size} words", vocab.v_count(), vocab.t_count());
    ctx.write_json(VOCAB, &vocab)?;
    ctx.record(Stage::Quantize, &[], &[VOCAB])
}

fn corpus(ctx: &Ctx) -> anyhow::Result<()> {
    let model = ctx.model()?;
    let vocab = ctx.vocab()?;
    let trips = ctx.training_trips()?;
    let corpus = extract_corpus(&model, &trips, &vocab)?;
    info!("corpus: {} road documents, {} words", corpus.num_docs(), corpus.num_words());
    ctx.write_json(CORPUS, &corpus)?;
    ctx.record(Stage::Corpus, &[], &[CORPUS])
}

fn train_hdp(ctx: &Ctx) -> anyhow::Result<()> {
    let c = ctx.config;
    let corpus: Corpus = ctx.read_json(CORPUS, Stage::Corpus)?;
    let vocab = ctx.vocab()?;
    let split = heldout_split(&corpus, c.eval.ratio, c.eval_seed())?;
    let keep = c.snapshot_iterations();
    let trace_cfg = PredictiveConfig { burn_in: 10, samples: 10, seed: c.eval_seed() };
    let every = c.hdp.heldout_every as u64;
    let mut snaps: Vec<HdpState> = Vec::new();
    let (state, diag) = run_sampler(&split.observed(), c.hdp_hyper(), &c.sampler(), |it, s| {
        if keep.contains(&it) {
            snaps.push(s.clone());
        }
        let score = every > 0 && (it == 1 || it % every == 0);
        score.then(|| hdp_predictive(std::slice::from_ref(s), &split, &trace_cfg).map(|p| p.avg_log_pred).unwrap_or(f64::NAN))
    })?;
    info!("train-hdp: K = {} after {} iterations", state.k(), state.iteration);
    save_checkpoint(&state, &ctx.path(HDP_DIR))?;
    ctx.write_json(SPLIT, &split)?;
    ctx.write_json(HDP_SNAPSHOTS, &snaps)?;
    ctx.write(HDP_DIAGNOSTICS, &diag.to_csv())?;
    ctx.write_json(TOPICS, &topic_report(&state, &vocab, c.hdp.top_words))?;
    let state_file = format!("{HDP_DIR}/{STATE_FILE}");
    let counts_file = format!("{HDP_DIR}/{COUNTS_FILE}");
    ctx.record(
        Stage::TrainHdp,
        &[("hdp", c.hdp_seed()), ("split", c.eval_seed())],
        &[&state_file, &counts_file, SPLIT, HDP_SNAPSHOTS, HDP_DIAGNOSTICS, TOPICS],
    )
}

fn final_state(ctx: &Ctx) -> anyhow::Result<HdpState> {
    ctx.require(&format!("{HDP_DIR}/{STATE_FILE}"), Stage::TrainHdp)?;
    Ok(load_checkpoint(&ctx.path(HDP_DIR))?)
}

fn eval(ctx: &Ctx) -> anyhow::Result<()> {
    let c = ctx.config;
    let split: HeldoutSplit = ctx.read_json(SPLIT, Stage::TrainHdp)?;
    let snaps: Vec<HdpState> = ctx.read_json(HDP_SNAPSHOTS, Stage::TrainHdp)?;
    let corpus: Corpus = ctx.read_json(CORPUS, Stage::Corpus)?;
    let vocab = ctx.vocab()?;
    let state = final_state(ctx)?;
    let hdp = hdp_predictive(&snaps, &split, &c.predictive())?;
    let base = baseline_predictive(&split, c.eval.baseline_prior)?;
    let summary = summarize(&hdp, &base, snaps.len());
    info!("eval: held-out avg log predictive {:.4} (HDP) vs {:.4} (baseline)", summary.hdp, summary.baseline);
    ctx.write_json(EVAL_SUMMARY, &summary)?;
    ctx.write(EVAL_SCORES, &scores_csv(&hdp, &base))?;
    let (vc, tc) = (vocab.v_count(), vocab.t_count());
    let mut rows =
        String::from("doc_id,n_words,ml_velocity_bin,ml_velocity,ml_time_bin,ml_hour,empirical_velocity_bin,empirical_time_bin\n");
    for (j, d) in corpus.docs.iter().enumerate() {
        if d.words.is_empty() {
            continue;
        }
        let m = ml_marginals(&state, vc, tc, j)?;
        let e = empirical_marginals(&corpus, vc, tc, j)?;
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            d.id,
            d.words.len(),
            m.ml_velocity,
            vocab.velocity.centers[m.ml_velocity][0],
            m.ml_time,
            vocab.time.centers[m.ml_time][0],
            e.ml_velocity,
            e.ml_time
        ));
    }
    ctx.write(ROAD_MARGINALS, &rows)?;
    ctx.record(Stage::Eval, &[("predictive", c.eval_seed())], &[EVAL_SUMMARY, EVAL_SCORES, ROAD_MARGINALS])
}

fn export(ctx: &Ctx) -> anyhow::Result<()> {
    let model = ctx.model()?;
    let vocab = ctx.vocab()?;
    let state = final_state(ctx)?;
    let corpus: Corpus = ctx.read_json(CORPUS, Stage::Corpus)?;
    let trips = ctx.training_trips()?;
    let table = absorption_table(&model)?;
    let (vc, tc) = (vocab.v_count(), vocab.t_count());
    let mut roads = Vec::new();
    for r in 0..model.n_roads() {
        let copies: Vec<usize> = (0..model.n_states()).filter(|&i| model.states[i].road() == Some(r)).collect();
        // source copies of an augmented road are weighted equally
        let mut dest = vec![0.0; table.destinations.len()];
        for &i in &copies {
            dest.iter_mut().zip(&table.a[i]).for_each(|(a, b)| *a += b / copies.len() as f64);
        }
        let best = (0..dest.len()).fold(None, |b: Option<usize>, j| match b {
            Some(k) if dest[k] >= dest[j] => Some(k),
            _ if dest[j] > 0.0 => Some(j),
            b => b,
        });
        let e = &model.emissions[model.road_record[r]];
        let words = corpus.docs.get(r).map_or(0, |d| d.words.len());
        let mut props = json!({
            "road": r,
            "heading": e.mu_h,
            "words": words,
            "destination": best,
            "destination_prob": best.map(|j| dest[j]),
        });
        if words > 0 {
            let m = ml_marginals(&state, vc, tc, r)?;
            props["ml_velocity"] = json!(vocab.velocity.centers[m.ml_velocity][0]);
            props["ml_hour"] = json!(vocab.time.centers[m.ml_time][0]);
            props["ml_velocity_bin"] = json!(m.ml_velocity);
            props["ml_time_bin"] = json!(m.ml_time);
        }
        roads.push(point_feature(e.mu_r, props));
    }
    let lines = trips
        .iter()
        .map(|t| {
            let coords: Vec<[f64; 2]> = t.obs.iter().map(|o| o.r).collect();
            line_feature(&coords, json!({"id": t.id, "observations": t.len()}))
        })
        .collect();
    ctx.write_json(ROADS_GEOJSON, &feature_collection(roads))?;
    ctx.write_json(TRIPS_GEOJSON, &feature_collection(lines))?;
    ctx.record(Stage::Export, &[], &[ROADS_GEOJSON, TRIPS_GEOJSON])
}
