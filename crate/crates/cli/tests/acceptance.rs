//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! measurement and runtime, and exits nonzero if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use drivetopics::eval::{baseline_predictive, hdp_predictive, heldout_split, HeldoutSplit, PredictiveConfig};
use drivetopics::hdp::exact::{exact_posterior, stirling_first};
use drivetopics::hdp::{init_from_labels, iterate, run_sampler, sample_crt, HdpHyper, SamplerConfig};
use drivetopics::hmm::{
    augment_with_source, em_fit, init_model, path_loglik, viterbi, EmConfig, EmissionParams, HmmHyper, InitConfig, StateKind,
    FORMAT_VERSION,
};
use drivetopics::predict::{absorption_table, fraction_index, most_likely_route, track_destinations, PredictError};
use drivetopics::stream::seeded;
use drivetopics::trips::{generate_corpus_truth, generate_world, sample_corpus, sample_trips, CorpusConfig, WorldConfig};
use drivetopics::{HmmModel, Observation, Trip};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, u64);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Random model with the given numbers of sources and destinations; the
/// remaining states are roads. Rows are sparse with the given density.
fn random_model(n: usize, sources: usize, dests: usize, density: f64, rng: &mut impl Rng) -> HmmModel {
    let mut states: Vec<StateKind> = (0..sources).map(StateKind::Source).collect();
    states.extend((0..dests).map(StateKind::Destination));
    states.extend((0..n - sources - dests).map(StateKind::Road));
    let mut theta0 = vec![0.0; n];
    (0..sources).for_each(|i| theta0[i] = 1.0 / sources as f64);
    let trans = (0..n)
        .map(|i| {
            if states[i].is_destination() {
                return vec![(i, 1.0)];
            }
            let mut row = Vec::new();
            for j in sources..n {
                if rng.random::<f64>() < density {
                    row.push((j, rng.random::<f64>() + 0.01));
                }
            }
            if row.is_empty() {
                row.push((sources, 1.0));
            }
            let s: f64 = row.iter().map(|e| e.1).sum();
            row.into_iter().map(|(j, p)| (j, p / s)).collect()
        })
        .collect();
    let emissions = (0..n)
        .map(|_| EmissionParams {
            mu_r: [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)],
            sigma_r: [[rng.random_range(20.0..80.0), 5.0], [5.0, rng.random_range(20.0..80.0)]],
            mu_h: rng.random_range(-3.0..3.0),
            sigma_h: rng.random_range(0.2..2.0),
            p_q: rng.random_range(0.05..0.5),
        })
        .collect();
    HmmModel {
        format_version: FORMAT_VERSION,
        hyper: HmmHyper::default(),
        states,
        theta0,
        trans,
        emissions,
        source_record: (0..sources).collect(),
        destination_record: (sources..sources + dests).collect(),
        road_record: (sources + dests..n).collect(),
    }
}

fn em_monotone() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut iters = 0;
    let mut rng = seeded(10);
    for seed in 0..10 {
        let mut cfg = WorldConfig { rows: rng.random_range(3..=6), cols: rng.random_range(3..=6), ..Default::default() };
        cfg.noise.pos_std = rng.random_range(5.0..25.0);
        cfg.noise.p_dr = rng.random_range(0.0..0.3);
        let world = generate_world(&cfg, 100 + seed).unwrap();
        let trips: Vec<Trip> = sample_trips(&world, 80, 200 + seed).unwrap().into_iter().map(|s| s.trip).collect();
        let m0 = init_model(&trips, &InitConfig::default(), HmmHyper::default()).unwrap();
        let fit = em_fit(&m0, &trips, &EmConfig { max_iter: 50, tol: 0.0 }).unwrap();
        iters += fit.trace.len();
        for w in fit.trace.windows(2) {
            worst = worst.max((w[0] - w[1]) / w[0].abs().max(1.0));
        }
    }
    check(worst <= 1e-9, format!("{iters} EM iterations over 10 worlds, largest relative decrease {worst:.2e}"))
}

fn brute_force_path(m: &HmmModel, trip: &Trip) -> (Vec<usize>, f64) {
    let (n, t) = (m.n_states(), trip.len());
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for code in 0..n.pow(t as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..t)
            .map(|_| {
                let s = c % n;
                c /= n;
                s
            })
            .collect();
        let ll = path_loglik(m, trip, &path);
        if ll > best.1 {
            best = (path, ll);
        }
    }
    best
}

fn viterbi_exact() -> Outcome {
    let mut rng = seeded(2024);
    let (mut decoded, mut undecodable) = (0, 0);
    for case in 0..200 {
        let n = rng.random_range(3..=5);
        let dests = if n > 3 { rng.random_range(1..=2) } else { 1 };
        let m = random_model(n, 1, dests, 0.7, &mut rng);
        let len = rng.random_range(2..=6);
        let obs = (0..len)
            .map(|t| Observation {
                t: t as f64,
                r: [rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0)],
                h: rng.random_range(-3.0..3.0),
                q: rng.random::<f64>() < 0.3,
                k_on: t == 0,
                k_off: t + 1 == len,
            })
            .collect();
        let trip = Trip::new(format!("c{case}"), obs).unwrap();
        let (path, ll) = brute_force_path(&m, &trip);
        match viterbi(&m, &trip) {
            Ok(d) if d.path == path && (d.log_lik - ll).abs() <= 1e-9 * (1.0 + ll.abs()) => decoded += 1,
            Err(_) if ll == f64::NEG_INFINITY => undecodable += 1,
            other => return Err(format!("case {case}: {other:?} vs brute force {path:?} ({ll})")),
        }
    }
    Ok(format!("200/200 agree ({decoded} decoded, {undecodable} infeasible in both)"))
}

fn rollout(m: &HmmModel, start: usize, rng: &mut impl Rng) -> Option<usize> {
    let mut i = start;
    for _ in 0..10_000 {
        if m.states[i].is_destination() {
            return Some(i);
        }
        let row = &m.trans[i];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        i = row.last().unwrap().0;
        for &(j, p) in row {
            acc += p;
            if u < acc {
                i = j;
                break;
            }
        }
    }
    None
}

fn absorption_mc() -> Outcome {
    let mut rng = seeded(31);
    let m = random_model(30, 2, 4, 0.12, &mut rng);
    let table = absorption_table(&m).unwrap();
    let row_err = (0..m.n_states()).map(|i| (table.a[i].iter().sum::<f64>() + table.residual[i] - 1.0).abs()).fold(0.0, f64::max);
    let starts = [0, 1, 10, 20];
    let mut worst: f64 = 0.0;
    for &s in &starts {
        let mut hits = vec![0usize; table.destinations.len() + 1];
        let n = 100_000;
        for _ in 0..n {
            match rollout(&m, s, &mut rng) {
                Some(d) => hits[table.destinations.iter().position(|&x| x == d).unwrap()] += 1,
                None => hits[table.destinations.len()] += 1,
            }
        }
        for (j, &h) in hits.iter().enumerate() {
            let exact = if j < table.destinations.len() { table.a[s][j] } else { table.residual[s] };
            worst = worst.max((h as f64 / n as f64 - exact).abs());
        }
    }
    check(
        worst < 0.02 && row_err < 1e-8,
        format!("max |MC - exact| = {worst:.4} over {} starts x 100k rollouts; max row-sum error {row_err:.1e}", starts.len()),
    )
}

fn best_simple_path(m: &HmmModel, a: usize, b: usize) -> Option<(Vec<usize>, f64)> {
    fn go(m: &HmmModel, i: usize, b: usize, seen: &mut [bool], path: &mut Vec<usize>, lp: f64, best: &mut Option<(Vec<usize>, f64)>) {
        if i == b {
            if best.as_ref().is_none_or(|x| lp > x.1) {
                *best = Some((path.clone(), lp));
            }
            return;
        }
        for &(j, p) in &m.trans[i] {
            if !seen[j] {
                seen[j] = true;
                path.push(j);
                go(m, j, b, seen, path, lp + p.ln(), best);
                path.pop();
                seen[j] = false;
            }
        }
    }
    let mut seen = vec![false; m.n_states()];
    seen[a] = true;
    let mut best = None;
    go(m, a, b, &mut seen, &mut vec![a], 0.0, &mut best);
    best
}

fn route_optimal() -> Outcome {
    let mut rng = seeded(77);
    let (mut found, mut unreachable, mut queries) = (0, 0, 0);
    for g in 0..100 {
        let n = rng.random_range(4..=8);
        let m = random_model(n, 1, 2, 0.3, &mut rng);
        for a in [0, n - 1] {
            for b in [1, 2] {
                queries += 1;
                match (most_likely_route(&m, a, b), best_simple_path(&m, a, b)) {
                    (Ok(r), Some((p, lp))) if r.path == p && (r.log_prob - lp).abs() < 1e-9 => found += 1,
                    (Err(PredictError::Unreachable { .. }), None) => unreachable += 1,
                    (got, want) => return Err(format!("graph {g} {a}->{b}: {got:?} vs {want:?}")),
                }
            }
        }
    }
    Ok(format!("{queries} queries on 100 graphs agree ({found} routes, {unreachable} unreachable)"))
}

/// An H-shaped grid: the left and right halves connect only through a
/// three-node corridor, so every trip shares the corridor's road states.
/// Each source mostly drives to its own destination.
fn augmented_advantage() -> Outcome {
    let cfg = WorldConfig {
        rows: 3,
        cols: 7,
        n_sources: 2,
        n_destinations: 2,
        source_nodes: Some(vec![0, 14]),
        destination_nodes: Some(vec![6, 20]),
        removed_nodes: vec![2, 3, 4, 16, 17, 18],
        dominant_prob: Some(0.9),
        ..Default::default()
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3u64 {
        let world = generate_world(&cfg, seed).unwrap();
        let train: Vec<Trip> = sample_trips(&world, 150, 10 + seed).unwrap().into_iter().map(|s| s.trip).collect();
        let test: Vec<Trip> = sample_trips(&world, 30, 20 + seed).unwrap().into_iter().map(|s| s.trip).collect();
        let m0 = init_model(&train, &InitConfig::default(), HmmHyper::default()).unwrap();
        let plain = em_fit(&m0, &train, &EmConfig::default()).unwrap().model;
        let aug = augment_with_source(&plain, &train).unwrap();
        let correct = |m: &HmmModel| {
            let table = absorption_table(m).unwrap();
            test.iter()
                .filter(|t| {
                    let track = track_destinations(m, &table, t).unwrap();
                    let fin = table.destinations.iter().position(|&d| d == track.states[t.len() - 1]);
                    fin == Some(track.best(fraction_index(t.len(), 0.1)))
                })
                .count()
        };
        let (p, a) = (correct(&plain), correct(&aug));
        ok &= a > p;
        lines.push(format!("seed {seed}: augmented {a}/30 vs plain {p}/30"));
    }
    check(ok, lines.join("; "))
}

fn restricted_gibbs() -> Outcome {
    let docs = vec![vec![0, 0, 1], vec![2, 2, 1]];
    let h = HdpHyper::default();
    let canonical = |z: &[Vec<usize>]| -> Vec<usize> {
        let flip = z[0][0] == 1;
        z.iter().flatten().map(|&t| if flip { 1 - t } else { t }).collect()
    };
    let mut exact: HashMap<Vec<usize>, f64> = HashMap::new();
    for (z, p) in exact_posterior(&docs, 3, &h, 2) {
        *exact.entry(canonical(&z)).or_default() += p;
    }
    let corpus = drivetopics::corpus::Corpus::new(
        3,
        docs.iter().enumerate().map(|(id, w)| drivetopics::corpus::Document { id, words: w.clone() }).collect(),
    )
    .unwrap();
    let cfg = SamplerConfig { fixed_k: true, split_merge: false, k0: 2, seed: 6, ..Default::default() };
    let mut s = init_from_labels::<f64>(&corpus, h, &[vec![0, 0, 1], vec![1, 1, 1]], 6).unwrap();
    let sweeps = 50_000;
    let mut hist: HashMap<Vec<usize>, f64> = HashMap::new();
    for _ in 0..sweeps {
        iterate(&mut s, &cfg);
        let z: Vec<Vec<usize>> = s.docs.iter().map(|d| d.z.iter().map(|&t| t as usize).collect()).collect();
        *hist.entry(canonical(&z)).or_default() += 1.0 / sweeps as f64;
    }
    let tv = exact.iter().map(|(k, p)| (p - hist.get(k).copied().unwrap_or(0.0)).abs()).sum::<f64>() / 2.0;
    check(tv < 0.05 && s.k() == 2, format!("TV {tv:.4} over {sweeps} sweeps, {} labellings", exact.len()))
}

fn crt_vs_stirling() -> Outcome {
    let s = stirling_first(6);
    let mut rng = seeded(5);
    let draws = 200_000;
    let mut worst: f64 = 0.0;
    for a in [0.1, 1.0, 10.0] {
        for n in 1..=6u32 {
            let norm = (ln_gamma(a) - ln_gamma(a + n as f64)).exp();
            let mut hist = vec![0usize; n as usize + 1];
            for _ in 0..draws {
                hist[sample_crt(n, a, &mut rng) as usize] += 1;
            }
            for m in 0..=n as usize {
                let p = s[n as usize][m] * a.powi(m as i32) * norm;
                worst = worst.max((hist[m] as f64 / draws as f64 - p).abs());
            }
        }
    }
    check(worst < 0.01, format!("max |empirical - exact| = {worst:.4} over n <= 6, a in {{0.1, 1, 10}}, {draws} draws each"))
}

fn planted(seed: u64, cfg: &CorpusConfig) -> HeldoutSplit {
    let truth = generate_corpus_truth(cfg, seed).unwrap();
    let corpus = sample_corpus(&truth, seed + 100).unwrap().corpus;
    heldout_split(&corpus, 0.5, seed).unwrap()
}

/// Final K and held-out score of a default-settings chain started with `k0` topics.
fn chain(split: &HeldoutSplit, k0: usize, seed: u64) -> (usize, f64) {
    let cfg = SamplerConfig { k0, seed, ..Default::default() };
    let mut snaps = Vec::new();
    let (state, _) = run_sampler(&split.observed(), HdpHyper::<f64>::default(), &cfg, |it, s| {
        if it > 400 && it % 10 == 0 {
            snaps.push(s.clone());
        }
        None
    })
    .unwrap();
    let pred = PredictiveConfig { burn_in: 20, samples: 20, seed };
    (state.k(), hdp_predictive(&snaps, split, &pred).unwrap().avg_log_pred)
}

fn split_merge_recovery() -> Outcome {
    let mut good = 0;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let split = planted(seed, &CorpusConfig::default());
        let (k, from_one) = chain(&split, 1, seed);
        let (_, from_true) = chain(&split, 10, seed);
        let rel = ((from_one - from_true) / from_true).abs();
        if (8..=13).contains(&k) && rel <= 0.05 {
            good += 1;
        }
        lines.push(format!("K={k} rel={rel:.3}"));
    }
    check(good >= 4, format!("{good}/5 seeds in band [{}]", lines.join(", ")))
}

/// Average log predictive of the held-out words of documents shorter than
/// five words.
fn small_doc_score(p: &drivetopics::eval::PredictiveScore) -> f64 {
    let (sum, n) = p.per_doc.iter().filter(|d| d.n_obs + d.n_ho < 5).fold((0.0, 0), |(s, n), d| (s + d.sum_log, n + d.n_ho));
    sum / n as f64
}

/// Overall and on rarely visited roads (documents under five words).
fn hierarchy_advantage() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let split = planted(seed + 50, &CorpusConfig::default());
        let small = split.docs.iter().filter(|d| d.obs.len() + d.ho.len() < 5).count();
        let cfg = SamplerConfig { seed, ..Default::default() };
        let mut snaps = Vec::new();
        run_sampler(&split.observed(), HdpHyper::<f64>::default(), &cfg, |it, s| {
            if it > 400 && it % 10 == 0 {
                snaps.push(s.clone());
            }
            None
        })
        .unwrap();
        let hdp = hdp_predictive(&snaps, &split, &PredictiveConfig { burn_in: 20, samples: 20, seed }).unwrap();
        let base = baseline_predictive(&split, 0.5).unwrap();
        let (hs, bs) = (small_doc_score(&hdp), small_doc_score(&base));
        ok &= hdp.avg_log_pred > base.avg_log_pred && hs > bs && small >= 30;
        lines.push(format!("{:.3} vs {:.3}, {small} short docs {hs:.3} vs {bs:.3}", hdp.avg_log_pred, base.avg_log_pred));
    }
    check(ok, format!("HDP vs baseline: {}", lines.join("; ")))
}

fn pipeline_determinism() -> Outcome {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let dir = tempfile::tempdir().unwrap();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let cli = drivetopics_cli::Cli::try_parse_from([
            "drivetopics",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "all",
        ])
        .unwrap();
        drivetopics_cli::run(&cli).map_err(|e| format!("{e:#}"))?;
        manifests.push(drivetopics_cli::Manifest::load(&out).unwrap().unwrap());
    }
    let (a, b) = (&manifests[0], &manifests[1]);
    let mut files = 0;
    for (stage, rec) in &a.stages {
        for name in rec.artifacts.keys() {
            files += 1;
            if fs::read(dir.path().join("a").join(name)).unwrap() != fs::read(dir.path().join("b").join(name)).unwrap() {
                return Err(format!("{stage}: {name} differs"));
            }
        }
    }
    check(a.stages == b.stages && a.stages.len() == 9, format!("{files} artifacts from {} stages byte-identical", a.stages.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 EM monotonicity", em_monotone, 60),
        ("2 Viterbi exactness", viterbi_exact, 30),
        ("3 Absorption correctness", absorption_mc, 60),
        ("4 Route optimality", route_optimal, 30),
        ("5 Augmented-model advantage", augmented_advantage, 180),
        ("6 Restricted-Gibbs correctness", restricted_gibbs, 120),
        ("7 Table-count sampler", crt_vs_stirling, 60),
        ("8 Split-merge recovery", split_merge_recovery, 600),
        ("9 Hierarchy advantage", hierarchy_advantage, 600),
        ("10 Determinism", pipeline_determinism, 300),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = t0.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= Duration::from_secs(budget) => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!("[{}] {name}: {detail} ({:.1} s)", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
