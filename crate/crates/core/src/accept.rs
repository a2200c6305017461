//! The acceptance matrix: ten checks that gate a build. Each criterion
//! returns a structured outcome; the integration suite asserts one per test
//! and the CLI's acceptance command prints one line per criterion.
//!
//! The validity matrix (criterion 1) and the clustering run (criterion 4)
//! are cached per seed, because criteria 2 and 5 read the same trials.

use crate::cluster::{
    error_is_sentinel, run_pipeline_staged, sinkless_orientation_slocal, t_param, verify_clustering,
    Pipeline,
};
use crate::exec::{perturbation_check_slocal, IdKind, Instance, ScheduleKind};
use crate::graph::{cycle, fig_path7, path, random_regular, random_tree, EdgeId, Multigraph};
use crate::greedy::{greedy_high_degree_so, greedy_invariant_check, GreedyPolicy};
use crate::orient::{global_orientation, validate_high_degree, validate_sinkless};
use crate::refute::{
    exhaustive_check, lift_counterexample, refute, refute_zero_round, seeded_random,
    seeded_random_at, strawman, verify_counterexample, violations_on_input, CountingAlg,
    StrawmanKind, SupportInstance, EXHAUSTIVE_EDGE_CAP,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

pub const DEFAULT_ACCEPT_SEED: u64 = 7;

#[derive(Clone, Copy, Debug)]
pub struct AcceptConfig {
    pub seed: u64,
    pub heavy: bool,
    /// `ReverseRule2` injects the broken tie rule so a mutated matrix can
    /// demonstrate that the greedy criterion actually bites.
    pub greedy_policy: GreedyPolicy,
}

impl Default for AcceptConfig {
    fn default() -> Self {
        AcceptConfig {
            seed: DEFAULT_ACCEPT_SEED,
            heavy: false,
            greedy_policy: GreedyPolicy::Standard,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriterionOutcome {
    pub id: String,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub wall_ms: u64,
}

impl std::fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} - {} ({:.1}s)",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.wall_ms as f64 / 1000.0
        )
    }
}

fn run_timed(
    id: &str,
    name: &'static str,
    body: impl FnOnce() -> Result<String, String>,
) -> CriterionOutcome {
    let start = Instant::now();
    let result = body();
    let wall_ms = start.elapsed().as_millis() as u64;
    match result {
        Ok(detail) => CriterionOutcome { id: id.into(), name, passed: true, detail, wall_ms },
        Err(detail) => CriterionOutcome { id: id.into(), name, passed: false, detail, wall_ms },
    }
}

// ---------------------------------------------------------------------------
// Criterion 1 matrix, shared with criteria 2 and 5

#[derive(Clone, Copy, Debug)]
pub struct TrialFigures {
    pub t: u32,
    pub declared: u32,
    pub measured: u32,
    pub violations: usize,
}

#[derive(Clone, Debug)]
pub struct TrialFailure {
    pub message: String,
    pub sentinel: bool,
}

#[derive(Clone, Debug)]
pub struct MatrixTrial {
    pub graph_ref: String,
    pub schedule: &'static str,
    pub ids: &'static str,
    pub adv_seed: u64,
    pub n: usize,
    pub outcome: Result<TrialFigures, TrialFailure>,
}

impl MatrixTrial {
    fn describe(&self) -> String {
        format!("{} schedule={} ids={} seed={}", self.graph_ref, self.schedule, self.ids, self.adv_seed)
    }
}

pub struct MatrixOutcome {
    pub trials: Vec<MatrixTrial>,
}

fn matrix_graphs(seed: u64) -> Vec<(String, Result<Arc<Multigraph>, String>)> {
    let mut out = Vec::new();
    for &d in &[3u32, 5, 10] {
        for &n in &[1_000usize, 10_000, 100_000] {
            let g = random_regular(n, d, seed ^ (d as u64 * 1009) ^ n as u64)
                .map(Arc::new)
                .map_err(|e| e.to_string());
            out.push((format!("regular(n={n},d={d})"), g));
        }
    }
    out.push(("tree(n=10000)".into(), Ok(Arc::new(random_tree(10_000, seed.wrapping_add(17))))));
    out.push(("path7".into(), Ok(Arc::new(fig_path7()))));
    out
}

/// 18 grid combinations plus two extra seeds on the fully random pair.
fn adversary_combos(seed: u64) -> Vec<(ScheduleKind, IdKind, u64)> {
    let mut combos = Vec::with_capacity(20);
    for sk in ScheduleKind::ALL {
        for ik in IdKind::ALL {
            combos.push((sk, ik, seed));
        }
    }
    combos.push((ScheduleKind::Random, IdKind::RandomPoly, seed.wrapping_add(1)));
    combos.push((ScheduleKind::Random, IdKind::RandomPoly, seed.wrapping_add(2)));
    combos
}

fn run_matrix_trial(
    graph_ref: &str,
    g: &Arc<Multigraph>,
    sk: ScheduleKind,
    ik: IdKind,
    adv_seed: u64,
) -> MatrixTrial {
    let ids = Arc::new(ik.build(g, adv_seed));
    let inst = Instance::new(g.clone(), ids);
    let schedule = sk.build(g, adv_seed);
    let outcome = match sinkless_orientation_slocal(&inst, &schedule) {
        Ok(run) => match validate_sinkless(g, &run.orientation) {
            Ok(viols) => Ok(TrialFigures {
                t: run.stats.t,
                declared: run.stats.declared_locality,
                measured: run.stats.measured_max_radius,
                violations: viols.len(),
            }),
            Err(e) => Err(TrialFailure {
                message: format!("validator rejected the orientation: {e}"),
                sentinel: false,
            }),
        },
        Err(e) => Err(TrialFailure { message: e.to_string(), sentinel: error_is_sentinel(&e) }),
    };
    MatrixTrial {
        graph_ref: graph_ref.to_string(),
        schedule: sk.label(),
        ids: ik.label(),
        adv_seed,
        n: g.n(),
        outcome,
    }
}

fn matrix_cache() -> &'static Mutex<HashMap<u64, Arc<MatrixOutcome>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<MatrixOutcome>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn validity_matrix(seed: u64) -> Arc<MatrixOutcome> {
    if let Some(hit) = matrix_cache().lock().unwrap().get(&seed) {
        return hit.clone();
    }
    let combos = adversary_combos(seed);
    let mut jobs: Vec<(String, Arc<Multigraph>, ScheduleKind, IdKind, u64)> = Vec::new();
    let mut trials = Vec::new();
    for (graph_ref, built) in matrix_graphs(seed) {
        match built {
            Ok(g) => {
                for &(sk, ik, adv_seed) in &combos {
                    jobs.push((graph_ref.clone(), g.clone(), sk, ik, adv_seed));
                }
            }
            Err(msg) => trials.push(MatrixTrial {
                graph_ref,
                schedule: "-",
                ids: "-",
                adv_seed: seed,
                n: 0,
                outcome: Err(TrialFailure {
                    message: format!("graph generation failed: {msg}"),
                    sentinel: false,
                }),
            }),
        }
    }
    // Trials are independent; the collected order matches the job order, so
    // the assembled report does not depend on completion order.
    trials.extend(
        jobs.par_iter()
            .map(|(graph_ref, g, sk, ik, adv_seed)| run_matrix_trial(graph_ref, g, *sk, *ik, *adv_seed))
            .collect::<Vec<_>>(),
    );
    let outcome = Arc::new(MatrixOutcome { trials });
    matrix_cache().lock().unwrap().insert(seed, outcome.clone());
    outcome
}

fn criterion_validity(cfg: &AcceptConfig) -> Result<String, String> {
    let m = validity_matrix(cfg.seed);
    let total = m.trials.len();
    if total != 11 * 20 {
        return Err(format!("expected 220 trials, ran {total}"));
    }
    for trial in &m.trials {
        match &trial.outcome {
            Ok(fig) if fig.violations == 0 => {}
            Ok(fig) => {
                return Err(format!("{} left {} violations", trial.describe(), fig.violations))
            }
            Err(f) => return Err(format!("{} failed: {}", trial.describe(), f.message)),
        }
    }
    Ok(format!("{total} trials across 11 graphs x 20 adversary combos, zero violations"))
}

fn criterion_locality_budget(cfg: &AcceptConfig) -> Result<String, String> {
    let m = validity_matrix(cfg.seed);
    let mut max_measured = 0;
    let mut saw_t5 = false;
    for trial in &m.trials {
        let fig = match &trial.outcome {
            Ok(fig) => fig,
            Err(f) => return Err(format!("{} failed: {}", trial.describe(), f.message)),
        };
        if fig.measured > fig.declared {
            return Err(format!(
                "{} measured radius {} over declared {}",
                trial.describe(),
                fig.measured,
                fig.declared
            ));
        }
        if fig.declared != 22 * fig.t + 17 {
            return Err(format!(
                "{} declared {} but 22t+17 = {}",
                trial.describe(),
                fig.declared,
                22 * fig.t + 17
            ));
        }
        let want_t = t_param(trial.n).map_err(|e| e.to_string())?;
        if fig.t != want_t {
            return Err(format!("{} ran t={} but t({}) = {want_t}", trial.describe(), fig.t, trial.n));
        }
        if trial.n == 100_000 {
            if fig.t != 5 {
                return Err(format!("{} at n=100000 has t={}, wanted 5", trial.describe(), fig.t));
            }
            saw_t5 = true;
        }
        max_measured = max_measured.max(fig.measured);
    }
    if !saw_t5 {
        return Err("no n=100000 trial in the matrix".into());
    }
    Ok(format!(
        "measured <= declared = 22t+17 in all {} trials, max measured {max_measured}, t=5 at n=1e5",
        m.trials.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 3: greedy invariant

fn random_multigraph(rng: &mut ChaCha8Rng) -> Multigraph {
    let n = rng.gen_range(2..=200u32);
    let m = rng.gen_range(1..=800usize);
    let edges: Vec<(u32, u32)> = (0..m)
        .map(|_| loop {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v {
                break (u, v);
            }
        })
        .collect();
    Multigraph::new(n as usize, &edges).expect("no self-loops by construction")
}

fn criterion_greedy_invariant(cfg: &AcceptConfig) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut orders_checked = 0u64;
    for gi in 0..500 {
        let g = random_multigraph(&mut rng);
        let ids = IdKind::ALL[gi % IdKind::ALL.len()].build(&g, rng.gen());
        let mut order: Vec<EdgeId> = g.edges().collect();
        for oi in 0..100 {
            order.shuffle(&mut rng);
            let at = |msg: String| format!("graph {gi} (n={} m={}) order {oi}: {msg}", g.n(), g.m());
            let inv = greedy_invariant_check(&g, &ids, g.n(), &order, cfg.greedy_policy)
                .map_err(|e| at(e.to_string()))?;
            if let Some(f) = inv.failure {
                return Err(at(format!(
                    "step {} leaves {} with {} inward edges in a component of {}",
                    f.step, f.node, f.inward, f.component_size
                )));
            }
            let run = greedy_high_degree_so(&g, &ids, g.n(), &order, cfg.greedy_policy)
                .map_err(|e| at(e.to_string()))?;
            let viols =
                validate_high_degree(&g, &run.orientation, g.n()).map_err(|e| at(e.to_string()))?;
            if !viols.is_empty() {
                return Err(at(format!("{} high-degree violations", viols.len())));
            }
            orders_checked += 1;
        }
    }
    Ok(format!("{orders_checked} greedy runs hold the doubling invariant, zero violations"))
}

// ---------------------------------------------------------------------------
// Criterion 4 clustering run, shared with criterion 5

pub struct ClusterRunsOutcome {
    pub checked: usize,
    pub failures: Vec<String>,
    pub sentinels: usize,
}

fn cluster_cache() -> &'static Mutex<HashMap<u64, Arc<ClusterRunsOutcome>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ClusterRunsOutcome>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub fn cluster_runs(seed: u64) -> Arc<ClusterRunsOutcome> {
    if let Some(hit) = cluster_cache().lock().unwrap().get(&seed) {
        return hit.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut sentinels = 0;
    for i in 0..200usize {
        let (family, g) = match i % 5 {
            0 => {
                let n = rng.gen_range(5..=600u32) * 2;
                ("regular-3", random_regular(n as usize, 3, rng.gen()))
            }
            1 => {
                let n = rng.gen_range(5..=500u32) * 2;
                ("regular-5", random_regular(n as usize, 5, rng.gen()))
            }
            2 => ("tree", Ok(random_tree(rng.gen_range(10..=2000), rng.gen()))),
            3 => ("cycle", Ok(cycle(rng.gen_range(10..=1500)))),
            _ => ("path", Ok(path(rng.gen_range(10..=1500)))),
        };
        let g = match g {
            Ok(g) => Arc::new(g),
            Err(e) => {
                failures.push(format!("trial {i} ({family}): generation failed: {e}"));
                continue;
            }
        };
        let ids = Arc::new(IdKind::ALL[i % IdKind::ALL.len()].build(&g, rng.gen()));
        let schedule = ScheduleKind::ALL[i % ScheduleKind::ALL.len()].build(&g, rng.gen());
        let inst = Instance::new(g.clone(), ids);
        match sinkless_orientation_slocal(&inst, &schedule) {
            Ok(run) => {
                if let Err(msg) = verify_clustering(&g, &run.clustering) {
                    failures.push(format!("trial {i} ({family}, n={}): {msg}", g.n()));
                }
            }
            Err(e) => {
                if error_is_sentinel(&e) {
                    sentinels += 1;
                }
                failures.push(format!("trial {i} ({family}, n={}): {e}", g.n()));
            }
        }
        checked += 1;
    }
    let outcome = Arc::new(ClusterRunsOutcome { checked, failures, sentinels });
    cluster_cache().lock().unwrap().insert(seed, outcome.clone());
    outcome
}

fn criterion_clustering(cfg: &AcceptConfig) -> Result<String, String> {
    let c = cluster_runs(cfg.seed);
    if let Some(first) = c.failures.first() {
        return Err(format!("{} failures, first: {first}", c.failures.len()));
    }
    Ok(format!(
        "{} clusterings pass separation, ownership, radius, and provenance checks",
        c.checked
    ))
}

fn criterion_no_sentinels(cfg: &AcceptConfig) -> Result<String, String> {
    let m = validity_matrix(cfg.seed);
    let c = cluster_runs(cfg.seed);
    let matrix_sentinels = m
        .trials
        .iter()
        .filter(|t| matches!(&t.outcome, Err(f) if f.sentinel))
        .count();
    let total = matrix_sentinels + c.sentinels;
    if total != 0 {
        return Err(format!(
            "{total} impossibility sentinels ({matrix_sentinels} in the validity matrix, {} in clustering)",
            c.sentinels
        ));
    }
    Ok(format!(
        "zero impossibility sentinels across {} + {} trials",
        m.trials.len(),
        c.checked
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6: composed vs staged, plus perturbation stability

fn criterion_composition(cfg: &AcceptConfig) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(6));
    let mut effective = 0u32;
    for i in 0..50usize {
        // Paths and long cycles have diameter beyond the declared locality,
        // so their balls leave perturbable outside nodes. Trees and random
        // regular graphs do not; they are kept small and pull their weight
        // through the composed-vs-staged comparison.
        let (family, g) = match i % 5 {
            0 => ("path", path(rng.gen_range(120..=600))),
            1 => ("cycle", cycle(rng.gen_range(220..=800))),
            2 => ("tree", random_tree(rng.gen_range(300..=900), rng.gen())),
            3 => (
                "regular-3",
                random_regular(rng.gen_range(40..=120u32) as usize * 2, 3, rng.gen())
                    .map_err(|e| format!("trial {i}: generation failed: {e}"))?,
            ),
            _ => (
                "regular-5",
                random_regular(rng.gen_range(40..=120u32) as usize * 2, 5, rng.gen())
                    .map_err(|e| format!("trial {i}: generation failed: {e}"))?,
            ),
        };
        let g = Arc::new(g);
        let ids = Arc::new(IdKind::ALL[i % IdKind::ALL.len()].build(&g, rng.gen()));
        let schedule = ScheduleKind::ALL[i % ScheduleKind::ALL.len()].build(&g, rng.gen());
        let inst = Instance::new(g.clone(), ids);
        let at = |msg: String| format!("trial {i} ({family}, n={}): {msg}", g.n());
        let composed = sinkless_orientation_slocal(&inst, &schedule).map_err(|e| at(e.to_string()))?;
        let staged =
            run_pipeline_staged(&inst, &composed.orders, None).map_err(|e| at(e.to_string()))?;
        if composed.raw_outputs != staged.raw_outputs {
            return Err(at("composed and staged outputs differ".into()));
        }
        if composed.stats.violations != 0 || staged.stats.violations != 0 {
            return Err(at("violations in a composition trial".into()));
        }
        let pipeline = Pipeline::new();
        for pos in [schedule.len() / 3, 2 * schedule.len() / 3] {
            let report = perturbation_check_slocal(
                pipeline.top.as_ref(),
                &inst,
                &schedule,
                pos,
                100,
                rng.gen(),
                None,
            )
            .map_err(|e| at(e.to_string()))?;
            if report.failures != 0 {
                return Err(at(format!(
                    "{} perturbation failures at position {pos}: {:?}",
                    report.failures, report.witness
                )));
            }
            effective += report.effective_trials;
        }
    }
    if effective == 0 {
        return Err("no perturbation trial had nodes outside the locality ball".into());
    }
    Ok(format!(
        "50 composed runs byte-identical to staged reruns; {effective} effective perturbations, zero failures"
    ))
}

// ---------------------------------------------------------------------------
// Criteria 7-9: refutation

fn fixture_12() -> Result<SupportInstance, String> {
    let (g, c) = crate::graph::k6_double_cover();
    SupportInstance::with_identity_ids(g, c).map_err(|e| e.to_string())
}

fn criterion_zero_round(cfg: &AcceptConfig) -> Result<String, String> {
    let si = fixture_12()?;
    let budget = 6 * 32u64;
    let mut max_calls = 0u64;
    let mut check = |alg: std::rc::Rc<dyn crate::refute::BipartiteAlgorithm>,
                     label: String|
     -> Result<(), String> {
        let counting = CountingAlg::new(alg);
        let cex = refute_zero_round(&si, &counting).map_err(|e| format!("{label}: {e}"))?;
        verify_counterexample(&si, &counting, &cex).map_err(|e| format!("{label}: {e}"))?;
        if counting.calls() > budget {
            return Err(format!("{label}: {} queries over the {budget} budget", counting.calls()));
        }
        max_calls = max_calls.max(counting.calls());
        Ok(())
    };
    for kind in StrawmanKind::ALL {
        check(strawman(kind, 0, crate::graph::Side::Black), kind.label().to_string())?;
    }
    for seed in 0..1000u64 {
        let side = if seed % 2 == 0 { crate::graph::Side::Black } else { crate::graph::Side::White };
        check(seeded_random(seed, side), format!("seeded-{seed}"))?;
    }
    let _ = cfg;
    Ok(format!(
        "5 strawmen + 1000 seeded locality-0 algorithms refuted, max {max_calls} of {budget} queries"
    ))
}

fn criterion_refutation_pipeline(cfg: &AcceptConfig) -> Result<String, String> {
    let si = fixture_12()?;
    for kind in StrawmanKind::ALL {
        let alg = strawman(kind, 1, crate::graph::Side::Black);
        let label = kind.label();
        let r = refute(&si, alg.clone()).map_err(|e| format!("{label}: {e}"))?;
        verify_counterexample(&si, alg.as_ref(), &r.counterexample)
            .map_err(|e| format!("{label}: certificate does not re-verify: {e}"))?;
        // the brute-force scan runs at its cap (the fixture has exactly 30
        // edges) and the certificate input reproduces a violation under the
        // same validator
        let first = exhaustive_check(&si, alg.as_ref(), Some(EXHAUSTIVE_EDGE_CAP))
            .map_err(|e| format!("{label}: {e}"))?;
        if first.is_none() {
            return Err(format!("{label}: exhaustive scan found no violation"));
        }
        let mask = r
            .counterexample
            .input_mask(si.graph.m())
            .map_err(|e| format!("{label}: {e}"))?;
        let viols = violations_on_input(&si, alg.as_ref(), mask)
            .map_err(|e| format!("{label}: {e}"))?;
        if !viols
            .iter()
            .any(|w| w.node == r.counterexample.violating_node && w.kind == r.counterexample.kind)
        {
            return Err(format!("{label}: certificate input does not reproduce its violation"));
        }
    }
    let _ = cfg;
    Ok("5 strawmen refuted at locality 1; certificates cross-checked against the brute-force scan".into())
}

pub fn criterion_heavy_refutation(cfg: &AcceptConfig) -> CriterionOutcome {
    run_timed("c8-heavy", "radius-2 refutation on the girth-6 fixture", || {
        let (g, c) = crate::graph::pg2_4_incidence();
        let si = SupportInstance::with_identity_ids(g, c).map_err(|e| e.to_string())?;
        let mut refuted = Vec::new();
        for kind in [StrawmanKind::LowestEdgeO, StrawmanKind::Parity] {
            let alg = strawman(kind, 2, crate::graph::Side::Black);
            let r = refute(&si, alg.clone()).map_err(|e| format!("{}: {e}", kind.label()))?;
            verify_counterexample(&si, alg.as_ref(), &r.counterexample)
                .map_err(|e| format!("{}: {e}", kind.label()))?;
            refuted.push(format!("{} ({:?})", kind.label(), r.counterexample.kind));
        }
        let _ = cfg;
        Ok(format!("2 strawmen refuted at locality 2 on 42 nodes: {}", refuted.join(", ")))
    })
}

fn criterion_elimination_soundness(cfg: &AcceptConfig) -> Result<String, String> {
    let si = fixture_12()?;
    for seed in 0..100u64 {
        let alg = seeded_random_at(cfg.seed.wrapping_add(seed), 1, crate::graph::Side::Black);
        let label = alg.name();
        let elim = crate::refute::eliminate_round(&si, alg.clone())
            .map_err(|e| format!("{label}: {e}"))?;
        let cex0 = exhaustive_check(&si, &elim, None)
            .map_err(|e| format!("{label}: {e}"))?
            .ok_or_else(|| format!("{label}: eliminated algorithm survived the brute-force scan"))?;
        let lifted =
            lift_counterexample(&si, alg.as_ref(), &cex0).map_err(|e| format!("{label}: {e}"))?;
        verify_counterexample(&si, alg.as_ref(), &lifted).map_err(|e| format!("{label}: {e}"))?;
    }
    Ok("100 seeded locality-1 algorithms: every brute-force violation of the eliminated \
        algorithm lifts to a verified violation"
        .into())
}

// ---------------------------------------------------------------------------
// Criterion 10: full-information reference

fn criterion_reference_orientation(cfg: &AcceptConfig) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(10));
    let mut checked = 0usize;
    let mut max_n = 0usize;
    for i in 0..1000usize {
        let g = match i % 5 {
            0 => {
                let d = [3u32, 4, 5][i % 3];
                let n = rng.gen_range(2..=1000u32) * 2;
                random_regular(n as usize, d, rng.gen())
                    .map_err(|e| format!("instance {i}: generation failed: {e}"))?
            }
            1 => random_tree(rng.gen_range(2..=10_000), rng.gen()),
            2 => path(rng.gen_range(2..=5000)),
            3 => cycle(rng.gen_range(3..=5000)),
            _ => {
                let mut small = ChaCha8Rng::seed_from_u64(rng.gen());
                let n = small.gen_range(2..=40u32);
                let m = small.gen_range(1..=120usize);
                let edges: Vec<(u32, u32)> = (0..m)
                    .map(|_| loop {
                        let u = small.gen_range(0..n);
                        let v = small.gen_range(0..n);
                        if u != v {
                            break (u, v);
                        }
                    })
                    .collect();
                Multigraph::new(n as usize, &edges).expect("no self-loops")
            }
        };
        let ids = IdKind::ALL[i % IdKind::ALL.len()].build(&g, rng.gen());
        let o = global_orientation(&g, &ids);
        let viols = validate_sinkless(&g, &o).map_err(|e| format!("instance {i}: {e}"))?;
        if !viols.is_empty() {
            return Err(format!(
                "instance {i} (n={}): {} sink violations, first at {}",
                g.n(),
                viols.len(),
                viols[0].node
            ));
        }
        max_n = max_n.max(g.n());
        checked += 1;
    }
    Ok(format!("{checked} reference orientations sinkless, largest instance n={max_n}"))
}

// ---------------------------------------------------------------------------

pub fn run_criterion(id: u32, cfg: &AcceptConfig) -> CriterionOutcome {
    match id {
        1 => run_timed("c1", "end-to-end validity", || criterion_validity(cfg)),
        2 => run_timed("c2", "locality budget", || criterion_locality_budget(cfg)),
        3 => run_timed("c3", "greedy doubling invariant", || criterion_greedy_invariant(cfg)),
        4 => run_timed("c4", "clustering invariants", || criterion_clustering(cfg)),
        5 => run_timed("c5", "no impossibility sentinels", || criterion_no_sentinels(cfg)),
        6 => run_timed("c6", "composition equivalence", || criterion_composition(cfg)),
        7 => run_timed("c7", "zero-round refutation", || criterion_zero_round(cfg)),
        8 => run_timed("c8", "refutation pipeline", || criterion_refutation_pipeline(cfg)),
        9 => {
            run_timed("c9", "round-elimination soundness", || criterion_elimination_soundness(cfg))
        }
        10 => {
            run_timed("c10", "reference orientation validity", || {
                criterion_reference_orientation(cfg)
            })
        }
        other => CriterionOutcome {
            id: format!("c{other}"),
            name: "unknown criterion",
            passed: false,
            detail: format!("no criterion {other}; valid ids are 1..=10"),
            wall_ms: 0,
        },
    }
}

pub fn run_all(cfg: &AcceptConfig) -> Vec<CriterionOutcome> {
    let mut out: Vec<CriterionOutcome> = (1..=10).map(|id| run_criterion(id, cfg)).collect();
    if cfg.heavy {
        out.push(criterion_heavy_refutation(cfg));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversary_combos_number_twenty() {
        let combos = adversary_combos(7);
        assert_eq!(combos.len(), 20);
        let mut keys: Vec<String> =
            combos.iter().map(|(s, i, seed)| format!("{}/{}/{seed}", s.label(), i.label())).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 20);
    }

    #[test]
    fn matrix_graph_list_covers_the_grid() {
        let graphs = matrix_graphs(7);
        assert_eq!(graphs.len(), 11);
        let refs: Vec<&str> = graphs.iter().map(|(r, _)| r.as_str()).collect();
        assert!(refs.contains(&"regular(n=100000,d=10)"));
        assert!(refs.contains(&"tree(n=10000)"));
        assert!(refs.contains(&"path7"));
    }

    #[test]
    fn outcome_lines_read_as_pass_fail() {
        let ok = CriterionOutcome {
            id: "c7".into(),
            name: "zero-round refutation",
            passed: true,
            detail: "all good".into(),
            wall_ms: 1500,
        };
        assert_eq!(ok.to_string(), "c7 zero-round refutation: PASS - all good (1.5s)");
        let bad = run_criterion(99, &AcceptConfig::default());
        assert!(!bad.passed);
        assert!(bad.to_string().contains("FAIL"));
    }

    #[test]
    fn random_multigraphs_fit_the_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut saw_parallel = false;
        for _ in 0..40 {
            let g = random_multigraph(&mut rng);
            assert!(g.n() >= 2 && g.n() <= 200);
            assert!(g.m() >= 1 && g.m() <= 800);
            saw_parallel |= !g.is_simple();
        }
        assert!(saw_parallel, "multigraph sampler never produced a parallel edge");
    }
}
