//! `sinkless`: generate graphs, run the SLOCAL pipeline, refute candidate
//! algorithms on the support fixtures, and drive the acceptance matrix.
//!
//! Exit codes are a stable contract: 0 success, 1 validation or refutation
//! failure, 2 usage error (bad flags, unparsable input, infeasible
//! parameters). Reruns with identical flags and seed produce byte-identical
//! report payloads; timings and host live in the separate `meta` field.

use clap::{Parser, Subcommand, ValueEnum};
use sinkless_core::accept::{self, AcceptConfig, DEFAULT_ACCEPT_SEED};
use sinkless_core::cluster::sinkless_orientation_slocal;
use sinkless_core::exec::{IdKind, Instance, ScheduleKind};
use sinkless_core::graph::{
    bipartite_double_cover, fig_path7, k6_double_cover, parse_edge_list, pg2_4_incidence,
    random_regular, random_tree, to_edge_list, Multigraph, Side,
};
use sinkless_core::greedy::GreedyPolicy;
use sinkless_core::orient::validate_sinkless;
use sinkless_core::refute::{
    refute, strawman, verify_counterexample, BipartiteAlgorithm, Certificate, RefuteError,
    StrawmanKind, SupportInstance, TableAlgorithm,
};
use sinkless_core::report::{
    digest_outputs, GraphSummary, PipelineReport, Report, TrialDescriptor, TrialRecord,
    TrialResult,
};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "sinkless", version, about = "Sinkless-orientation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a graph, print its summary, and write it as an edge list
    Generate {
        #[arg(long, value_enum)]
        family: Family,
        /// Node count (regular, tree, double-cover)
        #[arg(short = 'n', long)]
        nodes: Option<usize>,
        /// Degree (regular, double-cover)
        #[arg(short = 'd', long)]
        degree: Option<u32>,
        /// Fixture name: k6-cover, pg2-4, or path7
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ACCEPT_SEED)]
        seed: u64,
        /// Output file; without it the edge list goes to stdout and the
        /// summary moves to stderr
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the SLOCAL pipeline on a graph file and emit a report
    Run {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = IdsArg::Identity)]
        ids: IdsArg,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Identity)]
        schedule: ScheduleArg,
        #[arg(long, default_value_t = DEFAULT_ACCEPT_SEED)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = FormatArg::Json)]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refute a candidate algorithm and write the verified certificate
    Refute {
        /// Support fixture: k6-cover (girth 4) or pg2-4 (girth 6)
        #[arg(long, default_value = "k6-cover")]
        support: String,
        /// Builtin candidate (constant-o, constant-i, parity, lowest-edge-o,
        /// id-compare) or path to a lookup-table file
        #[arg(long)]
        candidate: String,
        /// Candidate locality; required for builtins, cross-checked for
        /// lookup tables
        #[arg(short = 't', long)]
        locality: Option<u32>,
        /// Active side for builtin candidates: black or white
        #[arg(long, default_value = "black")]
        active: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run acceptance criteria and print one pass/fail line per criterion
    Acceptance {
        #[arg(long, default_value_t = DEFAULT_ACCEPT_SEED)]
        seed: u64,
        /// Also run the radius-2 refutation on the 42-node girth-6 fixture
        #[arg(long)]
        heavy: bool,
        /// Comma-separated criteria (e.g. "c1,c7" or "3"); an empty list
        /// selects nothing and passes trivially
        #[arg(long)]
        only: Option<String>,
        /// Swap in the broken greedy tie rule; the greedy criterion must
        /// then fail
        #[arg(long)]
        inject_greedy_bug: bool,
        /// Write the outcomes as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Regular,
    Tree,
    DoubleCover,
    Fixture,
}

#[derive(Clone, Copy, ValueEnum)]
enum IdsArg {
    Identity,
    Random,
    Degree,
}

impl IdsArg {
    fn kind(self) -> IdKind {
        match self {
            IdsArg::Identity => IdKind::Identity,
            IdsArg::Random => IdKind::RandomPoly,
            IdsArg::Degree => IdKind::ByDegree,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Identity,
    Reverse,
    Random,
    Bfs,
    Degree,
}

impl ScheduleArg {
    fn kind(self) -> ScheduleKind {
        match self {
            ScheduleArg::Identity => ScheduleKind::Identity,
            ScheduleArg::Reverse => ScheduleKind::Reversed,
            ScheduleArg::Random => ScheduleKind::Random,
            ScheduleArg::Bfs => ScheduleKind::Bfs,
            ScheduleArg::Degree => ScheduleKind::DegreeDesc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

enum CliError {
    /// Bad flags, unparsable input, infeasible parameters. Exit 2.
    Usage(String),
    /// The toolkit ran and found the input wanting. Exit 1.
    Failure(String),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failure(msg: impl Into<String>) -> CliError {
    CliError::Failure(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_thread_pool().and_then(|()| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn init_thread_pool() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SINKLESS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| usage(format!("SINKLESS_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool setup failed: {e}")))
}

fn dispatch(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Generate { family, nodes, degree, name, seed, out } => {
            cmd_generate(family, nodes, degree, name, seed, out)
        }
        Cmd::Run { graph, ids, schedule, seed, format, out } => {
            cmd_run(graph, ids, schedule, seed, format, out)
        }
        Cmd::Refute { support, candidate, locality, active, out } => {
            cmd_refute(&support, &candidate, locality, &active, out)
        }
        Cmd::Acceptance { seed, heavy, only, inject_greedy_bug, out } => {
            cmd_acceptance(seed, heavy, only, inject_greedy_bug, out)
        }
    }
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<bool, CliError> {
    match out {
        Some(p) => {
            fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Ok(true)
        }
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(false)
        }
    }
}

fn norm(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace('_', "-")
}

// ---------------------------------------------------------------------------

fn cmd_generate(
    family: Family,
    nodes: Option<usize>,
    degree: Option<u32>,
    name: Option<String>,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let need_n = || nodes.ok_or_else(|| usage("this family needs --nodes"));
    let need_d = || degree.ok_or_else(|| usage("this family needs --degree"));
    let (label, g): (String, Multigraph) = match family {
        Family::Regular => {
            let (n, d) = (need_n()?, need_d()?);
            let g = random_regular(n, d, seed).map_err(|e| usage(e.to_string()))?;
            (format!("regular(n={n},d={d})"), g)
        }
        Family::Tree => {
            let n = need_n()?;
            (format!("tree(n={n})"), random_tree(n, seed))
        }
        Family::DoubleCover => {
            let (n, d) = (need_n()?, need_d()?);
            let base = random_regular(n, d, seed).map_err(|e| usage(e.to_string()))?;
            let (g, _) = bipartite_double_cover(&base);
            (format!("double-cover(n={n},d={d})"), g)
        }
        Family::Fixture => {
            let name = name.ok_or_else(|| usage("--family fixture needs --name"))?;
            match norm(&name).as_str() {
                "k6-cover" => ("fixture(k6-cover)".into(), k6_double_cover().0),
                "pg2-4" => ("fixture(pg2-4)".into(), pg2_4_incidence().0),
                "path7" => ("fixture(path7)".into(), fig_path7()),
                other => {
                    return Err(usage(format!(
                        "unknown fixture {other:?}; expected k6-cover, pg2-4, or path7"
                    )))
                }
            }
        }
    };
    let summary = GraphSummary::of(label, &g);
    let wrote_file = write_or_print(out.as_ref(), &to_edge_list(&g))?;
    if wrote_file {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn cmd_run(
    graph: PathBuf,
    ids: IdsArg,
    schedule: ScheduleArg,
    seed: u64,
    format: FormatArg,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let text =
        fs::read_to_string(&graph).map_err(|e| usage(format!("{}: {e}", graph.display())))?;
    let g = Arc::new(
        parse_edge_list(&text).map_err(|e| usage(format!("{}: {e}", graph.display())))?,
    );
    let id_kind = ids.kind();
    let schedule_kind = schedule.kind();
    let inst = Instance::new(g.clone(), Arc::new(id_kind.build(&g, seed)));
    let order = schedule_kind.build(&g, seed);
    let run =
        sinkless_orientation_slocal(&inst, &order).map_err(|e| failure(format!("pipeline: {e}")))?;
    let viols = validate_sinkless(&g, &run.orientation).map_err(|e| failure(e.to_string()))?;

    let mut report = Report::new("run", seed);
    report.push(TrialRecord {
        descriptor: TrialDescriptor {
            graph_ref: graph.display().to_string(),
            algorithm_name: "slocal_so".into(),
            id_adversary: id_kind.label().into(),
            schedule_adversary: schedule_kind.label().into(),
            seed,
        },
        result: TrialResult {
            outputs_digest: digest_outputs(&run.raw_outputs),
            max_radius_used: run.stats.measured_max_radius,
            violations: viols.len(),
        },
        pipeline: Some(PipelineReport::from(&run.stats)),
    });
    report.finish(started.elapsed().as_millis() as u64);
    let rendered = match format {
        FormatArg::Json => report.to_json(),
        FormatArg::Csv => report.to_csv(),
    };
    if write_or_print(out.as_ref(), &rendered)? {
        println!(
            "n={} max_radius={} declared={} violations={}",
            g.n(),
            run.stats.measured_max_radius,
            run.stats.declared_locality,
            viols.len()
        );
    }
    if !viols.is_empty() {
        return Err(failure(format!("{} sink violations", viols.len())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn builtin_names() -> String {
    StrawmanKind::ALL.map(|k| k.label()).join(", ")
}

fn cmd_refute(
    support: &str,
    candidate: &str,
    locality: Option<u32>,
    active: &str,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let support_label = norm(support);
    let (g, c) = match support_label.as_str() {
        "k6-cover" => k6_double_cover(),
        "pg2-4" => pg2_4_incidence(),
        other => {
            return Err(usage(format!("unknown support {other:?}; expected k6-cover or pg2-4")))
        }
    };
    let si = SupportInstance::with_identity_ids(g, c).map_err(|e| usage(e.to_string()))?;
    let active = match norm(active).as_str() {
        "black" => Side::Black,
        "white" => Side::White,
        other => return Err(usage(format!("unknown side {other:?}; expected black or white"))),
    };
    let alg: Rc<dyn BipartiteAlgorithm> = match StrawmanKind::parse(&norm(candidate)) {
        Some(kind) => {
            let t = locality
                .ok_or_else(|| usage("builtin candidates need --locality (e.g. -t 1)"))?;
            strawman(kind, t, active)
        }
        None => {
            let text = fs::read_to_string(candidate).map_err(|e| {
                usage(format!(
                    "candidate {candidate:?} is not a builtin ({}) and not a readable \
                     lookup-table file: {e}",
                    builtin_names()
                ))
            })?;
            let table = TableAlgorithm::parse(&text)
                .map_err(|e| usage(format!("{candidate}: {e}")))?;
            let table: Rc<dyn BipartiteAlgorithm> = Rc::new(table);
            if let Some(t) = locality {
                let declared = table.locality(si.graph.n());
                if t != declared {
                    return Err(usage(format!(
                        "--locality {t} disagrees with the table's declared locality {declared}"
                    )));
                }
            }
            table
        }
    };

    let refutation = match refute(&si, alg.clone()) {
        Ok(r) => r,
        Err(RefuteError::LocalityOutOfRange { t, girth }) => {
            return Err(usage(format!(
                "locality {t} is out of range on this support: elimination needs 2t < girth ({girth})"
            )))
        }
        Err(e @ RefuteError::Unconfirmed(_)) | Err(e @ RefuteError::Internal(_)) => {
            return Err(failure(format!("refuter bug sentinel: {e}")))
        }
        Err(e) => return Err(usage(e.to_string())),
    };
    // Replay once more right before writing anything.
    verify_counterexample(&si, alg.as_ref(), &refutation.counterexample)
        .map_err(|e| failure(format!("certificate failed independent replay: {e}")))?;
    let cert = Certificate::new(support_label.clone(), &refutation.counterexample);
    let json = serde_json::to_string_pretty(&cert)
        .map_err(|e| failure(format!("certificate serialization: {e}")))?;
    let wrote_file = write_or_print(out.as_ref(), &json)?;
    let line = format!(
        "refuted {} on {}: {:?} at node {} using {} input edges, {} rounds eliminated",
        alg.name(),
        support_label,
        refutation.counterexample.kind,
        refutation.counterexample.violating_node,
        refutation.counterexample.input_edges.len(),
        refutation.rounds_eliminated
    );
    if wrote_file {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn parse_criteria(raw: &str) -> Result<Vec<u32>, CliError> {
    let mut ids = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let digits = part.strip_prefix('c').or_else(|| part.strip_prefix('C')).unwrap_or(part);
        let id: u32 = digits
            .parse()
            .map_err(|_| usage(format!("bad criterion {part:?}; expected c1..c10")))?;
        if !(1..=10).contains(&id) {
            return Err(usage(format!("criterion {part:?} out of range; expected c1..c10")));
        }
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

fn cmd_acceptance(
    seed: u64,
    heavy: bool,
    only: Option<String>,
    inject_greedy_bug: bool,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ids = match &only {
        None => (1..=10).collect(),
        Some(raw) => parse_criteria(raw)?,
    };
    if ids.is_empty() && !heavy {
        eprintln!("warning: no criteria selected");
        println!("0 of 0 criteria passed (trivially)");
        return Ok(());
    }
    let cfg = AcceptConfig {
        seed,
        heavy,
        greedy_policy: if inject_greedy_bug {
            GreedyPolicy::ReverseRule2
        } else {
            GreedyPolicy::Standard
        },
    };
    let mut outcomes = Vec::new();
    for &id in &ids {
        let outcome = accept::run_criterion(id, &cfg);
        println!("{outcome}");
        outcomes.push(outcome);
    }
    if heavy {
        let outcome = accept::criterion_heavy_refutation(&cfg);
        println!("{outcome}");
        outcomes.push(outcome);
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("{passed} of {} criteria passed", outcomes.len());
    if let Some(p) = &out {
        let json = serde_json::to_string_pretty(&outcomes)
            .map_err(|e| failure(format!("outcome serialization: {e}")))?;
        fs::write(p, json).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    if passed < outcomes.len() {
        return Err(failure(format!("{} criteria failed", outcomes.len() - passed)));
    }
    Ok(())
}
