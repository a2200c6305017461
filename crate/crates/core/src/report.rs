//! Machine-readable run reports. The deterministic part of a report (the
//! payload) is kept apart from timings and host facts (the meta), so a rerun
//! with the same config and seed produces a byte-identical payload and
//! golden-file tests stay stable.

use crate::cluster::PipelineStats;
use crate::exec::Blob;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDescriptor {
    pub graph_ref: String,
    pub algorithm_name: String,
    pub id_adversary: String,
    pub schedule_adversary: String,
    pub seed: u64,
}

impl TrialDescriptor {
    /// Stable sort key; report assembly orders trials by it, never by
    /// completion order.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{:020}",
            self.graph_ref, self.algorithm_name, self.id_adversary, self.schedule_adversary, self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outputs_digest: String,
    pub max_radius_used: u32,
    pub violations: usize,
}

/// Per-trial pipeline figures, one row per run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub n: usize,
    pub t: u32,
    pub declared_locality: u32,
    pub measured_max_radius: u32,
    pub cluster_count: usize,
    pub max_cluster_radius: u32,
    pub violations: usize,
}

impl From<&PipelineStats> for PipelineReport {
    fn from(s: &PipelineStats) -> Self {
        PipelineReport {
            n: s.n,
            t: s.t,
            declared_locality: s.declared_locality,
            measured_max_radius: s.measured_max_radius,
            cluster_count: s.cluster_count,
            max_cluster_radius: s.max_owner_dist,
            violations: s.violations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub descriptor: TrialDescriptor,
    pub result: TrialResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineReport>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub command: String,
    pub seed: u64,
    pub trials: Vec<TrialRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub wall_time_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_unix_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub payload: ReportPayload,
    pub meta: ReportMeta,
}

impl Report {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        Report {
            payload: ReportPayload { command: command.into(), seed, trials: Vec::new() },
            meta: ReportMeta::default(),
        }
    }

    pub fn push(&mut self, trial: TrialRecord) {
        self.payload.trials.push(trial);
    }

    pub fn finish(&mut self, wall_time_ms: u64) {
        self.payload.trials.sort_by_key(|t| t.descriptor.key());
        self.meta.wall_time_ms = wall_time_ms;
        self.meta.host = std::env::var("HOSTNAME").ok();
        self.meta.started_unix_ms = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_millis() as u64);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The deterministic half alone, for golden-file comparisons.
    pub fn payload_json(&self) -> String {
        serde_json::to_string_pretty(&self.payload).expect("payload serializes")
    }

    /// One row per trial, flattened. Pipeline columns are empty for trials
    /// without a pipeline run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "graph_ref,algorithm,ids,schedule,seed,outputs_digest,max_radius_used,violations,\
             n,t,declared_locality,measured_max_radius,cluster_count,max_cluster_radius\n",
        );
        for t in &self.payload.trials {
            let d = &t.descriptor;
            let r = &t.result;
            let mut row = vec![
                csv_field(&d.graph_ref),
                csv_field(&d.algorithm_name),
                csv_field(&d.id_adversary),
                csv_field(&d.schedule_adversary),
                d.seed.to_string(),
                r.outputs_digest.clone(),
                r.max_radius_used.to_string(),
                r.violations.to_string(),
            ];
            match &t.pipeline {
                Some(p) => row.extend([
                    p.n.to_string(),
                    p.t.to_string(),
                    p.declared_locality.to_string(),
                    p.measured_max_radius.to_string(),
                    p.cluster_count.to_string(),
                    p.max_cluster_radius.to_string(),
                ]),
                None => row.extend(std::iter::repeat(String::new()).take(6)),
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Hex digest over the per-node output blobs, length-prefixed so blob
/// boundaries matter.
pub fn digest_outputs(outs: &[Arc<Blob>]) -> String {
    let mut h = Sha256::new();
    for blob in outs {
        h.update((blob.len() as u64).to_le_bytes());
        h.update(blob.as_slice());
    }
    hex(&h.finalize())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// What `generate` prints about a graph it wrote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub family: String,
    pub n: usize,
    pub m: usize,
    pub girth: Option<u32>,
    pub regular_degree: Option<u32>,
}

impl GraphSummary {
    pub fn of(family: impl Into<String>, g: &crate::graph::Multigraph) -> Self {
        let degrees: Vec<u32> = g.nodes().map(|v| g.degree(v)).collect();
        let regular_degree = match (degrees.iter().min(), degrees.iter().max()) {
            (Some(&lo), Some(&hi)) if lo == hi => Some(lo),
            _ => None,
        };
        GraphSummary {
            family: family.into(),
            n: g.n(),
            m: g.m(),
            girth: g.girth(),
            regular_degree,
        }
    }
}

impl std::fmt::Display for GraphSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: n={} m={}", self.family, self.n, self.m)?;
        match self.girth {
            Some(g) => write!(f, " girth={g}")?,
            None => write!(f, " girth=none")?,
        }
        match self.regular_degree {
            Some(d) => write!(f, " regular d={d}"),
            None => write!(f, " irregular"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(graph: &str, seed: u64) -> TrialRecord {
        TrialRecord {
            descriptor: TrialDescriptor {
                graph_ref: graph.into(),
                algorithm_name: "slocal_so".into(),
                id_adversary: "identity".into(),
                schedule_adversary: "random".into(),
                seed,
            },
            result: TrialResult {
                outputs_digest: digest_bytes(graph.as_bytes()),
                max_radius_used: 4,
                violations: 0,
            },
            pipeline: None,
        }
    }

    #[test]
    fn digests_hear_every_byte() {
        let a = vec![Arc::new(vec![1u8, 2, 3]), Arc::new(vec![4u8])];
        let b = vec![Arc::new(vec![1u8, 2, 3]), Arc::new(vec![5u8])];
        let boundary_moved = vec![Arc::new(vec![1u8, 2]), Arc::new(vec![3u8, 4])];
        assert_eq!(digest_outputs(&a), digest_outputs(&a));
        assert_ne!(digest_outputs(&a), digest_outputs(&b));
        assert_ne!(digest_outputs(&a), digest_outputs(&boundary_moved));
        assert_eq!(digest_outputs(&a).len(), 64);
    }

    #[test]
    fn payload_is_deterministic_across_completion_orders() {
        let mut forward = Report::new("run", 9);
        let mut backward = Report::new("run", 9);
        for seed in 0..5 {
            forward.push(trial("g1", seed));
            forward.push(trial("g2", seed));
        }
        for seed in (0..5).rev() {
            backward.push(trial("g2", seed));
            backward.push(trial("g1", seed));
        }
        forward.finish(10);
        backward.finish(99);
        assert_eq!(forward.payload_json(), backward.payload_json());
        assert_ne!(forward.meta.wall_time_ms, backward.meta.wall_time_ms);
    }

    #[test]
    fn csv_flattens_and_escapes() {
        let mut report = Report::new("run", 1);
        let mut t = trial("regular(n=10,d=3)", 7);
        t.pipeline = Some(PipelineReport {
            n: 10,
            t: 3,
            declared_locality: 83,
            measured_max_radius: 9,
            cluster_count: 2,
            max_cluster_radius: 5,
            violations: 0,
        });
        report.push(t);
        report.push(trial("plain", 8));
        report.finish(0);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("graph_ref,"));
        let quoted: Vec<&str> = lines.iter().filter(|l| l.contains('"')).copied().collect();
        assert_eq!(quoted.len(), 1);
        assert!(quoted[0].starts_with("\"regular(n=10,d=3)\","));
        assert!(quoted[0].ends_with(",10,3,83,9,2,5"));
        assert_eq!(lines[1].matches(',').count(), 13);
        assert!(lines[1].starts_with("plain,"));
        assert_eq!(csv_field("a\"b"), "\"a\"\"b\"");
    }

    #[test]
    fn report_serde_round_trips() {
        let mut report = Report::new("acceptance", 3);
        report.push(trial("g", 0));
        report.finish(5);
        let json = report.to_json();
        assert_eq!(serde_json::from_str::<Report>(&json).unwrap(), report);
    }

    #[test]
    fn graph_summary_reads_off_the_graph() {
        let g = crate::graph::path(4);
        let s = GraphSummary::of("path", &g);
        assert_eq!((s.n, s.m, s.girth, s.regular_degree), (4, 3, None, None));
        let (g, _) = crate::graph::k55();
        let s = GraphSummary::of("k55", &g);
        assert_eq!((s.girth, s.regular_degree), (Some(4), Some(5)));
        assert!(s.to_string().contains("regular d=5"));
    }
}
