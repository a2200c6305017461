//! Sequential sinkless orientation built from four composed SLOCAL stages:
//! a distance-separated ruling set, Voronoi-style cluster ownership, a greedy
//! orientation of the edges between clusters, and a canonical plan for the
//! edges inside each cluster. The composed algorithm runs under any schedule
//! and its measured radius is certified by the execution meter.

use crate::exec::{
    compose_slocal, run_slocal, run_slocal_with_prior, wire, Blob, Composed, ExecError, Instance,
    MapPrior, SlocalAlgorithm, StepOutcome, View,
};
use crate::graph::{EdgeId, GraphError, IdAssignment, Identifier, Multigraph, NodeId};
use crate::greedy::{greedy_high_degree_so, GreedyPolicy, GreedyRun};
use crate::orient::{
    canonical_cycle, high_degree_threshold, orient_toward_set, validate_sinkless, Orientation,
};
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::rc::Rc;
use std::sync::Arc;
use thiserror::Error;

/// Message prefix of the in-run form of [`ClusterError::Sentinel`], so a
/// failed run can still be classified by the caller.
pub const SENTINEL_PREFIX: &str = "certificate missing";

#[derive(Error, Debug)]
pub enum ClusterError {
    #[error("clustering parameter needs n >= 2, got {0}")]
    TooSmall(usize),
    #[error("certificate missing: {0}")]
    Sentinel(String),
    #[error("execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("{0}")]
    Invalid(String),
}

/// True for the sentinel case of [`find_cycle_or_low_degree`], whether it
/// surfaced directly or wrapped in an execution error by a stage.
pub fn error_is_sentinel(e: &ClusterError) -> bool {
    match e {
        ClusterError::Sentinel(_) => true,
        ClusterError::Exec(inner) => format!("{inner:#}").contains(SENTINEL_PREFIX) || {
            let mut cur: &dyn std::error::Error = inner;
            let mut hit = cur.to_string().contains(SENTINEL_PREFIX);
            while let Some(next) = cur.source() {
                hit = hit || next.to_string().contains(SENTINEL_PREFIX);
                cur = next;
            }
            hit
        },
        _ => false,
    }
}

fn ceil_log2(x: u32) -> u32 {
    if x <= 1 {
        0
    } else {
        32 - (x - 1).leading_zeros()
    }
}

/// Clustering radius parameter: the smallest `T` with `2^T` at or above the
/// high-degree threshold for `n`. Undefined below two nodes.
pub fn t_param(n: usize) -> Result<u32, ClusterError> {
    if n < 2 {
        return Err(ClusterError::TooSmall(n));
    }
    Ok(ceil_log2(high_degree_threshold(n)))
}

/// Parameter used by the stages; single-node instances run with the `n = 2`
/// value so the pipeline still works on them.
fn t_for(n: usize) -> u32 {
    ceil_log2(high_degree_threshold(n.max(2)))
}

/// Radius every stage's arithmetic builds on.
fn separation_radius(t: u32) -> u32 {
    2 * t + 1
}

/// Exact locality of the fully composed pipeline,
/// `(((2T+1) + 2(2T+1)) + 2(4T+4)) + 2(4T+3)`.
pub fn declared_locality(n: usize) -> u32 {
    22 * t_for(n) + 17
}

// ---------------------------------------------------------------------------
// Stage output blobs

fn bool_blob(b: bool) -> Blob {
    vec![b as u8]
}

fn blob_bool(blob: &[u8]) -> Result<bool, ExecError> {
    match blob {
        [0] => Ok(false),
        [1] => Ok(true),
        _ => Err(ExecError::Decode("expected a single flag byte".into())),
    }
}

/// Per-node clustering verdict: ruling-set membership, owning center, and
/// distance to it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ClusterLabel {
    pub in_set: bool,
    pub owner: NodeId,
    pub dist: u32,
}

impl ClusterLabel {
    fn put(&self, buf: &mut Vec<u8>) {
        buf.push(self.in_set as u8);
        wire::put_u32(buf, self.owner.0);
        wire::put_u32(buf, self.dist);
    }

    fn get(c: &mut wire::Cursor) -> Result<Self, ExecError> {
        let in_set = c.u8()? != 0;
        let owner = NodeId(c.u32()?);
        let dist = c.u32()?;
        Ok(ClusterLabel { in_set, owner, dist })
    }

    fn to_blob(self) -> Blob {
        let mut buf = Vec::with_capacity(9);
        self.put(&mut buf);
        buf
    }

    fn from_blob(blob: &[u8]) -> Result<Self, ExecError> {
        let mut c = wire::Cursor::new(blob);
        let label = Self::get(&mut c)?;
        c.done()?;
        Ok(label)
    }
}

fn put_decisions(buf: &mut Vec<u8>, d: &[(EdgeId, NodeId)]) {
    wire::put_u32(buf, d.len() as u32);
    for &(e, h) in d {
        wire::put_u32(buf, e.0);
        wire::put_u32(buf, h.0);
    }
}

fn get_decisions(c: &mut wire::Cursor) -> Result<Vec<(EdgeId, NodeId)>, ExecError> {
    let k = c.u32()?;
    let mut out = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let e = EdgeId(c.u32()?);
        let h = NodeId(c.u32()?);
        out.push((e, h));
    }
    Ok(out)
}

/// Output of the inter-cluster stage at one node: its clustering label plus
/// the heads it fixed for boundary edges it was first to process.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct InterOut {
    pub label: ClusterLabel,
    pub decided: Vec<(EdgeId, NodeId)>,
}

impl InterOut {
    fn to_blob(&self) -> Blob {
        let mut buf = Vec::new();
        self.label.put(&mut buf);
        put_decisions(&mut buf, &self.decided);
        buf
    }

    fn from_blob(blob: &[u8]) -> Result<Self, ExecError> {
        let mut c = wire::Cursor::new(blob);
        let label = ClusterLabel::get(&mut c)?;
        let decided = get_decisions(&mut c)?;
        c.done()?;
        Ok(InterOut { label, decided })
    }
}

/// Final per-node output of the pipeline.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FinalOut {
    pub label: ClusterLabel,
    pub inter: Vec<(EdgeId, NodeId)>,
    pub intra: Vec<(EdgeId, NodeId)>,
}

impl FinalOut {
    fn to_blob(&self) -> Blob {
        let mut buf = Vec::new();
        self.label.put(&mut buf);
        put_decisions(&mut buf, &self.inter);
        put_decisions(&mut buf, &self.intra);
        buf
    }

    pub fn from_blob(blob: &[u8]) -> Result<Self, ExecError> {
        let mut c = wire::Cursor::new(blob);
        let label = ClusterLabel::get(&mut c)?;
        let inter = get_decisions(&mut c)?;
        let intra = get_decisions(&mut c)?;
        c.done()?;
        Ok(FinalOut { label, inter, intra })
    }
}

// ---------------------------------------------------------------------------
// Stage 1: ruling set at separation 2T+2

/// Greedy ruling set: a node joins when no earlier-processed member sits
/// within `2T+1`, which spaces members at least `2T+2` apart while keeping
/// every node within `2T+1` of some member.
///
/// The run-scoped scratch keeps, for every node, the distance to the nearest
/// member announced so far; each member paid the full-radius charge when it
/// announced its ball, so answering a later step from `mark` charges exactly
/// the distance that determines the verdict. Replays on foreign states have
/// no scratch and scan their rings directly.
pub struct RulingStage {
    t_override: Option<u32>,
    scratch: RefCell<Option<RulingScratch>>,
}

struct RulingScratch {
    mark: Vec<u32>,
}

impl RulingStage {
    pub fn new(t_override: Option<u32>) -> Self {
        RulingStage {
            t_override,
            scratch: RefCell::new(None),
        }
    }

    fn t(&self, n: usize) -> u32 {
        self.t_override.unwrap_or_else(|| t_for(n))
    }
}

impl SlocalAlgorithm for RulingStage {
    fn name(&self) -> String {
        "ruling-set".into()
    }

    fn locality(&self, n: usize) -> u32 {
        separation_radius(self.t(n))
    }

    fn begin_run(&self, inst: &Instance) {
        *self.scratch.borrow_mut() = Some(RulingScratch {
            mark: vec![u32::MAX; inst.n()],
        });
    }

    fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
        let r = separation_radius(self.t(view.n()));
        let v = view.root();
        let mut guard = self.scratch.borrow_mut();
        let in_set = match guard.as_mut() {
            Some(scr) => {
                let m = scr.mark[v.idx()];
                if m <= r {
                    view.charge_radius(m)?;
                    false
                } else {
                    // Joining is justified by the whole ball being free of
                    // members, a content fact.
                    view.charge_radius(r)?;
                    for (w, d) in view.nodes_within(r)? {
                        if d < scr.mark[w.idx()] {
                            scr.mark[w.idx()] = d;
                        }
                    }
                    true
                }
            }
            None => {
                let mut verdict = true;
                'rings: for ring in 1..=r {
                    for w in view.nodes_at(ring)? {
                        if let Some(st) = view.state(w)? {
                            if blob_bool(&st)? {
                                verdict = false;
                                break 'rings;
                            }
                        }
                    }
                }
                verdict
            }
        };
        let blob = bool_blob(in_set);
        Ok(StepOutcome {
            state: blob.clone(),
            output: blob,
        })
    }

    fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
        Rc::new(RulingStage::new(self.t_override))
    }
}

// ---------------------------------------------------------------------------
// Stage 2: cluster ownership

/// Assigns every node the nearest ruling-set member at the time of its step,
/// ties to the lower identifier.
///
/// Scratch bookkeeping mirrors the ruling stage: each demanded member
/// announces its `2T+1` ball, recording per node the best `(dist, id)`
/// candidate and the distance to the nearest member. `pending` counts nodes
/// that are neither demanded nor inside any announced ball; while it is
/// nonzero a step must still scan its rings, demanding nodes that could join,
/// but nodes inside an announced ball are provably non-members and are
/// skipped. Once `pending` hits zero the membership is final everywhere, so
/// `best` answers in one lookup. Either way the answer is the same function
/// of the prior outputs in the charged ball that a ring scan would read.
pub struct OwnerStage {
    t_override: Option<u32>,
    scratch: RefCell<Option<OwnerScratch>>,
}

struct OwnerScratch {
    graph: Arc<Multigraph>,
    ids: Arc<IdAssignment>,
    demanded: Vec<bool>,
    member: Vec<bool>,
    mark: Vec<u32>,
    best: Vec<Option<(u32, Identifier, NodeId)>>,
    pending: usize,
    tag: Vec<u32>,
    dist: Vec<u32>,
    epoch: u32,
    queue: VecDeque<NodeId>,
}

impl OwnerStage {
    pub fn new(t_override: Option<u32>) -> Self {
        OwnerStage {
            t_override,
            scratch: RefCell::new(None),
        }
    }

    fn t(&self, n: usize) -> u32 {
        self.t_override.unwrap_or_else(|| t_for(n))
    }

    fn demand(scr: &mut OwnerScratch, view: &View, w: NodeId, r: u32) -> Result<(), ExecError> {
        if scr.demanded[w.idx()] {
            return Ok(());
        }
        let member = blob_bool(&view.prior(w)?)?;
        scr.demanded[w.idx()] = true;
        scr.member[w.idx()] = member;
        if scr.mark[w.idx()] > r {
            scr.pending -= 1;
        }
        if member {
            Self::announce(scr, w, r);
        }
        Ok(())
    }

    fn announce(scr: &mut OwnerScratch, c: NodeId, r: u32) {
        scr.epoch += 1;
        scr.tag[c.idx()] = scr.epoch;
        scr.dist[c.idx()] = 0;
        scr.queue.clear();
        scr.queue.push_back(c);
        let id_c = scr.ids.id(c);
        while let Some(x) = scr.queue.pop_front() {
            let dx = scr.dist[x.idx()];
            if dx < scr.mark[x.idx()] {
                if scr.mark[x.idx()] > r && !scr.demanded[x.idx()] {
                    scr.pending -= 1;
                }
                scr.mark[x.idx()] = dx;
            }
            let cand = (dx, id_c, c);
            if scr.best[x.idx()].is_none_or(|b| cand < b) {
                scr.best[x.idx()] = Some(cand);
            }
            if dx == r {
                continue;
            }
            for &(_, y) in scr.graph.incident(x) {
                if scr.tag[y.idx()] != scr.epoch {
                    scr.tag[y.idx()] = scr.epoch;
                    scr.dist[y.idx()] = dx + 1;
                    scr.queue.push_back(y);
                }
            }
        }
    }
}

impl SlocalAlgorithm for OwnerStage {
    fn name(&self) -> String {
        "cluster-owner".into()
    }

    fn locality(&self, n: usize) -> u32 {
        separation_radius(self.t(n))
    }

    fn begin_run(&self, inst: &Instance) {
        let n = inst.n();
        *self.scratch.borrow_mut() = Some(OwnerScratch {
            graph: inst.graph.clone(),
            ids: inst.ids.clone(),
            demanded: vec![false; n],
            member: vec![false; n],
            mark: vec![u32::MAX; n],
            best: vec![None; n],
            pending: n,
            tag: vec![0; n],
            dist: vec![0; n],
            epoch: 0,
            queue: VecDeque::new(),
        });
    }

    fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
        let r = separation_radius(self.t(view.n()));
        let v = view.root();
        let mut guard = self.scratch.borrow_mut();
        let label = match guard.as_mut() {
            Some(scr) => {
                Self::demand(scr, view, v, r)?;
                let found = if scr.pending == 0 {
                    scr.best[v.idx()]
                } else {
                    let mut found: Option<(u32, Identifier, NodeId)> = None;
                    'rings: for ring in 0..=r {
                        if let Some((d, _, _)) = found {
                            if d < ring {
                                break 'rings;
                            }
                        }
                        for w in view.nodes_at(ring)? {
                            let member = if scr.demanded[w.idx()] {
                                scr.member[w.idx()]
                            } else if scr.mark[w.idx()] <= r {
                                false
                            } else {
                                Self::demand(scr, view, w, r)?;
                                scr.member[w.idx()]
                            };
                            if member {
                                let cand = (ring, view.identifier(w)?, w);
                                if found.is_none_or(|f| cand < f) {
                                    found = Some(cand);
                                }
                            }
                        }
                    }
                    found
                };
                let (d, _, c) = found.ok_or_else(|| {
                    ExecError::Algorithm(format!("no ruling-set member within {r} of {v}"))
                })?;
                view.charge_radius(d)?;
                ClusterLabel {
                    in_set: scr.member[v.idx()],
                    owner: c,
                    dist: d,
                }
            }
            None => {
                let in_set = blob_bool(&view.prior(v)?)?;
                let mut found: Option<(u32, Identifier, NodeId)> = None;
                'rings: for ring in 0..=r {
                    if let Some((d, _, _)) = found {
                        if d < ring {
                            break 'rings;
                        }
                    }
                    for w in view.nodes_at(ring)? {
                        if blob_bool(&view.prior(w)?)? {
                            let cand = (ring, view.identifier(w)?, w);
                            if found.is_none_or(|f| cand < f) {
                                found = Some(cand);
                            }
                        }
                    }
                }
                let (d, _, c) = found.ok_or_else(|| {
                    ExecError::Algorithm(format!("no ruling-set member within {r} of {v}"))
                })?;
                view.charge_radius(d)?;
                ClusterLabel {
                    in_set,
                    owner: c,
                    dist: d,
                }
            }
        };
        let blob = label.to_blob();
        Ok(StepOutcome {
            state: blob.clone(),
            output: blob,
        })
    }

    fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
        Rc::new(OwnerStage::new(self.t_override))
    }
}

// ---------------------------------------------------------------------------
// Stage 3: greedy orientation of inter-cluster edges

/// Orients each edge between two clusters at the step of its first-processed
/// endpoint, in ascending edge order within the step, replaying the greedy
/// rules of [`greedy_high_degree_so`] on the cluster multigraph: a satisfied
/// cluster (boundary degree below the threshold for the original `n`, or an
/// out-edge already assigned) absorbs the edge, ties and the both-unsatisfied
/// case resolve by processed counts and center identifiers.
///
/// Per-cluster summaries are rebuilt from visible states on first contact and
/// kept updated; a later hit charges the radius that bounds everything the
/// summary was built from.
pub struct InterStage {
    t_override: Option<u32>,
    scratch: RefCell<Option<InterScratch>>,
}

/// Greedy-relevant summary of one cluster, kept current as decisions land.
struct ClusterInfo {
    decided: HashSet<EdgeId>,
    processed: u32,
    satisfied: bool,
}

struct InterScratch {
    infos: HashMap<NodeId, ClusterInfo>,
}

impl InterStage {
    pub fn new(t_override: Option<u32>) -> Self {
        InterStage {
            t_override,
            scratch: RefCell::new(None),
        }
    }

    fn t(&self, n: usize) -> u32 {
        self.t_override.unwrap_or_else(|| t_for(n))
    }

    /// Everything a cluster summary depends on sits within this radius of
    /// the center: members within `2T+1`, boundary endpoints and their
    /// states one hop further.
    fn info_reach(t: u32) -> u32 {
        separation_radius(t) + 1
    }

    fn build_info(view: &View, center: NodeId, threshold: u32) -> Result<ClusterInfo, ExecError> {
        let mut members = HashSet::from([center]);
        let mut queue = VecDeque::from([center]);
        let mut boundary: BTreeMap<EdgeId, (NodeId, NodeId)> = BTreeMap::new();
        let mut labels: HashMap<NodeId, ClusterLabel> = HashMap::new();
        while let Some(x) = queue.pop_front() {
            for (e, y) in view.incident(x)? {
                if members.contains(&y) {
                    continue;
                }
                let ly = match labels.get(&y) {
                    Some(&l) => l,
                    None => {
                        let l = ClusterLabel::from_blob(&view.prior(y)?)?;
                        labels.insert(y, l);
                        l
                    }
                };
                if ly.owner == center {
                    members.insert(y);
                    queue.push_back(y);
                } else {
                    boundary.insert(e, (x, y));
                }
            }
        }
        let mut decided = HashSet::new();
        let mut processed = 0u32;
        let mut has_out = false;
        let mut seen: HashSet<NodeId> = HashSet::new();
        for &(x, y) in boundary.values() {
            for z in [x, y] {
                if !seen.insert(z) {
                    continue;
                }
                let Some(st) = view.state(z)? else { continue };
                let rec = InterOut::from_blob(&st)?;
                for &(de, dh) in &rec.decided {
                    if let Some(&(bx, _)) = boundary.get(&de) {
                        if decided.insert(de) {
                            processed += 1;
                            if dh != bx {
                                has_out = true;
                            }
                        }
                    }
                }
            }
        }
        let satisfied = (boundary.len() as u32) < threshold || has_out;
        Ok(ClusterInfo {
            decided,
            processed,
            satisfied,
        })
    }

    fn ensure_info(
        view: &View,
        infos: &mut HashMap<NodeId, ClusterInfo>,
        center: NodeId,
        entry_bound: u32,
        t: u32,
        threshold: u32,
        warm: bool,
    ) -> Result<(), ExecError> {
        if infos.contains_key(&center) {
            if warm {
                view.charge_radius(entry_bound + Self::info_reach(t))?;
            }
            return Ok(());
        }
        let info = Self::build_info(view, center, threshold)?;
        infos.insert(center, info);
        Ok(())
    }

    /// Greedy head choice between two cluster summaries, byte-compatible
    /// with the reference greedy on the cluster multigraph.
    fn greedy_head(
        infos: &HashMap<NodeId, ClusterInfo>,
        ids: (Identifier, Identifier),
        a: NodeId,
        b: NodeId,
    ) -> NodeId {
        let (ia, ib) = (&infos[&a], &infos[&b]);
        match (ia.satisfied, ib.satisfied) {
            (true, true) => {
                if ids.0 < ids.1 {
                    a
                } else {
                    b
                }
            }
            (true, false) => a,
            (false, true) => b,
            (false, false) => match ia.processed.cmp(&ib.processed) {
                std::cmp::Ordering::Less => a,
                std::cmp::Ordering::Greater => b,
                std::cmp::Ordering::Equal => {
                    if ids.0 < ids.1 {
                        a
                    } else {
                        b
                    }
                }
            },
        }
    }

    fn apply_decision(
        infos: &mut HashMap<NodeId, ClusterInfo>,
        e: EdgeId,
        a: NodeId,
        b: NodeId,
        head_cluster: NodeId,
    ) {
        for c in [a, b] {
            let info = infos.get_mut(&c).expect("both clusters ensured");
            if info.decided.insert(e) {
                info.processed += 1;
                if head_cluster != c {
                    info.satisfied = true;
                }
            }
        }
    }
}

impl SlocalAlgorithm for InterStage {
    fn name(&self) -> String {
        "inter-cluster".into()
    }

    fn locality(&self, n: usize) -> u32 {
        2 * separation_radius(self.t(n)) + 2
    }

    fn begin_run(&self, _inst: &Instance) {
        *self.scratch.borrow_mut() = Some(InterScratch {
            infos: HashMap::new(),
        });
    }

    fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
        let n = view.n();
        let t = self.t(n);
        let threshold = high_degree_threshold(n);
        let v = view.root();
        let my = ClusterLabel::from_blob(&view.prior(v)?)?;

        let mut guard = self.scratch.borrow_mut();
        let warm = guard.is_some();
        let mut local = InterScratch {
            infos: HashMap::new(),
        };
        let scr = guard.as_mut().unwrap_or(&mut local);

        let mut decided_here: Vec<(EdgeId, NodeId)> = Vec::new();
        for (e, w) in view.incident(v)? {
            let their = ClusterLabel::from_blob(&view.prior(w)?)?;
            if their.owner == my.owner {
                continue;
            }
            if view.state(w)?.is_some() {
                continue;
            }
            Self::ensure_info(view, &mut scr.infos, my.owner, my.dist, t, threshold, warm)?;
            Self::ensure_info(
                view,
                &mut scr.infos,
                their.owner,
                their.dist + 1,
                t,
                threshold,
                warm,
            )?;
            let ids = (
                view.identifier(my.owner)?,
                view.identifier(their.owner)?,
            );
            let head_cluster = Self::greedy_head(&scr.infos, ids, my.owner, their.owner);
            let head_node = if head_cluster == my.owner { v } else { w };
            Self::apply_decision(&mut scr.infos, e, my.owner, their.owner, head_cluster);
            decided_here.push((e, head_node));
        }

        let out = InterOut {
            label: my,
            decided: decided_here,
        };
        let blob = out.to_blob();
        Ok(StepOutcome {
            state: blob.clone(),
            output: blob,
        })
    }

    fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
        Rc::new(InterStage::new(self.t_override))
    }
}

// ---------------------------------------------------------------------------
// Stage 4: canonical plans for intra-cluster edges

/// Orients the edges inside each cluster from a canonical per-cluster plan;
/// the edge itself is reported by its lower-identifier endpoint. With an
/// outgoing boundary edge the plan is a spanning tree toward the exit node;
/// otherwise the cluster certifies a cycle or a node whose true degree is
/// at most two, per [`find_cycle_or_low_degree`].
pub struct IntraStage {
    t_override: Option<u32>,
    scratch: RefCell<Option<IntraScratch>>,
}

struct IntraScratch {
    plans: HashMap<NodeId, Rc<HashMap<EdgeId, NodeId>>>,
}

impl IntraStage {
    pub fn new(t_override: Option<u32>) -> Self {
        IntraStage {
            t_override,
            scratch: RefCell::new(None),
        }
    }

    fn t(&self, n: usize) -> u32 {
        self.t_override.unwrap_or_else(|| t_for(n))
    }

    fn build_plan(view: &View, center: NodeId) -> Result<HashMap<EdgeId, NodeId>, ExecError> {
        let mut members: HashSet<NodeId> = HashSet::from([center]);
        let mut queue = VecDeque::from([center]);
        let mut intra: BTreeMap<EdgeId, (NodeId, NodeId)> = BTreeMap::new();
        let mut boundary: BTreeMap<EdgeId, (NodeId, NodeId)> = BTreeMap::new();
        let mut labels: HashMap<NodeId, ClusterLabel> = HashMap::new();
        while let Some(x) = queue.pop_front() {
            for (e, y) in view.incident(x)? {
                if members.contains(&y) {
                    intra.insert(e, view.endpoints(e));
                    continue;
                }
                let ly = match labels.get(&y) {
                    Some(l) => l.clone(),
                    None => {
                        let l = InterOut::from_blob(&view.prior(y)?)?.label;
                        labels.insert(y, l);
                        l
                    }
                };
                if ly.owner == center {
                    members.insert(y);
                    queue.push_back(y);
                    intra.insert(e, view.endpoints(e));
                } else {
                    boundary.insert(e, (x, y));
                }
            }
        }
        // Heads of boundary edges, all fixed by the previous stage.
        let mut head_of: HashMap<EdgeId, NodeId> = HashMap::new();
        let mut seen: HashSet<NodeId> = HashSet::new();
        for &(x, y) in boundary.values() {
            for z in [x, y] {
                if !seen.insert(z) {
                    continue;
                }
                let rec = InterOut::from_blob(&view.prior(z)?)?;
                for &(de, dh) in &rec.decided {
                    if boundary.contains_key(&de) {
                        head_of.insert(de, dh);
                    }
                }
            }
        }
        let mut member_list: Vec<NodeId> = members.iter().copied().collect();
        member_list.sort();
        let mut ids = Vec::with_capacity(member_list.len());
        let mut g_degree = Vec::with_capacity(member_list.len());
        for &x in &member_list {
            ids.push(view.identifier(x)?);
            g_degree.push(view.degree(x)?);
        }
        let mut bnd = Vec::with_capacity(boundary.len());
        for (&e, &(x, y)) in &boundary {
            let h = *head_of.get(&e).ok_or_else(|| {
                ExecError::Algorithm(format!("boundary edge {e} of cluster {center} undecided"))
            })?;
            bnd.push((e, x, y, h));
        }
        let data = ClusterData {
            center,
            members: member_list,
            ids,
            g_degree,
            intra: intra.into_iter().map(|(e, (x, y))| (e, x, y)).collect(),
            boundary: bnd,
        };
        plan_for_cluster(&data).map_err(|e| match e {
            ClusterError::Exec(inner) => inner,
            other => ExecError::Algorithm(other.to_string()),
        })
    }
}

impl SlocalAlgorithm for IntraStage {
    fn name(&self) -> String {
        "intra-cluster".into()
    }

    fn locality(&self, n: usize) -> u32 {
        2 * separation_radius(self.t(n)) + 1
    }

    fn begin_run(&self, _inst: &Instance) {
        *self.scratch.borrow_mut() = Some(IntraScratch {
            plans: HashMap::new(),
        });
    }

    fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
        let t = self.t(view.n());
        let v = view.root();
        let my = InterOut::from_blob(&view.prior(v)?)?;
        let center = my.label.owner;

        let mut guard = self.scratch.borrow_mut();
        let plan: Rc<HashMap<EdgeId, NodeId>> = match guard.as_mut() {
            Some(scr) => {
                if let Some(plan) = scr.plans.get(&center) {
                    view.charge_radius(my.label.dist + InterStage::info_reach(t))?;
                    plan.clone()
                } else {
                    let plan = Rc::new(Self::build_plan(view, center)?);
                    scr.plans.insert(center, plan.clone());
                    plan
                }
            }
            None => Rc::new(Self::build_plan(view, center)?),
        };

        let my_id = view.identifier(v)?;
        let mut intra: Vec<(EdgeId, NodeId)> = Vec::new();
        for (e, w) in view.incident(v)? {
            if let Some(&h) = plan.get(&e) {
                if my_id < view.identifier(w)? {
                    intra.push((e, h));
                }
            }
        }
        let out = FinalOut {
            label: my.label,
            inter: my.decided,
            intra,
        };
        Ok(StepOutcome {
            state: Vec::new(),
            output: out.to_blob(),
        })
    }

    fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
        Rc::new(IntraStage::new(self.t_override))
    }
}

// ---------------------------------------------------------------------------
// Canonical plan for one cluster (pure; shared by the stage and the global op)

/// All facts about one cluster that the intra plan depends on. `ids` and
/// `g_degree` align with `members`, which is sorted. `boundary` rows are
/// `(edge, member endpoint, outside endpoint, head)`.
struct ClusterData {
    center: NodeId,
    members: Vec<NodeId>,
    ids: Vec<Identifier>,
    g_degree: Vec<u32>,
    intra: Vec<(EdgeId, NodeId, NodeId)>,
    boundary: Vec<(EdgeId, NodeId, NodeId, NodeId)>,
}

fn plan_for_cluster(d: &ClusterData) -> Result<HashMap<EdgeId, NodeId>, ClusterError> {
    let n_l = d.members.len();
    let index: HashMap<NodeId, u32> = d
        .members
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    let local_edges: Vec<(u32, u32)> = d
        .intra
        .iter()
        .map(|&(_, x, y)| (index[&x], index[&y]))
        .collect();
    let local = Multigraph::new(n_l, &local_edges)
        .map_err(|e: GraphError| ClusterError::Invalid(format!("cluster subgraph: {e}")))?;
    let local_ids = IdAssignment::from_ids(d.ids.clone());
    let all_local: Vec<NodeId> = (0..n_l as u32).map(NodeId).collect();

    let mut heads_local: Vec<Option<NodeId>> = vec![None; local.m()];

    let mut exit: Option<NodeId> = None;
    for &(_, x, _, h) in &d.boundary {
        if h != x {
            // Edge points out of the cluster, x is a candidate exit.
            let lx = NodeId(index[&x]);
            if exit.is_none_or(|cur| local_ids.id(lx) < local_ids.id(cur)) {
                exit = Some(lx);
            }
        }
    }

    if let Some(exit) = exit {
        // Spanning tree toward the exit; tree edges point at the parent,
        // the rest at their lower-identifier endpoint.
        let mut dist: Vec<Option<u32>> = vec![None; n_l];
        dist[exit.idx()] = Some(0);
        let mut queue = VecDeque::from([exit]);
        let mut is_tree: Vec<bool> = vec![false; local.m()];
        while let Some(u) = queue.pop_front() {
            for &(e, w) in local.incident(u) {
                if dist[w.idx()].is_none() {
                    dist[w.idx()] = Some(dist[u.idx()].unwrap() + 1);
                    is_tree[e.idx()] = true;
                    heads_local[e.idx()] = Some(u);
                    queue.push_back(w);
                }
            }
        }
        if dist.iter().any(|d| d.is_none()) {
            return Err(ClusterError::Invalid(format!(
                "cluster of {} is not connected",
                d.center
            )));
        }
        for e in local.edges() {
            if !is_tree[e.idx()] {
                let (u, w) = local.endpoints(e);
                heads_local[e.idx()] = Some(if local_ids.id(u) < local_ids.id(w) { u } else { w });
            }
        }
    } else {
        let mut o = Orientation::empty(local.m());
        match find_cycle_or_low_degree(&local, &local_ids, Some(&d.g_degree))? {
            CycleOrNode::Cycle(cycle) => {
                let mut skip: HashSet<EdgeId> = HashSet::new();
                for &(e, w) in &cycle {
                    o.set(e, w);
                    skip.insert(e);
                }
                let mut sources: Vec<NodeId> = cycle.iter().map(|&(_, w)| w).collect();
                sources.sort();
                sources.dedup();
                orient_toward_set(&local, &local_ids, &sources, &skip, &all_local, &mut o);
            }
            CycleOrNode::Node(x) => {
                orient_toward_set(&local, &local_ids, &[x], &HashSet::new(), &all_local, &mut o);
            }
        }
        for e in local.edges() {
            heads_local[e.idx()] = o.head(e);
        }
    }

    let mut plan = HashMap::with_capacity(local.m());
    for (i, &(e, _, _)) in d.intra.iter().enumerate() {
        let h = heads_local[i].ok_or_else(|| {
            ClusterError::Invalid(format!("intra edge {e} left unplanned in cluster of {}", d.center))
        })?;
        plan.insert(e, d.members[h.idx()]);
    }
    Ok(plan)
}

/// Certificate for a cluster with no outgoing boundary edge: a cycle in the
/// subgraph, or a node safe to leave as a sink. Preference order: the
/// canonical cycle when the subgraph has one, otherwise the lowest-identifier
/// node whose true degree is at most two (`true_degree` defaults to the
/// subgraph degrees). Neither existing is the sentinel case.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CycleOrNode {
    /// Walk as `(edge, node the edge points at)` pairs, consecutive and
    /// closed.
    Cycle(Vec<(EdgeId, NodeId)>),
    Node(NodeId),
}

pub fn find_cycle_or_low_degree(
    g: &Multigraph,
    ids: &IdAssignment,
    true_degree: Option<&[u32]>,
) -> Result<CycleOrNode, ClusterError> {
    if let Some(td) = true_degree {
        if td.len() != g.n() {
            return Err(ClusterError::Invalid(format!(
                "true-degree table covers {} nodes, graph has {}",
                td.len(),
                g.n()
            )));
        }
    }
    // Peel to the 2-core; a nonempty core means a cycle exists.
    let mut deg: Vec<u32> = g.nodes().map(|v| g.degree(v)).collect();
    let mut removed = vec![false; g.n()];
    let mut queue: VecDeque<NodeId> = g.nodes().filter(|&v| deg[v.idx()] <= 1).collect();
    while let Some(u) = queue.pop_front() {
        if removed[u.idx()] {
            continue;
        }
        removed[u.idx()] = true;
        for &(_, w) in g.incident(u) {
            if removed[w.idx()] {
                continue;
            }
            deg[w.idx()] -= 1;
            if deg[w.idx()] <= 1 {
                queue.push_back(w);
            }
        }
    }
    let core_start = g
        .nodes()
        .filter(|&v| !removed[v.idx()])
        .min_by_key(|&v| ids.id(v));
    if let Some(s) = core_start {
        let comp = g
            .components()
            .into_iter()
            .find(|c| c.contains(&s))
            .expect("node belongs to a component");
        return Ok(CycleOrNode::Cycle(canonical_cycle(g, ids, &comp)));
    }
    let candidate = g
        .nodes()
        .filter(|&v| {
            let dv = true_degree.map_or(g.degree(v), |td| td[v.idx()]);
            dv <= 2
        })
        .min_by_key(|&v| ids.id(v));
    match candidate {
        Some(v) => Ok(CycleOrNode::Node(v)),
        None => Err(ClusterError::Sentinel(
            "acyclic subgraph whose nodes all have true degree >= 3".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Clustering artifacts and global reference ops

/// Materialized clustering of a graph.
#[derive(Clone, Debug)]
pub struct Clustering {
    pub t: u32,
    pub in_set: Vec<bool>,
    pub owner: Vec<NodeId>,
    pub dist: Vec<u32>,
}

impl Clustering {
    fn from_labels(t: u32, labels: &[ClusterLabel]) -> Self {
        Clustering {
            t,
            in_set: labels.iter().map(|l| l.in_set).collect(),
            owner: labels.iter().map(|l| l.owner).collect(),
            dist: labels.iter().map(|l| l.dist).collect(),
        }
    }

    pub fn centers(&self) -> Vec<NodeId> {
        (0..self.in_set.len() as u32)
            .map(NodeId)
            .filter(|v| self.in_set[v.idx()])
            .collect()
    }
}

/// Checks the clustering invariants directly on the graph: members pairwise
/// further than `2T+1` apart, every node owned by a member at its recorded
/// distance within `2T+1`, and ownership of the full radius-`T` ball around
/// each member.
pub fn verify_clustering(g: &Multigraph, c: &Clustering) -> Result<(), String> {
    let n = g.n();
    if c.in_set.len() != n || c.owner.len() != n || c.dist.len() != n {
        return Err(format!("clustering tables sized for n != {n}"));
    }
    let r = separation_radius(c.t);
    for v in g.nodes() {
        let o = c.owner[v.idx()];
        if o.idx() >= n {
            return Err(format!("{v} owned by out-of-range {o}"));
        }
        if !c.in_set[o.idx()] {
            return Err(format!("{v} owned by non-member {o}"));
        }
        if c.in_set[v.idx()] && (o != v || c.dist[v.idx()] != 0) {
            return Err(format!("member {v} not its own owner at distance 0"));
        }
        if c.dist[v.idx()] > r {
            return Err(format!("{v} owned at distance {} > {r}", c.dist[v.idx()]));
        }
    }
    let mut true_dist: HashMap<(NodeId, NodeId), u32> = HashMap::new();
    for center in c.centers() {
        for (w, d) in g.bfs_within(center, r) {
            if w != center && c.in_set[w.idx()] {
                return Err(format!(
                    "members {center} and {w} at distance {d} <= {r}"
                ));
            }
            if d <= c.t && c.owner[w.idx()] != center {
                return Err(format!(
                    "{w} within {d} <= T={} of {center} but owned by {}",
                    c.t,
                    c.owner[w.idx()]
                ));
            }
            true_dist.insert((center, w), d);
        }
    }
    for v in g.nodes() {
        match true_dist.get(&(c.owner[v.idx()], v)) {
            Some(&d) if d == c.dist[v.idx()] => {}
            Some(&d) => {
                return Err(format!(
                    "{v} records distance {} to {}, actual {d}",
                    c.dist[v.idx()],
                    c.owner[v.idx()]
                ))
            }
            None => {
                return Err(format!(
                    "{v} records owner {} outside radius {r}",
                    c.owner[v.idx()]
                ))
            }
        }
    }
    Ok(())
}

/// Cluster multigraph: one node per member, one edge per original edge whose
/// endpoints are owned by different members, in ascending original edge
/// order. `provenance[k]` is the original edge behind cluster edge `k`.
pub struct ClusterGraph {
    pub graph: Multigraph,
    pub ids: IdAssignment,
    pub centers: Vec<NodeId>,
    pub provenance: Vec<EdgeId>,
}

pub fn build_cluster_graph(
    g: &Multigraph,
    ids: &IdAssignment,
    c: &Clustering,
) -> Result<ClusterGraph, ClusterError> {
    let centers = c.centers();
    let index: HashMap<NodeId, u32> = centers
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    let mut edges = Vec::new();
    let mut provenance = Vec::new();
    for e in g.edges() {
        let (u, v) = g.endpoints(e);
        let (cu, cv) = (c.owner[u.idx()], c.owner[v.idx()]);
        let (&iu, &iv) = match (index.get(&cu), index.get(&cv)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(ClusterError::Invalid(format!(
                    "edge {e} endpoint owned by a non-member"
                )))
            }
        };
        if iu == iv {
            continue;
        }
        edges.push((iu, iv));
        provenance.push(e);
    }
    let graph = Multigraph::new(centers.len(), &edges)
        .map_err(|e| ClusterError::Invalid(format!("cluster graph: {e}")))?;
    let cluster_ids = IdAssignment::from_ids(centers.iter().map(|&v| ids.id(v)).collect());
    Ok(ClusterGraph {
        graph,
        ids: cluster_ids,
        centers,
        provenance,
    })
}

/// Reference inter-cluster orientation: the greedy on the cluster multigraph
/// in the given cluster-edge order, mapped back through the provenance to a
/// partial orientation of the original graph.
pub fn orient_inter_cluster(
    g: &Multigraph,
    c: &Clustering,
    cg: &ClusterGraph,
    cluster_edge_order: &[EdgeId],
    policy: GreedyPolicy,
) -> Result<(Orientation, GreedyRun), ClusterError> {
    let run = greedy_high_degree_so(&cg.graph, &cg.ids, g.n(), cluster_edge_order, policy)
        .map_err(|e| ClusterError::Invalid(e.to_string()))?;
    let mut o = Orientation::empty(g.m());
    for k in cg.graph.edges() {
        let head_cluster = cg.centers[run
            .orientation
            .head(k)
            .expect("greedy orients every edge")
            .idx()];
        let e = cg.provenance[k.idx()];
        let (u, v) = g.endpoints(e);
        let head = if c.owner[u.idx()] == head_cluster {
            u
        } else if c.owner[v.idx()] == head_cluster {
            v
        } else {
            return Err(ClusterError::Invalid(format!(
                "provenance of cluster edge {k} does not touch its head cluster"
            )));
        };
        o.set(e, head);
    }
    Ok((o, run))
}

/// Reference intra-cluster orientation: extends `inter` (heads for every
/// inter-cluster edge) with each cluster's canonical plan, yielding a total
/// orientation.
pub fn orient_intra_cluster(
    g: &Multigraph,
    ids: &IdAssignment,
    c: &Clustering,
    inter: &Orientation,
) -> Result<Orientation, ClusterError> {
    let mut o = inter.clone();
    let mut members_of: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
    for v in g.nodes() {
        members_of.entry(c.owner[v.idx()]).or_default().push(v);
    }
    for (&center, members) in &members_of {
        let mut member_set: HashSet<NodeId> = members.iter().copied().collect();
        let mut intra: BTreeMap<EdgeId, (NodeId, NodeId)> = BTreeMap::new();
        let mut boundary: Vec<(EdgeId, NodeId, NodeId, NodeId)> = Vec::new();
        for &x in members.iter() {
            for &(e, y) in g.incident(x) {
                if member_set.contains(&y) {
                    intra.insert(e, g.endpoints(e));
                } else {
                    let h = inter.head(e).ok_or_else(|| {
                        ClusterError::Invalid(format!("inter edge {e} has no head"))
                    })?;
                    boundary.push((e, x, y, h));
                }
            }
        }
        boundary.sort_by_key(|&(e, _, _, _)| e);
        let mut member_list: Vec<NodeId> = member_set.drain().collect();
        member_list.sort();
        let data = ClusterData {
            center,
            ids: member_list.iter().map(|&v| ids.id(v)).collect(),
            g_degree: member_list.iter().map(|&v| g.degree(v)).collect(),
            members: member_list,
            intra: intra.into_iter().map(|(e, (x, y))| (e, x, y)).collect(),
            boundary,
        };
        let plan = plan_for_cluster(&data)?;
        for (e, h) in plan {
            o.set(e, h);
        }
    }
    Ok(o)
}

// ---------------------------------------------------------------------------
// Pipeline assembly and engines

/// Handles to every composition level of the pipeline, so a run can be
/// inspected level by level afterwards.
pub struct Pipeline {
    pub top: Rc<Composed>,
    pub level123: Rc<Composed>,
    pub clustering: Rc<Composed>,
}

impl Pipeline {
    pub fn new() -> Self {
        Self::with_t(None)
    }

    pub fn with_t(t_override: Option<u32>) -> Self {
        let clustering = compose_slocal(
            Rc::new(RulingStage::new(t_override)),
            Rc::new(OwnerStage::new(t_override)),
        );
        let level123 = compose_slocal(clustering.clone(), Rc::new(InterStage::new(t_override)));
        let top = compose_slocal(level123.clone(), Rc::new(IntraStage::new(t_override)));
        Pipeline {
            top,
            level123,
            clustering,
        }
    }

    pub fn algorithm(&self) -> Rc<dyn SlocalAlgorithm> {
        self.top.clone()
    }
}

impl Default for Pipeline {
    fn default() -> Self {
        Self::new()
    }
}

/// Node orders of the four stages. A composed run induces the first three
/// through lazy materialization; the intra order is the schedule itself.
#[derive(Clone, Debug)]
pub struct StageOrders {
    pub ruling: Vec<NodeId>,
    pub owner: Vec<NodeId>,
    pub inter: Vec<NodeId>,
    pub intra: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct PipelineStats {
    pub n: usize,
    pub m: usize,
    pub t: u32,
    pub declared_locality: u32,
    pub measured_max_radius: u32,
    pub cluster_count: usize,
    pub max_owner_dist: u32,
    pub violations: usize,
}

pub struct PipelineRun {
    pub orientation: Orientation,
    pub outs: Vec<FinalOut>,
    pub raw_outputs: Vec<Arc<Blob>>,
    pub clustering: Clustering,
    pub stats: PipelineStats,
    pub orders: StageOrders,
}

/// Runs the composed pipeline under the given schedule. The returned orders
/// are the materialization orders the run induced, which a staged rerun can
/// replay one stage at a time.
pub fn sinkless_orientation_slocal(
    inst: &Instance,
    schedule: &[NodeId],
) -> Result<PipelineRun, ClusterError> {
    run_pipeline(inst, schedule, None)
}

pub fn run_pipeline(
    inst: &Instance,
    schedule: &[NodeId],
    t_override: Option<u32>,
) -> Result<PipelineRun, ClusterError> {
    let p = Pipeline::with_t(t_override);
    let run = run_slocal(inst, schedule, p.top.as_ref())?;
    for level in [&p.top, &p.level123, &p.clustering] {
        let counts = level.compute_counts();
        if counts.len() != inst.n() || counts.values().any(|&k| k != 1) {
            return Err(ClusterError::Invalid(format!(
                "{} materialized {} nodes, some more than once",
                level.name(),
                counts.len()
            )));
        }
    }
    let orders = StageOrders {
        ruling: p.clustering.induced_order(),
        owner: p.level123.induced_order(),
        inter: p.top.induced_order(),
        intra: schedule.to_vec(),
    };
    let t = t_override.unwrap_or_else(|| t_for(inst.n()));
    finish_run(inst, run.outputs, run.measured_max_radius, orders, t)
}

/// Runs the four stages as separate SLOCAL passes under the given orders,
/// wiring each stage's outputs to the next stage's prior. Byte-identical to
/// the composed engine when given the orders a composed run induced.
pub fn run_pipeline_staged(
    inst: &Instance,
    orders: &StageOrders,
    t_override: Option<u32>,
) -> Result<PipelineRun, ClusterError> {
    let ruling = RulingStage::new(t_override);
    let r1 = run_slocal(inst, &orders.ruling, &ruling)?;
    let p1 = MapPrior::new(r1.outputs.clone());
    let owner = OwnerStage::new(t_override);
    let r2 = run_slocal_with_prior(inst, &orders.owner, &owner, Some(&p1))?;
    let p2 = MapPrior::new(r2.outputs.clone());
    let inter = InterStage::new(t_override);
    let r3 = run_slocal_with_prior(inst, &orders.inter, &inter, Some(&p2))?;
    let p3 = MapPrior::new(r3.outputs.clone());
    let intra = IntraStage::new(t_override);
    let r4 = run_slocal_with_prior(inst, &orders.intra, &intra, Some(&p3))?;
    let measured = r1
        .measured_max_radius
        .max(r2.measured_max_radius)
        .max(r3.measured_max_radius)
        .max(r4.measured_max_radius);
    let t = t_override.unwrap_or_else(|| t_for(inst.n()));
    finish_run(inst, r4.outputs, measured, orders.clone(), t)
}

/// Clustering alone: the first two stages composed.
pub struct ClusteringRun {
    pub clustering: Clustering,
    pub measured_max_radius: u32,
    pub declared_locality: u32,
    pub ruling_order: Vec<NodeId>,
}

pub fn slocal_clustering(
    inst: &Instance,
    schedule: &[NodeId],
    t_override: Option<u32>,
) -> Result<ClusteringRun, ClusterError> {
    let alg = compose_slocal(
        Rc::new(RulingStage::new(t_override)),
        Rc::new(OwnerStage::new(t_override)),
    );
    let run = run_slocal(inst, schedule, alg.as_ref())?;
    let mut labels = Vec::with_capacity(inst.n());
    for (i, o) in run.outputs.iter().enumerate() {
        let blob = o
            .as_ref()
            .ok_or_else(|| ClusterError::Invalid(format!("missing clustering output at v{i}")))?;
        labels.push(ClusterLabel::from_blob(blob)?);
    }
    let t = t_override.unwrap_or_else(|| t_for(inst.n()));
    Ok(ClusteringRun {
        clustering: Clustering::from_labels(t, &labels),
        measured_max_radius: run.measured_max_radius,
        declared_locality: alg.locality(inst.n()),
        ruling_order: alg.induced_order(),
    })
}

fn finish_run(
    inst: &Instance,
    outputs: Vec<Option<Arc<Blob>>>,
    measured: u32,
    orders: StageOrders,
    t: u32,
) -> Result<PipelineRun, ClusterError> {
    let g = &inst.graph;
    let mut outs = Vec::with_capacity(g.n());
    let mut raw = Vec::with_capacity(g.n());
    for (i, o) in outputs.into_iter().enumerate() {
        let blob = o.ok_or_else(|| ClusterError::Invalid(format!("missing output at v{i}")))?;
        outs.push(FinalOut::from_blob(&blob)?);
        raw.push(blob);
    }
    let mut orientation = Orientation::empty(g.m());
    for out in &outs {
        for &(e, h) in out.inter.iter().chain(out.intra.iter()) {
            if e.idx() >= g.m() {
                return Err(ClusterError::Invalid(format!("decision on unknown edge {e}")));
            }
            match orientation.head(e) {
                None => orientation.set(e, h),
                Some(x) if x == h => {}
                Some(x) => {
                    return Err(ClusterError::Invalid(format!(
                        "conflicting heads {x} and {h} for {e}"
                    )))
                }
            }
        }
    }
    if !orientation.is_total() {
        return Err(ClusterError::Invalid("an edge was left unoriented".into()));
    }
    let violations = validate_sinkless(g, &orientation)
        .map_err(|e| ClusterError::Invalid(e.to_string()))?
        .len();
    let labels: Vec<ClusterLabel> = outs.iter().map(|o| o.label).collect();
    let clustering = Clustering::from_labels(t, &labels);
    let stats = PipelineStats {
        n: g.n(),
        m: g.m(),
        t,
        declared_locality: 22 * t + 17,
        measured_max_radius: measured,
        cluster_count: clustering.in_set.iter().filter(|&&b| b).count(),
        max_owner_dist: clustering.dist.iter().copied().max().unwrap_or(0),
        violations,
    };
    Ok(PipelineRun {
        orientation,
        outs,
        raw_outputs: raw,
        clustering,
        stats,
        orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{perturbation_check_slocal, IdKind, ScheduleKind};
    use crate::graph::{complete, cycle, path, random_multigraph, random_regular, random_tree};

    fn inst(g: Multigraph) -> Instance {
        let ids = IdAssignment::identity(g.n());
        Instance::new(Arc::new(g), Arc::new(ids))
    }

    fn inst_with(g: Multigraph, ids: IdAssignment) -> Instance {
        Instance::new(Arc::new(g), Arc::new(ids))
    }

    fn identity_schedule(n: usize) -> Vec<NodeId> {
        (0..n as u32).map(NodeId).collect()
    }

    /// Independent ruling-set oracle: replay the order, test each node by a
    /// direct BFS over the graph.
    fn ruling_oracle(g: &Multigraph, r: u32, order: &[NodeId]) -> Vec<bool> {
        let mut in_set = vec![false; g.n()];
        for &v in order {
            let blocked = g
                .bfs_within(v, r)
                .iter()
                .any(|&(w, _)| w != v && in_set[w.idx()]);
            in_set[v.idx()] = !blocked;
        }
        in_set
    }

    #[test]
    fn t_param_examples() {
        assert!(matches!(t_param(0), Err(ClusterError::TooSmall(0))));
        assert!(matches!(t_param(1), Err(ClusterError::TooSmall(1))));
        assert_eq!(t_param(2).unwrap(), 1);
        assert_eq!(t_param(3).unwrap(), 1);
        assert_eq!(t_param(16).unwrap(), 3);
        assert_eq!(t_param(1024).unwrap(), 4);
        assert_eq!(t_param(10_000).unwrap(), 4);
        assert_eq!(t_param(100_000).unwrap(), 5);
    }

    #[test]
    fn declared_locality_matches_composition() {
        for n in [2usize, 64, 10_000, 100_000] {
            let p = Pipeline::new();
            assert_eq!(p.top.locality(n), declared_locality(n));
            assert_eq!(declared_locality(n), 22 * t_for(n) + 17);
        }
    }

    #[test]
    fn blob_codecs_round_trip() {
        let label = ClusterLabel {
            in_set: true,
            owner: NodeId(7),
            dist: 3,
        };
        assert_eq!(ClusterLabel::from_blob(&label.to_blob()).unwrap(), label);
        let io = InterOut {
            label,
            decided: vec![(EdgeId(0), NodeId(1)), (EdgeId(9), NodeId(2))],
        };
        assert_eq!(InterOut::from_blob(&io.to_blob()).unwrap(), io);
        let fo = FinalOut {
            label,
            inter: vec![(EdgeId(4), NodeId(4))],
            intra: vec![],
        };
        assert_eq!(FinalOut::from_blob(&fo.to_blob()).unwrap(), fo);
        assert!(FinalOut::from_blob(&fo.to_blob()[1..]).is_err());
        assert!(ClusterLabel::from_blob(&[1, 2]).is_err());
    }

    #[test]
    fn ruling_set_matches_oracle() {
        for seed in 0..6u64 {
            let g = random_multigraph(28, 45, seed);
            let i = inst(g);
            let schedule = ScheduleKind::Random.build(&i.graph, seed ^ 0xbeef);
            let run = slocal_clustering(&i, &schedule, Some(1)).unwrap();
            let oracle = ruling_oracle(&i.graph, 3, &run.ruling_order);
            assert_eq!(run.clustering.in_set, oracle, "seed {seed}");
            verify_clustering(&i.graph, &run.clustering).unwrap();
        }
    }

    #[test]
    fn clustering_respects_default_parameter() {
        let g = random_regular(40, 3, 5).unwrap();
        let i = inst(g);
        let schedule = ScheduleKind::Reversed.build(&i.graph, 0);
        let run = slocal_clustering(&i, &schedule, None).unwrap();
        assert_eq!(run.clustering.t, t_param(40).unwrap());
        verify_clustering(&i.graph, &run.clustering).unwrap();
        assert!(run.measured_max_radius <= run.declared_locality);
    }

    #[test]
    fn complete_graph_single_cluster() {
        for seed in 0..3u64 {
            let g = complete(20);
            let i = inst(g);
            let schedule = ScheduleKind::Random.build(&i.graph, seed);
            let first = schedule[0];
            let run = slocal_clustering(&i, &schedule, Some(1)).unwrap();
            assert_eq!(run.clustering.centers(), vec![first]);
            assert!(run.clustering.owner.iter().all(|&o| o == first));
        }
    }

    #[test]
    fn distance_pair_both_join() {
        // Path v0..v8, T=1: v0 and v4 sit exactly 2T+2 apart, so processing
        // them first puts both in the set.
        let g = path(9);
        let i = inst(g);
        let mut schedule = identity_schedule(9);
        schedule.swap(1, 4);
        let run = slocal_clustering(&i, &schedule, Some(1)).unwrap();
        assert!(run.clustering.in_set[0]);
        assert!(run.clustering.in_set[4]);
        verify_clustering(&i.graph, &run.clustering).unwrap();
    }

    #[test]
    fn owner_tie_breaks_to_lower_identifier() {
        // Path v0..v4, T=1: v0 and v4 both join, v2 is equidistant.
        let g = path(5);
        let schedule = vec![NodeId(0), NodeId(4), NodeId(2), NodeId(1), NodeId(3)];
        let run = slocal_clustering(&inst(g), &schedule, Some(1)).unwrap();
        assert!(run.clustering.in_set[0] && run.clustering.in_set[4]);
        assert_eq!(run.clustering.owner[2], NodeId(0), "identity ids");

        let g = path(5);
        let flipped = IdAssignment::from_ids(vec![
            Identifier(5),
            Identifier(4),
            Identifier(3),
            Identifier(2),
            Identifier(1),
        ]);
        let run = slocal_clustering(&inst_with(g, flipped), &schedule, Some(1)).unwrap();
        assert_eq!(run.clustering.owner[2], NodeId(4), "flipped ids");
    }

    #[test]
    fn cluster_graph_parallel_edges_and_provenance() {
        // Two clusters joined by three edges, two of them parallel.
        let g = Multigraph::new(5, &[(0, 1), (1, 2), (1, 2), (1, 3), (2, 3), (3, 4)]).unwrap();
        let ids = IdAssignment::identity(5);
        let c = Clustering {
            t: 1,
            in_set: vec![true, false, true, false, false],
            owner: vec![
                NodeId(0),
                NodeId(0),
                NodeId(2),
                NodeId(2),
                NodeId(2),
            ],
            dist: vec![0, 1, 0, 1, 2],
        };
        let cg = build_cluster_graph(&g, &ids, &c).unwrap();
        assert_eq!(cg.centers, vec![NodeId(0), NodeId(2)]);
        assert_eq!(cg.graph.n(), 2);
        assert_eq!(cg.graph.m(), 3);
        assert_eq!(
            cg.provenance,
            vec![EdgeId(1), EdgeId(2), EdgeId(3)],
            "inter edges in ascending original order"
        );
        assert_eq!(cg.ids.id(NodeId(0)), ids.id(NodeId(0)));
        assert_eq!(cg.ids.id(NodeId(1)), ids.id(NodeId(2)));
    }

    #[test]
    fn find_cycle_examples() {
        let ids = IdAssignment::identity(4);
        // Triangle with a pendant: the cycle wins over the degree-1 node.
        let g = Multigraph::new(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap();
        match find_cycle_or_low_degree(&g, &ids, None).unwrap() {
            CycleOrNode::Cycle(cy) => {
                assert_eq!(cy.len(), 3);
                let mut nodes: Vec<u32> = cy.iter().map(|&(_, w)| w.0).collect();
                nodes.sort();
                assert_eq!(nodes, vec![0, 1, 2]);
            }
            other => panic!("expected a cycle, got {other:?}"),
        }

        let ids5 = IdAssignment::identity(5);
        let p = path(5);
        assert_eq!(
            find_cycle_or_low_degree(&p, &ids5, None).unwrap(),
            CycleOrNode::Node(NodeId(0))
        );

        // True degrees can rule nodes out: with every true degree >= 3 an
        // acyclic subgraph has no certificate.
        let p3 = path(3);
        let ids3 = IdAssignment::identity(3);
        let r = find_cycle_or_low_degree(&p3, &ids3, Some(&[3, 3, 3]));
        assert!(matches!(r, Err(ClusterError::Sentinel(_))));
        assert!(error_is_sentinel(&r.unwrap_err()));
        assert_eq!(
            find_cycle_or_low_degree(&p3, &ids3, Some(&[3, 2, 3])).unwrap(),
            CycleOrNode::Node(NodeId(1))
        );

        // Across components the cycle still wins.
        let mixed = Multigraph::new(7, &[(0, 1), (1, 2), (3, 4), (4, 5), (5, 6), (6, 3)]).unwrap();
        let ids7 = IdAssignment::identity(7);
        assert!(matches!(
            find_cycle_or_low_degree(&mixed, &ids7, None).unwrap(),
            CycleOrNode::Cycle(_)
        ));
    }

    #[test]
    fn intra_plan_tree_toward_exit() {
        // One cluster on a path v0..v4 with a boundary edge at v4 pointing
        // out: spanning tree toward v4.
        let g = Multigraph::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let ids = IdAssignment::identity(6);
        let c = Clustering {
            t: 2,
            in_set: vec![false, false, true, false, false, true],
            owner: vec![NodeId(2); 5]
                .into_iter()
                .chain([NodeId(5)])
                .collect(),
            dist: vec![2, 1, 0, 1, 2, 0],
        };
        let mut inter = Orientation::empty(g.m());
        inter.set(EdgeId(4), NodeId(5));
        let o = orient_intra_cluster(&g, &ids, &c, &inter).unwrap();
        assert_eq!(o.head(EdgeId(0)), Some(NodeId(1)));
        assert_eq!(o.head(EdgeId(1)), Some(NodeId(2)));
        assert_eq!(o.head(EdgeId(2)), Some(NodeId(3)));
        assert_eq!(o.head(EdgeId(3)), Some(NodeId(4)));
    }

    #[test]
    fn intra_plan_inward_cluster_uses_cycle() {
        // A 4-cycle cluster whose single boundary edge points inward.
        let g = Multigraph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 4)]).unwrap();
        let ids = IdAssignment::identity(5);
        let c = Clustering {
            t: 1,
            in_set: vec![true, false, false, false, true],
            owner: vec![NodeId(0), NodeId(0), NodeId(0), NodeId(0), NodeId(4)],
            dist: vec![0, 1, 2, 1, 0],
        };
        let mut inter = Orientation::empty(g.m());
        inter.set(EdgeId(4), NodeId(0)); // points into the cluster
        let o = orient_intra_cluster(&g, &ids, &c, &inter).unwrap();
        // Cycle edges oriented consistently: every cluster node has out-degree
        // >= 1 among intra edges.
        for v in [0u32, 1, 2, 3] {
            assert!(
                o.out_degree(&g, NodeId(v)) >= 1,
                "v{v} has no out-edge in {o:?}",
            );
        }
    }

    #[test]
    fn intra_plan_sentinel_fires() {
        // Star cluster {0,1,2,3} (acyclic) where every member has true
        // degree 3 and all boundary edges point inward.
        let g = Multigraph::new(6, &[
            (0, 1),
            (0, 2),
            (0, 3),
            (1, 4),
            (1, 5),
            (2, 4),
            (2, 5),
            (3, 4),
            (3, 5),
            (4, 5),
        ])
        .unwrap();
        let ids = IdAssignment::identity(6);
        let c = Clustering {
            t: 1,
            in_set: vec![true, false, false, false, true, false],
            owner: vec![
                NodeId(0),
                NodeId(0),
                NodeId(0),
                NodeId(0),
                NodeId(4),
                NodeId(4),
            ],
            dist: vec![0, 1, 1, 1, 0, 1],
        };
        let mut inter = Orientation::empty(g.m());
        for e in 3..9u32 {
            let (u, _) = g.endpoints(EdgeId(e));
            inter.set(EdgeId(e), u); // all boundary edges point at the member
        }
        let r = orient_intra_cluster(&g, &ids, &c, &inter);
        assert!(matches!(&r, Err(e) if error_is_sentinel(e)));
    }

    #[test]
    fn pipeline_valid_on_fixtures() {
        let cases: Vec<Multigraph> = vec![
            path(7),
            cycle(9),
            complete(8),
            random_regular(36, 3, 11).unwrap(),
            random_multigraph(30, 70, 3),
            random_tree(25, 9),
            crate::graph::k55().0,
        ];
        for (gi, g) in cases.into_iter().enumerate() {
            for (si, kind) in [
                ScheduleKind::Identity,
                ScheduleKind::Reversed,
                ScheduleKind::Random,
                ScheduleKind::Bfs,
                ScheduleKind::DegreeDesc,
            ]
            .into_iter()
            .enumerate()
            {
                let ids = match si % 3 {
                    0 => IdAssignment::identity(g.n()),
                    1 => IdAssignment::random_poly(g.n(), 3, gi as u64 + 1),
                    _ => IdAssignment::by_degree(&g),
                };
                let i = inst_with(g.clone(), ids);
                let schedule = kind.build(&i.graph, 1000 + gi as u64);
                let run = run_pipeline(&i, &schedule, Some(1)).unwrap();
                assert_eq!(run.stats.violations, 0, "graph {gi} schedule {kind:?}");
                assert!(run.stats.measured_max_radius <= run.stats.declared_locality);
                assert!(run.orientation.is_total());
                verify_clustering(&i.graph, &run.clustering).unwrap();
            }
        }
    }

    #[test]
    fn pipeline_handles_tiny_instances() {
        for g in [
            Multigraph::new(1, &[]).unwrap(),
            path(2),
            Multigraph::new(3, &[]).unwrap(),
        ] {
            let n = g.n();
            let i = inst(g);
            let run = run_pipeline(&i, &identity_schedule(n), None).unwrap();
            assert_eq!(run.stats.violations, 0);
        }
    }

    #[test]
    fn composed_equals_staged() {
        for seed in 0..8u64 {
            let g = match seed % 3 {
                0 => random_multigraph(24, 40, seed),
                1 => random_regular(24, 3, seed).unwrap(),
                _ => random_tree(20, seed),
            };
            let ids = IdAssignment::random_poly(g.n(), 3, seed + 77);
            let i = inst_with(g, ids);
            let schedule = ScheduleKind::Random.build(&i.graph, seed);
            let composed = run_pipeline(&i, &schedule, Some(1)).unwrap();
            let staged = run_pipeline_staged(&i, &composed.orders, Some(1)).unwrap();
            assert_eq!(
                composed.raw_outputs, staged.raw_outputs,
                "outputs diverge at seed {seed}"
            );
            assert_eq!(composed.orientation.to_text(), staged.orientation.to_text());
            assert!(staged.stats.measured_max_radius <= staged.stats.declared_locality);
        }
    }

    #[test]
    fn induced_orders_are_permutations() {
        let g = random_multigraph(26, 50, 4);
        let i = inst(g);
        let schedule = ScheduleKind::Random.build(&i.graph, 9);
        let run = run_pipeline(&i, &schedule, Some(1)).unwrap();
        for order in [
            &run.orders.ruling,
            &run.orders.owner,
            &run.orders.inter,
            &run.orders.intra,
        ] {
            let mut sorted: Vec<u32> = order.iter().map(|v| v.0).collect();
            sorted.sort();
            assert_eq!(sorted, (0..26).collect::<Vec<u32>>());
        }
    }

    #[test]
    fn inter_decisions_match_cluster_graph_greedy() {
        for seed in 0..6u64 {
            let g = random_multigraph(32, 64, seed * 3 + 1);
            let i = inst(g);
            let schedule = ScheduleKind::Random.build(&i.graph, seed);
            let run = run_pipeline(&i, &schedule, Some(1)).unwrap();
            let cg = build_cluster_graph(&i.graph, &i.ids, &run.clustering).unwrap();

            // Edge order induced by the inter stage: each edge at its
            // first-processed endpoint, ascending edge id within a step.
            let mut pos = vec![0usize; i.n()];
            for (k, &v) in run.orders.inter.iter().enumerate() {
                pos[v.idx()] = k;
            }
            let mut cluster_edges: Vec<(usize, EdgeId)> = cg
                .provenance
                .iter()
                .enumerate()
                .map(|(k, &e)| {
                    let (u, v) = i.graph.endpoints(e);
                    (pos[u.idx()].min(pos[v.idx()]), EdgeId(k as u32))
                })
                .collect();
            cluster_edges.sort();
            let order: Vec<EdgeId> = cluster_edges.into_iter().map(|(_, e)| e).collect();

            let (reference, _) = orient_inter_cluster(
                &i.graph,
                &run.clustering,
                &cg,
                &order,
                GreedyPolicy::Standard,
            )
            .unwrap();
            for &e in &cg.provenance {
                assert_eq!(
                    run.orientation.head(e),
                    reference.head(e),
                    "seed {seed} edge {e}"
                );
            }
        }
    }

    #[test]
    fn pipeline_matches_global_intra_reference() {
        for seed in 0..4u64 {
            let g = random_multigraph(28, 56, seed + 13);
            let i = inst(g);
            let schedule = ScheduleKind::Random.build(&i.graph, seed + 2);
            let run = run_pipeline(&i, &schedule, Some(1)).unwrap();
            // Inter heads from the run, intra heads recomputed globally.
            let mut inter = Orientation::empty(i.graph.m());
            for out in &run.outs {
                for &(e, h) in &out.inter {
                    inter.set(e, h);
                }
            }
            let reference =
                orient_intra_cluster(&i.graph, &i.ids, &run.clustering, &inter).unwrap();
            assert_eq!(run.orientation.to_text(), reference.to_text(), "seed {seed}");
        }
    }

    #[test]
    fn pipeline_passes_perturbation_checks() {
        // Diameter 45 leaves plenty outside the pipeline's radius-39 ball,
        // so the rewrites actually change something.
        let g = cycle(90);
        let i = inst(g);
        let schedule = ScheduleKind::Random.build(&i.graph, 3);
        let p = Pipeline::with_t(Some(1));
        for position in [0, 45, 89] {
            let report = perturbation_check_slocal(
                p.top.as_ref(),
                &i,
                &schedule,
                position,
                25,
                42 + position as u64,
                None,
            )
            .unwrap();
            assert_eq!(report.failures, 0, "position {position}");
            assert!(report.effective_trials > 0, "position {position}");
        }
    }

    #[test]
    #[ignore = "scale smoke test, ~seconds per graph"]
    fn large_regular_pipeline() {
        for (n, d) in [(100_000usize, 3u32), (100_000, 10), (10_000, 5)] {
            let start = std::time::Instant::now();
            let g = random_regular(n, d, 7).unwrap();
            let i = inst(g);
            let schedule = ScheduleKind::Random.build(&i.graph, 1);
            let run = run_pipeline(&i, &schedule, None).unwrap();
            assert_eq!(run.stats.violations, 0);
            assert!(run.stats.measured_max_radius <= run.stats.declared_locality);
            println!(
                "n={n} d={d}: t={} clusters={} measured={} declared={} in {:?}",
                run.stats.t,
                run.stats.cluster_count,
                run.stats.measured_max_radius,
                run.stats.declared_locality,
                start.elapsed()
            );
        }
    }

    #[test]
    fn schedule_and_id_kinds_cover_matrix() {
        // Exercised via exec's builders to keep kinds wired for acceptance.
        let g = random_regular(24, 3, 2).unwrap();
        for kind in ScheduleKind::ALL {
            let s = kind.build(&g, 5);
            assert_eq!(s.len(), 24);
        }
        for kind in IdKind::ALL {
            let ids = kind.build(&g, 5);
            assert!(ids.is_injective());
        }
    }
}
