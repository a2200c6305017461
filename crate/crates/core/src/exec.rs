//! LOCAL and SLOCAL execution with honest locality accounting. Algorithms
//! never touch the graph directly; they query a [`View`] whose every answer
//! is charged to a radius meter, so the measured radius of a run is an upper
//! bound certificate on the information the algorithm actually used.

use crate::graph::{EdgeId, IdAssignment, Identifier, Multigraph, NodeId, Side, TwoColoring};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;
use thiserror::Error;

pub type Blob = Vec<u8>;

pub fn encode<T: Serialize>(value: &T) -> Blob {
    serde_json::to_vec(value).expect("state types serialize")
}

pub fn decode<T: for<'de> Deserialize<'de>>(blob: &[u8]) -> Result<T, ExecError> {
    serde_json::from_slice(blob).map_err(|e| ExecError::Decode(e.to_string()))
}

/// Little-endian length-prefixed framing for hot-path state blobs, where the
/// JSON codec's integer-array encoding of bytes is too fat.
pub(crate) mod wire {
    use super::ExecError;

    pub(crate) fn put_u32(buf: &mut Vec<u8>, x: u32) {
        buf.extend_from_slice(&x.to_le_bytes());
    }

    pub(crate) fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
        put_u32(buf, b.len() as u32);
        buf.extend_from_slice(b);
    }

    pub(crate) struct Cursor<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Cursor<'a> {
        pub(crate) fn new(buf: &'a [u8]) -> Self {
            Cursor { buf, pos: 0 }
        }

        pub(crate) fn u8(&mut self) -> Result<u8, ExecError> {
            let b = *self.buf.get(self.pos).ok_or_else(short)?;
            self.pos += 1;
            Ok(b)
        }

        pub(crate) fn u32(&mut self) -> Result<u32, ExecError> {
            let end = self.pos.checked_add(4).ok_or_else(short)?;
            let s = self.buf.get(self.pos..end).ok_or_else(short)?;
            self.pos = end;
            Ok(u32::from_le_bytes(s.try_into().unwrap()))
        }

        pub(crate) fn bytes(&mut self) -> Result<&'a [u8], ExecError> {
            let len = self.u32()? as usize;
            let end = self.pos.checked_add(len).ok_or_else(short)?;
            let s = self.buf.get(self.pos..end).ok_or_else(short)?;
            self.pos = end;
            Ok(s)
        }

        pub(crate) fn done(&self) -> Result<(), ExecError> {
            if self.pos == self.buf.len() {
                Ok(())
            } else {
                Err(ExecError::Decode("trailing bytes in blob".into()))
            }
        }
    }

    fn short() -> ExecError {
        ExecError::Decode("truncated blob".into())
    }
}

/// Whether an edge belongs to the input instance. `Unknown` only occurs in
/// the supported model, for edges outside the queried radius.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputStatus {
    Input,
    NonInput,
    Unknown,
}

#[derive(Error, Debug)]
pub enum ExecError {
    #[error("locality breach at {node}: radius {requested} exceeds budget {budget}")]
    LocalityExceeded { node: NodeId, requested: u32, budget: u32 },
    #[error("{node} is outside the radius-{budget} view of {root}")]
    OutOfView { node: NodeId, root: NodeId, budget: u32 },
    #[error("no prior-stage output available for {0}")]
    MissingPrior(NodeId),
    #[error("step at {node} (schedule position {position}) failed: {source}")]
    AtStep {
        node: NodeId,
        position: usize,
        #[source]
        source: Box<ExecError>,
    },
    #[error("blob decode failed: {0}")]
    Decode(String),
    #[error("composition cache violation: {0}")]
    CacheViolation(String),
    #[error("schedule is not a permutation of the nodes")]
    BadSchedule,
    #[error("algorithm failure: {0}")]
    Algorithm(String),
}

/// One problem instance: topology, identifiers, optional coloring, per-edge
/// input bits, and whether the topology is globally known (supported model).
#[derive(Clone)]
pub struct Instance {
    pub graph: Arc<Multigraph>,
    pub ids: Arc<IdAssignment>,
    pub coloring: Option<Arc<TwoColoring>>,
    pub input: Arc<Vec<InputStatus>>,
    pub supported: bool,
}

impl Instance {
    /// Instance whose input is the whole graph.
    pub fn new(graph: Arc<Multigraph>, ids: Arc<IdAssignment>) -> Self {
        let m = graph.m();
        Instance {
            graph,
            ids,
            coloring: None,
            input: Arc::new(vec![InputStatus::Input; m]),
            supported: false,
        }
    }

    pub fn with_coloring(mut self, coloring: Arc<TwoColoring>) -> Self {
        self.coloring = Some(coloring);
        self
    }

    pub fn with_input(mut self, input: Vec<InputStatus>) -> Self {
        assert_eq!(input.len(), self.graph.m());
        self.input = Arc::new(input);
        self
    }

    pub fn supported(mut self) -> Self {
        self.supported = true;
        self
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }
}

/// Records the largest radius any view answered for during a run.
pub struct Meter {
    max: Cell<u32>,
    cap: u32,
}

impl Meter {
    pub fn new(cap: u32) -> Self {
        Meter { max: Cell::new(0), cap }
    }

    pub fn record(&self, node: NodeId, r: u32) -> Result<(), ExecError> {
        if r > self.cap {
            return Err(ExecError::LocalityExceeded {
                node,
                requested: r,
                budget: self.cap,
            });
        }
        self.max.set(self.max.get().max(r));
        Ok(())
    }

    pub fn max(&self) -> u32 {
        self.max.get()
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }
}

/// Read access to the states of already-processed nodes. The extra `view`
/// argument lets a source charge additional hops when the data physically
/// lives further away than the queried node (lazy composition records).
pub trait StateSource {
    fn state(&self, v: NodeId, view: &View) -> Result<Option<Arc<Blob>>, ExecError>;
}

pub struct NoStates;

impl StateSource for NoStates {
    fn state(&self, _v: NodeId, _view: &View) -> Result<Option<Arc<Blob>>, ExecError> {
        Ok(None)
    }
}

#[derive(Default, Clone)]
pub struct StateMap {
    map: HashMap<NodeId, Arc<Blob>>,
}

impl StateMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, v: NodeId, blob: Arc<Blob>) {
        self.map.insert(v, blob);
    }

    pub fn get(&self, v: NodeId) -> Option<Arc<Blob>> {
        self.map.get(&v).cloned()
    }

    pub fn contains(&self, v: NodeId) -> bool {
        self.map.contains_key(&v)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl StateSource for StateMap {
    fn state(&self, v: NodeId, _view: &View) -> Result<Option<Arc<Blob>>, ExecError> {
        Ok(self.get(v))
    }
}

/// Previous-stage outputs, however they are materialized.
pub trait PriorSource {
    fn prior(&self, u: NodeId, caller: &View) -> Result<Arc<Blob>, ExecError>;
}

/// Stage outputs stored at their nodes, the staged-reference layout.
pub struct MapPrior {
    outputs: Vec<Option<Arc<Blob>>>,
}

impl MapPrior {
    pub fn new(outputs: Vec<Option<Arc<Blob>>>) -> Self {
        MapPrior { outputs }
    }
}

impl PriorSource for MapPrior {
    fn prior(&self, u: NodeId, _caller: &View) -> Result<Arc<Blob>, ExecError> {
        self.outputs[u.idx()].clone().ok_or(ExecError::MissingPrior(u))
    }
}

/// Distance buffer reusable across views without clearing: an entry is valid
/// only when its tag matches the current epoch, so taking a buffer from the
/// pool costs O(1) instead of an O(n) reset. Views nest (composition runs a
/// handful of them at once), hence a pool rather than a single slot.
struct ScratchBuf {
    tags: Vec<u32>,
    dist: Vec<u32>,
    epoch: u32,
    order: Vec<(NodeId, u32)>,
}

thread_local! {
    static SCRATCH_POOL: RefCell<Vec<ScratchBuf>> = const { RefCell::new(Vec::new()) };
}

struct BfsScratch {
    buf: ScratchBuf,
    next: usize,
}

impl BfsScratch {
    fn new(n: usize, root: NodeId) -> Self {
        let mut buf = SCRATCH_POOL
            .with(|p| p.borrow_mut().pop())
            .unwrap_or(ScratchBuf {
                tags: Vec::new(),
                dist: Vec::new(),
                epoch: 0,
                order: Vec::new(),
            });
        if buf.tags.len() < n || buf.epoch == u32::MAX {
            buf.tags = vec![0; n];
            buf.dist = vec![0; n];
            buf.epoch = 0;
        }
        buf.epoch += 1;
        buf.order.clear();
        buf.tags[root.idx()] = buf.epoch;
        buf.dist[root.idx()] = 0;
        buf.order.push((root, 0));
        BfsScratch { buf, next: 0 }
    }

    /// Expand until all nodes at distance <= r are discovered (or the
    /// frontier dies out). Entries in `order` are in nondecreasing distance.
    fn ensure(&mut self, g: &Multigraph, r: u32) {
        while self.next < self.buf.order.len() {
            let (u, du) = self.buf.order[self.next];
            if du >= r {
                break;
            }
            self.next += 1;
            for &(_, w) in g.incident(u) {
                if self.buf.tags[w.idx()] != self.buf.epoch {
                    self.buf.tags[w.idx()] = self.buf.epoch;
                    self.buf.dist[w.idx()] = du + 1;
                    self.buf.order.push((w, du + 1));
                }
            }
        }
    }

    fn known(&self, v: NodeId) -> Option<u32> {
        (self.buf.tags[v.idx()] == self.buf.epoch).then(|| self.buf.dist[v.idx()])
    }
}

impl Drop for BfsScratch {
    fn drop(&mut self) {
        let buf = std::mem::replace(
            &mut self.buf,
            ScratchBuf {
                tags: Vec::new(),
                dist: Vec::new(),
                epoch: 0,
                order: Vec::new(),
            },
        );
        SCRATCH_POOL.with(|p| p.borrow_mut().push(buf));
    }
}

/// Radius-budgeted handle on the instance around `root`. Every query charges
/// the meter for the distance of the furthest data it reveals; `base` is the
/// root's own distance from the outermost queried node, so nested views keep
/// the accounting anchored at the step being executed.
pub struct View<'a> {
    inst: &'a Instance,
    root: NodeId,
    base: u32,
    budget: u32,
    meter: &'a Meter,
    meter_node: NodeId,
    states: &'a dyn StateSource,
    prior: Option<&'a dyn PriorSource>,
    scratch: RefCell<BfsScratch>,
}

impl<'a> View<'a> {
    pub fn new(
        inst: &'a Instance,
        root: NodeId,
        budget: u32,
        meter: &'a Meter,
        states: &'a dyn StateSource,
        prior: Option<&'a dyn PriorSource>,
    ) -> Self {
        View {
            inst,
            root,
            base: 0,
            budget,
            meter,
            meter_node: root,
            states,
            prior,
            scratch: RefCell::new(BfsScratch::new(inst.n(), root)),
        }
    }

    /// View rooted at a visible node `u`, with accounting shifted by
    /// `dist(root, u)`. The child cannot see further than the parent could.
    pub fn subview<'b>(
        &'b self,
        u: NodeId,
        budget: u32,
        states: &'b dyn StateSource,
        prior: Option<&'b dyn PriorSource>,
    ) -> Result<View<'b>, ExecError> {
        let d = self.dist(u)?;
        let base = self.base + d;
        if base + budget > self.base + self.budget {
            return Err(ExecError::LocalityExceeded {
                node: u,
                requested: base + budget,
                budget: self.base + self.budget,
            });
        }
        Ok(View {
            inst: self.inst,
            root: u,
            base,
            budget,
            meter: self.meter,
            meter_node: self.meter_node,
            states,
            prior,
            scratch: RefCell::new(BfsScratch::new(self.inst.n(), u)),
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn n(&self) -> usize {
        self.inst.n()
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn is_supported(&self) -> bool {
        self.inst.supported
    }

    pub fn prior_source(&self) -> Option<&'a dyn PriorSource> {
        self.prior
    }

    /// Charge for structural information at radius `r`. Free in the
    /// supported model, where topology, identifiers, and colors are global
    /// knowledge.
    fn charge_structural(&self, r: u32) -> Result<(), ExecError> {
        if r > self.budget && !self.inst.supported {
            return Err(ExecError::LocalityExceeded {
                node: self.root,
                requested: r,
                budget: self.budget,
            });
        }
        if self.inst.supported {
            return Ok(());
        }
        self.meter.record(self.meter_node, self.base + r)
    }

    /// Charge for instance content (input bits, states) at radius `r`.
    fn charge_content(&self, r: u32) -> Result<(), ExecError> {
        if r > self.budget {
            return Err(ExecError::LocalityExceeded {
                node: self.root,
                requested: r,
                budget: self.budget,
            });
        }
        self.meter.record(self.meter_node, self.base + r)
    }

    /// Explicit radius charge; used by algorithms that answer from an
    /// auxiliary index instead of fresh traversal, to keep the accounting
    /// identical to the traversal they stand in for.
    pub fn charge_radius(&self, r: u32) -> Result<(), ExecError> {
        self.charge_content(r)
    }

    /// Raw charge of an absolute radius (already including `base`), for
    /// sources whose data lives further out than the queried node.
    pub fn charge_absolute(&self, r: u32) -> Result<(), ExecError> {
        self.meter.record(self.meter_node, r)
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    fn known_dist(&self, u: NodeId) -> Option<u32> {
        self.scratch.borrow().known(u)
    }

    /// Distance to `u` if within budget, expanding lazily ring by ring.
    /// Learning that `u` is not within the budget costs the whole budget.
    pub fn try_dist(&self, u: NodeId) -> Result<Option<u32>, ExecError> {
        {
            let mut s = self.scratch.borrow_mut();
            let mut r = 1;
            while s.known(u).is_none() && r <= self.budget {
                s.ensure(&self.inst.graph, r);
                if s.next >= s.buf.order.len() {
                    break;
                }
                r += 1;
            }
        }
        match self.known_dist(u).filter(|&d| d <= self.budget) {
            Some(d) => {
                self.charge_structural(d)?;
                Ok(Some(d))
            }
            None => {
                self.charge_structural(self.budget)?;
                Ok(None)
            }
        }
    }

    pub fn dist(&self, u: NodeId) -> Result<u32, ExecError> {
        self.try_dist(u)?.ok_or(ExecError::OutOfView {
            node: u,
            root: self.root,
            budget: self.budget,
        })
    }

    /// All nodes within radius `r`, with distances, in BFS discovery order.
    pub fn nodes_within(&self, r: u32) -> Result<Vec<(NodeId, u32)>, ExecError> {
        self.charge_structural(r)?;
        let mut s = self.scratch.borrow_mut();
        s.ensure(&self.inst.graph, r);
        Ok(s.buf.order.iter().copied().filter(|&(_, d)| d <= r).collect())
    }

    /// Nodes at exactly distance `r`, in BFS discovery order.
    pub fn nodes_at(&self, r: u32) -> Result<Vec<NodeId>, ExecError> {
        self.charge_structural(r)?;
        let mut s = self.scratch.borrow_mut();
        s.ensure(&self.inst.graph, r);
        Ok(s.buf
            .order
            .iter()
            .filter(|&&(_, d)| d == r)
            .map(|&(v, _)| v)
            .collect())
    }

    pub fn identifier(&self, u: NodeId) -> Result<Identifier, ExecError> {
        self.dist(u)?;
        Ok(self.inst.ids.id(u))
    }

    pub fn color(&self, u: NodeId) -> Result<Option<Side>, ExecError> {
        self.dist(u)?;
        Ok(self.inst.coloring.as_ref().map(|c| c.side(u)))
    }

    pub fn degree(&self, u: NodeId) -> Result<u32, ExecError> {
        self.dist(u)?;
        Ok(self.inst.graph.degree(u))
    }

    /// Incident edges of a visible node, with their other endpoints.
    pub fn incident(&self, u: NodeId) -> Result<Vec<(EdgeId, NodeId)>, ExecError> {
        self.dist(u)?;
        Ok(self.inst.graph.incident(u).to_vec())
    }

    pub fn endpoints(&self, e: EdgeId) -> (NodeId, NodeId) {
        self.inst.graph.endpoints(e)
    }

    /// Input bit of an edge; charged at the nearer endpoint's distance.
    pub fn input_status(&self, e: EdgeId) -> Result<InputStatus, ExecError> {
        let (u, v) = self.inst.graph.endpoints(e);
        let du = self.try_dist(u)?;
        let dv = if du == Some(0) { du } else { self.try_dist(v)? };
        let d = match (du, dv) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => {
                return Err(ExecError::OutOfView {
                    node: u,
                    root: self.root,
                    budget: self.budget,
                })
            }
        };
        self.charge_content(d)?;
        Ok(self.inst.input[e.idx()])
    }

    /// State of an already-processed visible node, `None` if unprocessed.
    pub fn state(&self, u: NodeId) -> Result<Option<Arc<Blob>>, ExecError> {
        let d = self.dist(u)?;
        self.charge_content(d)?;
        self.states.state(u, self)
    }

    /// Previous-stage output of a visible node.
    pub fn prior(&self, u: NodeId) -> Result<Arc<Blob>, ExecError> {
        let d = self.dist(u)?;
        self.charge_content(d)?;
        match self.prior {
            Some(p) => p.prior(u, self),
            None => Err(ExecError::MissingPrior(u)),
        }
    }
}

/// Fully materialized view, the serializable form used for inspection and
/// for keying lookup tables by what an algorithm can observe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewSnapshot {
    pub root: NodeId,
    pub radius: u32,
    pub n: usize,
    pub supported: bool,
    pub nodes: Vec<SnapshotNode>,
    pub edges: Vec<SnapshotEdge>,
    pub states: Vec<(NodeId, Blob)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub node: NodeId,
    pub dist: u32,
    pub id: Identifier,
    pub color: Option<Side>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotEdge {
    pub edge: EdgeId,
    pub endpoints: (NodeId, NodeId),
    pub status: InputStatus,
}

/// Materialize everything visible within radius `r` of `root`: nodes with
/// identifiers and colors, edges with at least one endpoint inside the ball
/// (with input bits), and states of visible processed nodes.
pub fn make_view(
    inst: &Instance,
    states: &StateMap,
    root: NodeId,
    r: u32,
) -> Result<ViewSnapshot, ExecError> {
    let g = &inst.graph;
    if root.idx() >= g.n() {
        return Err(ExecError::Algorithm(format!("root {root} out of range")));
    }
    let ball = g.bfs_within(root, r);
    let nodes = ball
        .iter()
        .map(|&(v, d)| SnapshotNode {
            node: v,
            dist: d,
            id: inst.ids.id(v),
            color: inst.coloring.as_ref().map(|c| c.side(v)),
        })
        .collect();
    let mut edges = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(v, _) in &ball {
        for &(e, _) in g.incident(v) {
            if seen.insert(e) {
                edges.push(SnapshotEdge {
                    edge: e,
                    endpoints: g.endpoints(e),
                    status: inst.input[e.idx()],
                });
            }
        }
    }
    edges.sort_by_key(|s| s.edge);
    let mut st: Vec<(NodeId, Blob)> = ball
        .iter()
        .filter_map(|&(v, _)| states.get(v).map(|b| (v, (*b).clone())))
        .collect();
    st.sort_by_key(|&(v, _)| v);
    Ok(ViewSnapshot {
        root,
        radius: r,
        n: g.n(),
        supported: inst.supported,
        nodes,
        edges,
        states: st,
    })
}

impl ViewSnapshot {
    /// Canonical content digest; identifier-level, so two roots with
    /// isomorphic but differently-labeled views digest differently.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("snapshot serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        hex_encode(&h.finalize())
    }
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub struct StepOutcome {
    pub state: Blob,
    pub output: Blob,
}

/// Sequential-model algorithm: one node processed per step, seeing states of
/// earlier-processed nodes inside its radius.
pub trait SlocalAlgorithm {
    fn name(&self) -> String;
    fn locality(&self, n: usize) -> u32;
    /// Reset run-scoped caches. Called once per run by the engines.
    fn begin_run(&self, _inst: &Instance) {}
    fn step(&self, view: &View) -> Result<StepOutcome, ExecError>;
    /// Fresh instance with empty run-scoped caches, for replaying single
    /// steps against existing physical states. Any in-memory index the
    /// algorithm keeps must be rebuildable from those states, and a replay
    /// must not see stale index entries.
    fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm>;
}

/// Simultaneous-model algorithm: every node decides independently.
pub trait LocalAlgorithm {
    fn name(&self) -> String;
    fn locality(&self, n: usize) -> u32;
    fn decide(&self, view: &View) -> Result<Blob, ExecError>;
}

pub struct LocalRun {
    pub outputs: Vec<Arc<Blob>>,
    pub measured_max_radius: u32,
}

pub fn run_local(inst: &Instance, alg: &dyn LocalAlgorithm) -> Result<LocalRun, ExecError> {
    let cap = alg.locality(inst.n());
    let meter = Meter::new(cap);
    let mut outputs = Vec::with_capacity(inst.n());
    for v in inst.graph.nodes() {
        let view = View::new(inst, v, cap, &meter, &NoStates, None);
        let out = alg.decide(&view).map_err(|e| ExecError::AtStep {
            node: v,
            position: v.idx(),
            source: Box::new(e),
        })?;
        outputs.push(Arc::new(out));
    }
    Ok(LocalRun {
        outputs,
        measured_max_radius: meter.max(),
    })
}

pub struct SlocalRun {
    pub outputs: Vec<Option<Arc<Blob>>>,
    pub states: StateMap,
    pub measured_max_radius: u32,
    pub schedule: Vec<NodeId>,
}

pub fn run_slocal(
    inst: &Instance,
    schedule: &[NodeId],
    alg: &dyn SlocalAlgorithm,
) -> Result<SlocalRun, ExecError> {
    run_slocal_with_prior(inst, schedule, alg, None)
}

pub fn run_slocal_with_prior(
    inst: &Instance,
    schedule: &[NodeId],
    alg: &dyn SlocalAlgorithm,
    prior: Option<&dyn PriorSource>,
) -> Result<SlocalRun, ExecError> {
    check_schedule(inst.n(), schedule)?;
    let cap = alg.locality(inst.n());
    let meter = Meter::new(cap);
    alg.begin_run(inst);
    let mut states = StateMap::new();
    let mut outputs: Vec<Option<Arc<Blob>>> = vec![None; inst.n()];
    for (position, &v) in schedule.iter().enumerate() {
        let outcome = {
            let view = View::new(inst, v, cap, &meter, &states, prior);
            alg.step(&view).map_err(|e| ExecError::AtStep {
                node: v,
                position,
                source: Box::new(e),
            })?
        };
        states.insert(v, Arc::new(outcome.state));
        outputs[v.idx()] = Some(Arc::new(outcome.output));
    }
    Ok(SlocalRun {
        outputs,
        states,
        measured_max_radius: meter.max(),
        schedule: schedule.to_vec(),
    })
}

/// Run only the first `upto` steps, returning the accumulated states.
pub fn run_slocal_prefix(
    inst: &Instance,
    schedule: &[NodeId],
    alg: &dyn SlocalAlgorithm,
    upto: usize,
    prior: Option<&dyn PriorSource>,
) -> Result<(StateMap, Vec<Option<Arc<Blob>>>), ExecError> {
    check_schedule(inst.n(), schedule)?;
    let cap = alg.locality(inst.n());
    let meter = Meter::new(cap);
    alg.begin_run(inst);
    let mut states = StateMap::new();
    let mut outputs: Vec<Option<Arc<Blob>>> = vec![None; inst.n()];
    for (position, &v) in schedule.iter().take(upto).enumerate() {
        let outcome = {
            let view = View::new(inst, v, cap, &meter, &states, prior);
            alg.step(&view).map_err(|e| ExecError::AtStep {
                node: v,
                position,
                source: Box::new(e),
            })?
        };
        states.insert(v, Arc::new(outcome.state));
        outputs[v.idx()] = Some(Arc::new(outcome.output));
    }
    Ok((states, outputs))
}

fn check_schedule(n: usize, schedule: &[NodeId]) -> Result<(), ExecError> {
    if schedule.len() != n {
        return Err(ExecError::BadSchedule);
    }
    let mut seen = vec![false; n];
    for &v in schedule {
        if v.idx() >= n || seen[v.idx()] {
            return Err(ExecError::BadSchedule);
        }
        seen[v.idx()] = true;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Composition

/// Composition record: the lazily computed stage-a output and state for one
/// node, stored inside the composed state of the node whose step forced the
/// computation. `h` is the distance from the holder to the record's node.
struct ComposeRecord {
    node: NodeId,
    a_out: Blob,
    a_state: Blob,
    h: u32,
}

struct ComposedState {
    b_state: Blob,
    records: Vec<ComposeRecord>,
}

impl ComposedState {
    fn to_blob(&self) -> Blob {
        let mut buf = Vec::new();
        wire::put_bytes(&mut buf, &self.b_state);
        wire::put_u32(&mut buf, self.records.len() as u32);
        for r in &self.records {
            wire::put_u32(&mut buf, r.node.0);
            wire::put_u32(&mut buf, r.h);
            wire::put_bytes(&mut buf, &r.a_out);
            wire::put_bytes(&mut buf, &r.a_state);
        }
        buf
    }

    fn from_blob(blob: &[u8]) -> Result<Self, ExecError> {
        let mut c = wire::Cursor::new(blob);
        let b_state = c.bytes()?.to_vec();
        let count = c.u32()?;
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let node = NodeId(c.u32()?);
            let h = c.u32()?;
            let a_out = c.bytes()?.to_vec();
            let a_state = c.bytes()?.to_vec();
            records.push(ComposeRecord {
                node,
                a_out,
                a_state,
                h,
            });
        }
        c.done()?;
        Ok(ComposedState { b_state, records })
    }
}

#[derive(Default)]
struct ComposeCache {
    a_out: HashMap<NodeId, Arc<Blob>>,
    a_state: HashMap<NodeId, Arc<Blob>>,
    holder: HashMap<NodeId, (NodeId, u32)>,
    computed: HashMap<NodeId, u32>,
    induced_order: Vec<NodeId>,
    pending: Vec<NodeId>,
}

/// `compose_slocal(a, b)`: runs `b`, materializing `a`'s outputs on demand.
/// A fresh `a`-output is computed at most once per node and the record is
/// stored in the composed state of the node whose step triggered it; later
/// steps read it from there. Locality is `T_a + 2 T_b`.
pub struct Composed {
    a: Rc<dyn SlocalAlgorithm>,
    b: Rc<dyn SlocalAlgorithm>,
    cache: RefCell<ComposeCache>,
    /// Set by `begin_run`: the in-memory index mirrors all physical records,
    /// so misses may compute fresh without scanning. Replays on foreign
    /// states start cold and must scan.
    index_complete: Cell<bool>,
    /// Verify every index hit against the physical record.
    strict_replay: bool,
}

pub fn compose_slocal(a: Rc<dyn SlocalAlgorithm>, b: Rc<dyn SlocalAlgorithm>) -> Rc<Composed> {
    Rc::new(Composed {
        a,
        b,
        cache: RefCell::new(ComposeCache::default()),
        index_complete: Cell::new(false),
        strict_replay: false,
    })
}

pub fn compose_slocal_strict(a: Rc<dyn SlocalAlgorithm>, b: Rc<dyn SlocalAlgorithm>) -> Rc<Composed> {
    Rc::new(Composed {
        a,
        b,
        cache: RefCell::new(ComposeCache::default()),
        index_complete: Cell::new(false),
        strict_replay: true,
    })
}

impl Composed {
    /// Order in which stage-a outputs were forced during the last run.
    pub fn induced_order(&self) -> Vec<NodeId> {
        self.cache.borrow().induced_order.clone()
    }

    /// How often each node's stage-a output was computed; all counts must
    /// be 1 after a complete run.
    pub fn compute_counts(&self) -> HashMap<NodeId, u32> {
        self.cache.borrow().computed.clone()
    }

    pub fn stage_a(&self) -> Rc<dyn SlocalAlgorithm> {
        self.a.clone()
    }

    pub fn stage_b(&self) -> Rc<dyn SlocalAlgorithm> {
        self.b.clone()
    }
}

impl SlocalAlgorithm for Composed {
    fn name(&self) -> String {
        format!("compose({}, {})", self.a.name(), self.b.name())
    }

    fn locality(&self, n: usize) -> u32 {
        self.a.locality(n) + 2 * self.b.locality(n)
    }

    fn begin_run(&self, inst: &Instance) {
        *self.cache.borrow_mut() = ComposeCache::default();
        self.index_complete.set(true);
        self.a.begin_run(inst);
        self.b.begin_run(inst);
    }

    fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
        let n = view.n();
        let t_b = self.b.locality(n);
        self.cache.borrow_mut().pending.clear();
        let outcome = {
            let b_states = ComposedBStates { engine: view };
            let resolver = Resolver { me: self, outer: view };
            let b_view = view.subview(view.root(), t_b, &b_states, Some(&resolver))?;
            self.b.step(&b_view)?
        };
        let mut cache = self.cache.borrow_mut();
        let pending: Vec<NodeId> = cache.pending.drain(..).collect();
        let records: Vec<ComposeRecord> = pending
            .into_iter()
            .map(|u| ComposeRecord {
                node: u,
                a_out: (*cache.a_out[&u]).clone(),
                a_state: (*cache.a_state[&u]).clone(),
                h: cache.holder[&u].1,
            })
            .collect();
        let state = ComposedState {
            b_state: outcome.state,
            records,
        }
        .to_blob();
        Ok(StepOutcome {
            state,
            output: outcome.output,
        })
    }

    fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
        // Deep: nested stages also drop their caches, so a replay reads
        // everything through the physical states it was given.
        Rc::new(Composed {
            a: self.a.replay_fresh(),
            b: self.b.replay_fresh(),
            cache: RefCell::new(ComposeCache::default()),
            index_complete: Cell::new(false),
            strict_replay: self.strict_replay,
        })
    }
}

/// Stage-b states extracted from the composed engine states.
struct ComposedBStates<'x> {
    engine: &'x View<'x>,
}

impl StateSource for ComposedBStates<'_> {
    fn state(&self, v: NodeId, view: &View) -> Result<Option<Arc<Blob>>, ExecError> {
        // The engine state lives at v itself; the caller's view already
        // charged dist(v). Read through the engine view at the same node.
        let _ = view;
        match self.engine.states.state(v, self.engine)? {
            None => Ok(None),
            Some(blob) => {
                let cs = ComposedState::from_blob(&blob)?;
                Ok(Some(Arc::new(cs.b_state)))
            }
        }
    }
}

/// Find node `target`'s record in the physical states within `reach` of the
/// view's root. Honest cost: the structural scan plus the state reads, both
/// charged through the view.
fn scan_records(
    outer: &View,
    target: NodeId,
    reach: u32,
) -> Result<Option<ComposeRecord>, ExecError> {
    let radius = reach.min(outer.budget());
    let mut found: Option<ComposeRecord> = None;
    for (w, _) in outer.nodes_within(radius)? {
        let Some(blob) = outer.state(w)? else {
            continue;
        };
        let cs = ComposedState::from_blob(&blob)?;
        for rec in cs.records {
            if rec.node == target {
                if found.is_some() {
                    return Err(ExecError::CacheViolation(format!(
                        "{target} has records at multiple holders"
                    )));
                }
                found = Some(rec);
            }
        }
    }
    Ok(found)
}

/// Stage-a states during a forced computation: the records already
/// materialized, which in lazy order are the a-steps that happened earlier.
/// Scans the physical states when the in-memory index may be incomplete.
struct AStates<'x> {
    me: &'x Composed,
    outer: &'x View<'x>,
    t_b: u32,
}

impl StateSource for AStates<'_> {
    fn state(&self, v: NodeId, view: &View) -> Result<Option<Arc<Blob>>, ExecError> {
        let hit = {
            let c = self.me.cache.borrow();
            c.a_state.get(&v).cloned().map(|b| (b, c.holder[&v].1))
        };
        if let Some((blob, h)) = hit {
            // The record physically sits h hops beyond v; the view charged
            // base + dist(v) already, add the holder hops on top.
            let d = view.known_dist(v).unwrap_or(0);
            view.charge_absolute(view.base() + d + h)?;
            return Ok(Some(blob));
        }
        if !self.me.index_complete.get() {
            let d = self.outer.dist(v)?;
            if let Some(rec) = scan_records(self.outer, v, d + self.t_b)? {
                return Ok(Some(Arc::new(rec.a_state)));
            }
        }
        Ok(None)
    }
}

struct Resolver<'x> {
    me: &'x Composed,
    outer: &'x View<'x>,
}

impl PriorSource for Resolver<'_> {
    fn prior(&self, u: NodeId, _caller: &View) -> Result<Arc<Blob>, ExecError> {
        let n = self.outer.n();
        let (t_a, t_b) = (self.me.a.locality(n), self.me.b.locality(n));
        let d = self.outer.dist(u)?;
        let hit = {
            let c = self.me.cache.borrow();
            c.a_out.get(&u).cloned().map(|out| (out, c.holder[&u]))
        };
        if let Some((out, (holder, h))) = hit {
            self.outer.charge_absolute(self.outer.base() + d + h)?;
            if self.me.strict_replay {
                let blob = self
                    .outer
                    .state(holder)?
                    .ok_or_else(|| ExecError::CacheViolation(format!("holder {holder} has no state")))?;
                let cs = ComposedState::from_blob(&blob)?;
                let rec = cs
                    .records
                    .iter()
                    .find(|r| r.node == u)
                    .ok_or_else(|| ExecError::CacheViolation(format!("{u} record missing at {holder}")))?;
                if rec.a_out != **out || rec.h != h {
                    return Err(ExecError::CacheViolation(format!(
                        "index for {u} disagrees with record at {holder}"
                    )));
                }
            }
            return Ok(out);
        }
        if !self.me.index_complete.get() {
            if let Some(rec) = scan_records(self.outer, u, d + t_b)? {
                return Ok(Arc::new(rec.a_out));
            }
        }
        // Not materialized anywhere: compute a at u now.
        let outcome = {
            let a_states = AStates {
                me: self.me,
                outer: self.outer,
                t_b,
            };
            let a_view = self
                .outer
                .subview(u, t_a, &a_states, self.outer.prior_source())?;
            self.me.a.step(&a_view)?
        };
        let mut c = self.me.cache.borrow_mut();
        let count = c.computed.entry(u).or_insert(0);
        *count += 1;
        if *count > 1 {
            return Err(ExecError::CacheViolation(format!(
                "stage-a output of {u} computed {count} times"
            )));
        }
        let out = Arc::new(outcome.output);
        c.a_out.insert(u, out.clone());
        c.a_state.insert(u, Arc::new(outcome.state));
        c.holder.insert(u, (self.outer.root(), d));
        c.induced_order.push(u);
        c.pending.push(u);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Schedules and identifier adversaries

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Identity,
    Reversed,
    Random,
    Bfs,
    DegreeDesc,
    FarPairs,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::Identity,
        ScheduleKind::Reversed,
        ScheduleKind::Random,
        ScheduleKind::Bfs,
        ScheduleKind::DegreeDesc,
        ScheduleKind::FarPairs,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScheduleKind::Identity => "identity",
            ScheduleKind::Reversed => "reversed",
            ScheduleKind::Random => "random",
            ScheduleKind::Bfs => "bfs",
            ScheduleKind::DegreeDesc => "degree_desc",
            ScheduleKind::FarPairs => "far_pairs",
        }
    }

    pub fn build(self, g: &Multigraph, seed: u64) -> Vec<NodeId> {
        let n = g.n();
        match self {
            ScheduleKind::Identity => g.nodes().collect(),
            ScheduleKind::Reversed => {
                let mut order: Vec<NodeId> = g.nodes().collect();
                order.reverse();
                order
            }
            ScheduleKind::Random => {
                let mut order: Vec<NodeId> = g.nodes().collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                order
            }
            ScheduleKind::Bfs => {
                let mut order = Vec::with_capacity(n);
                let mut seen = vec![false; n];
                for start in g.nodes() {
                    if seen[start.idx()] {
                        continue;
                    }
                    for (v, _) in g.bfs_within(start, u32::MAX - 1) {
                        if !seen[v.idx()] {
                            seen[v.idx()] = true;
                            order.push(v);
                        }
                    }
                }
                order
            }
            ScheduleKind::DegreeDesc => {
                let mut order: Vec<NodeId> = g.nodes().collect();
                order.sort_by_key(|&v| (std::cmp::Reverse(g.degree(v)), v));
                order
            }
            ScheduleKind::FarPairs => {
                // Alternate between the farthest and nearest unprocessed
                // nodes from a random anchor: consecutive steps land far
                // apart, stressing state locality.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let anchor = NodeId(rng.gen_range(0..n as u32));
                let dist = g.bfs_distances(anchor);
                let mut by_dist: Vec<NodeId> = g.nodes().collect();
                by_dist.sort_by_key(|&v| (dist[v.idx()].unwrap_or(u32::MAX), v));
                let mut order = Vec::with_capacity(n);
                let (mut lo, mut hi) = (0usize, n.saturating_sub(1));
                let mut take_far = true;
                while lo <= hi {
                    if take_far {
                        order.push(by_dist[hi]);
                        if hi == 0 {
                            break;
                        }
                        hi -= 1;
                    } else {
                        order.push(by_dist[lo]);
                        lo += 1;
                    }
                    take_far = !take_far;
                    if lo > hi {
                        break;
                    }
                }
                order
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdKind {
    Identity,
    RandomPoly,
    ByDegree,
}

impl IdKind {
    pub const ALL: [IdKind; 3] = [IdKind::Identity, IdKind::RandomPoly, IdKind::ByDegree];

    pub fn label(self) -> &'static str {
        match self {
            IdKind::Identity => "identity",
            IdKind::RandomPoly => "random_poly",
            IdKind::ByDegree => "by_degree",
        }
    }

    pub fn build(self, g: &Multigraph, seed: u64) -> IdAssignment {
        match self {
            IdKind::Identity => IdAssignment::identity(g.n()),
            IdKind::RandomPoly => IdAssignment::random_poly(g.n(), 2, seed),
            IdKind::ByDegree => IdAssignment::by_degree(g),
        }
    }
}

// ---------------------------------------------------------------------------
// Perturbation checks

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub trials: u32,
    pub effective_trials: u32,
    pub failures: u32,
    pub witness: Option<String>,
}

impl PerturbationReport {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

struct Perturbed {
    inst: Instance,
    changed: bool,
}

/// Rewrite everything outside the radius-r ball of v: permute the outside
/// identifiers among themselves and re-randomize input bits of edges with
/// no endpoint inside the ball.
fn perturb_outside(inst: &Instance, v: NodeId, r: u32, rng: &mut ChaCha8Rng) -> Perturbed {
    let g = &inst.graph;
    let mut inside = vec![false; g.n()];
    for (w, _) in g.bfs_within(v, r) {
        inside[w.idx()] = true;
    }
    let outside: Vec<NodeId> = g.nodes().filter(|w| !inside[w.idx()]).collect();
    let mut changed = false;

    let mut ids: Vec<Identifier> = g.nodes().map(|w| inst.ids.id(w)).collect();
    let mut shuffled: Vec<Identifier> = outside.iter().map(|&w| inst.ids.id(w)).collect();
    shuffled.shuffle(rng);
    for (&w, &id) in outside.iter().zip(&shuffled) {
        if ids[w.idx()] != id {
            changed = true;
        }
        ids[w.idx()] = id;
    }

    let mut input = (*inst.input).clone();
    for e in g.edges() {
        let (a, b) = g.endpoints(e);
        if inside[a.idx()] || inside[b.idx()] {
            continue;
        }
        let flipped = match input[e.idx()] {
            InputStatus::Input => InputStatus::NonInput,
            InputStatus::NonInput => InputStatus::Input,
            InputStatus::Unknown => InputStatus::Unknown,
        };
        if rng.gen_bool(0.5) && flipped != input[e.idx()] {
            input[e.idx()] = flipped;
            changed = true;
        }
    }

    let inst = Instance {
        graph: inst.graph.clone(),
        ids: Arc::new(IdAssignment::from_ids(ids)),
        coloring: inst.coloring.clone(),
        input: Arc::new(input),
        supported: inst.supported,
    };
    Perturbed { inst, changed }
}

/// A local algorithm must produce identical output at `v` when everything
/// beyond its radius is rewritten.
pub fn perturbation_check_local(
    alg: &dyn LocalAlgorithm,
    inst: &Instance,
    v: NodeId,
    trials: u32,
    seed: u64,
) -> Result<PerturbationReport, ExecError> {
    let r = alg.locality(inst.n());
    let honest = {
        let meter = Meter::new(r);
        let view = View::new(inst, v, r, &meter, &NoStates, None);
        alg.decide(&view)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PerturbationReport {
        trials,
        effective_trials: 0,
        failures: 0,
        witness: None,
    };
    for t in 0..trials {
        let p = perturb_outside(inst, v, r, &mut rng);
        if p.changed {
            report.effective_trials += 1;
        }
        let meter = Meter::new(r);
        let view = View::new(&p.inst, v, r, &meter, &NoStates, None);
        let out = alg.decide(&view);
        let same = matches!(&out, Ok(o) if *o == honest);
        if !same {
            report.failures += 1;
            if report.witness.is_none() {
                report.witness = Some(format!(
                    "trial {t}: output at {v} changed under an outside-only rewrite"
                ));
            }
        }
    }
    Ok(report)
}

/// SLOCAL variant: replays one scheduled step against perturbed outside
/// identifiers, input bits, and states of outside processed nodes. Replays
/// run on fresh algorithm clones, so in-memory caches cannot leak
/// unperturbed data into them; everything flows through the given states.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_check_slocal(
    alg: &dyn SlocalAlgorithm,
    inst: &Instance,
    schedule: &[NodeId],
    position: usize,
    trials: u32,
    seed: u64,
    prior: Option<&dyn PriorSource>,
) -> Result<PerturbationReport, ExecError> {
    assert!(position < schedule.len());
    let v = schedule[position];
    let r = alg.locality(inst.n());
    let (states, _) = run_slocal_prefix(inst, schedule, alg, position, prior)?;
    let honest = {
        let meter = Meter::new(r);
        let view = View::new(inst, v, r, &meter, &states, prior);
        let replay = alg.replay_fresh();
        let out = replay.step(&view)?;
        (out.state, out.output)
    };
    let g = &inst.graph;
    let mut inside = vec![false; g.n()];
    for (w, _) in g.bfs_within(v, r) {
        inside[w.idx()] = true;
    }
    let processed_outside: Vec<NodeId> = schedule[..position]
        .iter()
        .copied()
        .filter(|w| !inside[w.idx()])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PerturbationReport {
        trials,
        effective_trials: 0,
        failures: 0,
        witness: None,
    };
    for t in 0..trials {
        let p = perturb_outside(inst, v, r, &mut rng);
        let mut changed = p.changed;
        // Permute the states held by outside processed nodes.
        let mut perturbed_states = states.clone();
        let mut targets = processed_outside.clone();
        targets.shuffle(&mut rng);
        for (&w, &src) in processed_outside.iter().zip(&targets) {
            let blob = states.get(src).expect("processed node has a state");
            if w != src {
                changed = true;
            }
            perturbed_states.insert(w, blob);
        }
        if changed {
            report.effective_trials += 1;
        }
        let meter = Meter::new(r);
        let view = View::new(&p.inst, v, r, &meter, &perturbed_states, prior);
        let replay = alg.replay_fresh();
        let out = replay.step(&view);
        let same = matches!(&out, Ok(o) if o.state == honest.0 && o.output == honest.1);
        if !same {
            report.failures += 1;
            if report.witness.is_none() {
                report.witness = Some(format!(
                    "trial {t}: step at {v} (position {position}) changed under an outside-only rewrite"
                ));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{complete_bipartite, cycle, k55, path};

    fn inst(g: Multigraph) -> Instance {
        let ids = IdAssignment::identity(g.n());
        Instance::new(Arc::new(g), Arc::new(ids))
    }

    fn u32_blob(x: u32) -> Blob {
        let mut b = Vec::new();
        wire::put_u32(&mut b, x);
        b
    }

    fn blob_u32(b: &[u8]) -> u32 {
        let mut c = wire::Cursor::new(b);
        let x = c.u32().unwrap();
        c.done().unwrap();
        x
    }

    #[test]
    fn wire_codec_round_trips() {
        let mut buf = Vec::new();
        buf.push(7u8);
        wire::put_u32(&mut buf, 0xdead_beef);
        wire::put_bytes(&mut buf, b"abc");
        let mut c = wire::Cursor::new(&buf);
        assert_eq!(c.u8().unwrap(), 7);
        assert_eq!(c.u32().unwrap(), 0xdead_beef);
        assert_eq!(c.bytes().unwrap(), b"abc");
        c.done().unwrap();

        let mut c = wire::Cursor::new(&buf[..3]);
        assert!(c.u8().is_ok());
        assert!(c.u32().is_err(), "truncated u32");

        let mut c = wire::Cursor::new(&buf);
        c.u8().unwrap();
        assert!(c.done().is_err(), "trailing bytes must be rejected");
    }

    #[test]
    fn meter_caps_radius() {
        let m = Meter::new(5);
        m.record(NodeId(0), 3).unwrap();
        assert_eq!(m.max(), 3);
        m.record(NodeId(0), 2).unwrap();
        assert_eq!(m.max(), 3);
        m.record(NodeId(1), 5).unwrap();
        assert_eq!(m.max(), 5);
        assert!(matches!(
            m.record(NodeId(2), 6),
            Err(ExecError::LocalityExceeded { requested: 6, budget: 5, .. })
        ));
    }

    #[test]
    fn view_charges_follow_reads() {
        let i = inst(path(5));
        let meter = Meter::new(2);
        let view = View::new(&i, NodeId(0), 2, &meter, &NoStates, None);
        assert_eq!(view.identifier(NodeId(2)).unwrap(), Identifier(3));
        assert_eq!(meter.max(), 2);
        assert_eq!(view.degree(NodeId(1)).unwrap(), 2);
        assert_eq!(view.endpoints(EdgeId(3)), (NodeId(3), NodeId(4)));
        assert_eq!(view.try_dist(NodeId(4)).unwrap(), None);
        assert!(matches!(
            view.dist(NodeId(4)),
            Err(ExecError::OutOfView { .. })
        ));
    }

    #[test]
    fn supported_structure_is_free() {
        let i = inst(path(5)).supported();
        let meter = Meter::new(4);
        let view = View::new(&i, NodeId(2), 4, &meter, &NoStates, None);
        let ball = view.nodes_within(2).unwrap();
        assert_eq!(ball.len(), 5);
        view.identifier(NodeId(0)).unwrap();
        assert_eq!(meter.max(), 0, "structure and identifiers are free when supported");
        assert_eq!(view.state(NodeId(0)).unwrap(), None);
        assert_eq!(meter.max(), 2, "content still charges");
    }

    #[test]
    fn subview_envelope_enforced() {
        let i = inst(path(7));
        let meter = Meter::new(3);
        let view = View::new(&i, NodeId(0), 3, &meter, &NoStates, None);
        let sub = view.subview(NodeId(2), 1, &NoStates, None).unwrap();
        assert_eq!(sub.base(), 2);
        assert_eq!(sub.identifier(NodeId(3)).unwrap(), Identifier(4));
        assert!(
            view.subview(NodeId(2), 2, &NoStates, None).is_err(),
            "child would see past the parent's horizon"
        );
    }

    #[test]
    fn snapshot_contents_and_digest() {
        let g = path(3);
        let i = inst(g);
        let mut states = StateMap::new();
        states.insert(NodeId(2), Arc::new(vec![9]));
        let snap = make_view(&i, &states, NodeId(1), 1).unwrap();
        assert_eq!(snap.nodes.len(), 3);
        assert_eq!(snap.edges.len(), 2);
        assert_eq!(snap.states, vec![(NodeId(2), vec![9])]);
        assert_eq!(snap.digest(), make_view(&i, &states, NodeId(1), 1).unwrap().digest());
        let other = make_view(&i, &states, NodeId(0), 1).unwrap();
        assert_ne!(snap.digest(), other.digest());
    }

    struct DegreeLocal;

    impl LocalAlgorithm for DegreeLocal {
        fn name(&self) -> String {
            "degree".into()
        }
        fn locality(&self, _n: usize) -> u32 {
            0
        }
        fn decide(&self, view: &View) -> Result<Blob, ExecError> {
            Ok(u32_blob(view.degree(view.root())?))
        }
    }

    #[test]
    fn run_local_simultaneous_rounds() {
        let (g, _) = k55();
        let i = inst(g);
        let run = run_local(&i, &DegreeLocal).unwrap();
        assert!(run.outputs.iter().all(|o| blob_u32(o) == 5));
        assert_eq!(run.measured_max_radius, 0);
    }

    struct CountProcessedNeighbors;

    impl SlocalAlgorithm for CountProcessedNeighbors {
        fn name(&self) -> String {
            "count-processed".into()
        }
        fn locality(&self, _n: usize) -> u32 {
            1
        }
        fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
            let mut count = 0u32;
            for (_, w) in view.incident(view.root())? {
                if view.state(w)?.is_some() {
                    count += 1;
                }
            }
            Ok(StepOutcome {
                state: vec![1],
                output: u32_blob(count),
            })
        }
        fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
            Rc::new(CountProcessedNeighbors)
        }
    }

    #[test]
    fn slocal_sees_only_earlier_states() {
        let i = inst(path(3));
        let schedule = vec![NodeId(1), NodeId(0), NodeId(2)];
        let run = run_slocal(&i, &schedule, &CountProcessedNeighbors).unwrap();
        let outs: Vec<u32> = run
            .outputs
            .iter()
            .map(|o| blob_u32(o.as_ref().unwrap()))
            .collect();
        assert_eq!(outs, vec![1, 0, 1]);
        assert_eq!(run.measured_max_radius, 1);
    }

    #[test]
    fn schedules_are_validated() {
        let i = inst(path(3));
        let dup = vec![NodeId(0), NodeId(0), NodeId(2)];
        assert!(matches!(
            run_slocal(&i, &dup, &CountProcessedNeighbors),
            Err(ExecError::BadSchedule)
        ));
        let short = vec![NodeId(0)];
        assert!(matches!(
            run_slocal(&i, &short, &CountProcessedNeighbors),
            Err(ExecError::BadSchedule)
        ));
    }

    struct DegreeStage;

    impl SlocalAlgorithm for DegreeStage {
        fn name(&self) -> String {
            "degree-label".into()
        }
        fn locality(&self, _n: usize) -> u32 {
            0
        }
        fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
            let b = u32_blob(view.degree(view.root())?);
            Ok(StepOutcome { state: b.clone(), output: b })
        }
        fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
            Rc::new(DegreeStage)
        }
    }

    struct NeighborPriorSum;

    impl SlocalAlgorithm for NeighborPriorSum {
        fn name(&self) -> String {
            "neighbor-prior-sum".into()
        }
        fn locality(&self, _n: usize) -> u32 {
            1
        }
        fn step(&self, view: &View) -> Result<StepOutcome, ExecError> {
            let v = view.root();
            let mut sum = blob_u32(&view.prior(v)?);
            for (_, w) in view.incident(v)? {
                sum += blob_u32(&view.prior(w)?);
            }
            let b = u32_blob(sum);
            Ok(StepOutcome { state: b.clone(), output: b })
        }
        fn replay_fresh(&self) -> Rc<dyn SlocalAlgorithm> {
            Rc::new(NeighborPriorSum)
        }
    }

    #[test]
    fn composition_chains_outputs_and_localities() {
        let alg = compose_slocal(Rc::new(DegreeStage), Rc::new(NeighborPriorSum));
        assert_eq!(alg.locality(3), 2);
        let i = inst(path(3));
        let schedule = vec![NodeId(2), NodeId(0), NodeId(1)];
        let run = run_slocal(&i, &schedule, alg.as_ref()).unwrap();
        let outs: Vec<u32> = run
            .outputs
            .iter()
            .map(|o| blob_u32(o.as_ref().unwrap()))
            .collect();
        assert_eq!(outs, vec![3, 4, 3], "degree of self plus neighbors");
        let counts = alg.compute_counts();
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&k| k == 1));
        assert!(run.measured_max_radius <= 2);

        // Same run again: begin_run resets caches, results identical.
        let again = run_slocal(&i, &schedule, alg.as_ref()).unwrap();
        assert_eq!(run.outputs, again.outputs);
        assert_eq!(run.measured_max_radius, again.measured_max_radius);
    }

    #[test]
    fn composition_matches_manual_staging() {
        let g = cycle(11);
        let i = inst(g);
        let schedule = ScheduleKind::Random.build(&i.graph, 5);
        let alg = compose_slocal(Rc::new(DegreeStage), Rc::new(NeighborPriorSum));
        let composed = run_slocal(&i, &schedule, alg.as_ref()).unwrap();

        let first = run_slocal(&i, &alg.induced_order(), &DegreeStage).unwrap();
        let prior = MapPrior::new(first.outputs.clone());
        let second =
            run_slocal_with_prior(&i, &schedule, &NeighborPriorSum, Some(&prior)).unwrap();
        assert_eq!(composed.outputs, second.outputs);
    }

    #[test]
    fn strict_composition_audits_cache_hits() {
        let alg = compose_slocal_strict(Rc::new(DegreeStage), Rc::new(NeighborPriorSum));
        let i = inst(complete_bipartite(3, 4).0);
        let schedule = ScheduleKind::Reversed.build(&i.graph, 0);
        let run = run_slocal(&i, &schedule, alg.as_ref()).unwrap();
        assert!(run.outputs.iter().all(|o| o.is_some()));
    }

    #[test]
    fn stage_without_prior_reports_missing() {
        let i = inst(path(2));
        let err = match run_slocal(&i, &[NodeId(0), NodeId(1)], &NeighborPriorSum) {
            Err(e) => e,
            Ok(_) => panic!("stage must fail without a prior source"),
        };
        assert!(err.to_string().contains("prior"), "{err}");
    }

    #[test]
    fn perturbation_check_counts_effective_trials() {
        let i = inst(cycle(20));
        let schedule: Vec<NodeId> = i.graph.nodes().collect();
        for position in [0usize, 10, 19] {
            let report = perturbation_check_slocal(
                &CountProcessedNeighbors,
                &i,
                &schedule,
                position,
                30,
                7,
                None,
            )
            .unwrap();
            assert_eq!(report.failures, 0, "position {position}");
            assert!(report.effective_trials > 0, "position {position}");
            assert!(report.pass());
        }
    }

    #[test]
    fn perturbation_check_local_constant() {
        let i = inst(cycle(16));
        let report = perturbation_check_local(&DegreeLocal, &i, NodeId(3), 20, 9).unwrap();
        assert_eq!(report.failures, 0);
        assert!(report.effective_trials > 0);
    }

    #[test]
    fn schedule_builders_cover_all_nodes() {
        let g = crate::graph::random_multigraph(17, 30, 2);
        for kind in ScheduleKind::ALL {
            let s = kind.build(&g, 4);
            let mut sorted: Vec<u32> = s.iter().map(|v| v.0).collect();
            sorted.sort();
            assert_eq!(sorted, (0..17).collect::<Vec<u32>>(), "{kind:?}");
        }
    }
}
