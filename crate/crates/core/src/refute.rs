//! Certified refutation of constant-locality bipartite labeling algorithms.
//!
//! A candidate algorithm claims to solve the edge-labeling form of sinkless
//! orientation on a fixed support graph: every active node labels its
//! incident input edges with `O` (outgoing) or `I` (incoming), and a node of
//! input degree >= 3 must not be a sink. The machinery here eliminates one
//! communication round at a time, refutes the resulting locality-0 algorithm
//! by direct enumeration, and lifts the failing input back up the chain.
//! Every certificate is replayed against the algorithm it indicts before it
//! is returned.

use crate::exec::{
    wire, Blob, ExecError, InputStatus, Instance, LocalAlgorithm, Meter, NoStates, View,
};
use crate::graph::{EdgeId, IdAssignment, Multigraph, NodeId, Side, TwoColoring};
use crate::orient::{self, global_orientation, EdgeLabeling, Label, Violation, ViolationKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum RefuteError {
    #[error("support graph rejected: {0}")]
    BadSupport(String),
    #[error("locality {t} is out of range for girth {girth}: elimination needs 0 < 2*locality < girth")]
    LocalityOutOfRange { t: u32, girth: u32 },
    #[error("enumeration regions through {via} and {via2} overlap next to {node}")]
    RegionsOverlap { node: NodeId, via: NodeId, via2: NodeId },
    #[error("{0} edges exceed the exhaustive-check cap of {1}")]
    TooManyEdges(usize, usize),
    #[error("{0}")]
    Invalid(String),
    #[error("certificate failed to reproduce its violation: {0}")]
    Unconfirmed(String),
    #[error("internal refuter check failed: {0}")]
    Internal(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn invalid(msg: impl Into<String>) -> RefuteError {
    RefuteError::Invalid(msg.into())
}

/// Regular bipartite support graph with globally known identifiers. Input
/// instances are subsets of its edges, packed into a `u128` bitmask indexed
/// by [`EdgeId`], which caps supports at 128 edges.
#[derive(Clone, Debug)]
pub struct SupportInstance {
    pub graph: Arc<Multigraph>,
    pub coloring: Arc<TwoColoring>,
    pub ids: Arc<IdAssignment>,
    pub d: u32,
    pub girth: u32,
}

pub const MAX_SUPPORT_EDGES: usize = 128;

impl SupportInstance {
    pub fn new(
        graph: Arc<Multigraph>,
        coloring: Arc<TwoColoring>,
        ids: Arc<IdAssignment>,
    ) -> Result<Self, RefuteError> {
        let g = &*graph;
        if g.m() > MAX_SUPPORT_EDGES {
            return Err(RefuteError::BadSupport(format!(
                "{} edges exceed the {MAX_SUPPORT_EDGES}-edge input-mask limit",
                g.m()
            )));
        }
        if g.n() < 2 || g.m() == 0 {
            return Err(RefuteError::BadSupport("support needs nodes and edges".into()));
        }
        if coloring.n() != g.n() || ids.n() != g.n() {
            return Err(RefuteError::BadSupport("coloring or identifier size mismatch".into()));
        }
        if !coloring.is_proper(g) {
            return Err(RefuteError::BadSupport("coloring is not a proper two-coloring".into()));
        }
        if !g.is_simple() {
            return Err(RefuteError::BadSupport("support must be simple".into()));
        }
        let d = g.degree(NodeId(0));
        if let Some(v) = g.nodes().find(|&v| g.degree(v) != d) {
            return Err(RefuteError::BadSupport(format!(
                "not regular: {v} has degree {}, {} has degree {d}",
                g.degree(v),
                NodeId(0)
            )));
        }
        let girth = g
            .girth()
            .ok_or_else(|| RefuteError::BadSupport("support has no cycle".into()))?;
        Ok(SupportInstance { graph, coloring, ids, d, girth })
    }

    pub fn with_identity_ids(g: Multigraph, c: TwoColoring) -> Result<Self, RefuteError> {
        let ids = IdAssignment::identity(g.n());
        SupportInstance::new(Arc::new(g), Arc::new(c), Arc::new(ids))
    }

    pub fn incident_mask(&self, x: NodeId) -> u128 {
        self.graph
            .incident(x)
            .iter()
            .fold(0u128, |m, &(e, _)| m | (1u128 << e.0))
    }

    /// Edges whose input status is readable at locality `r` from `x`: the
    /// incident edges, plus every edge with an endpoint within distance
    /// `r - 1`. Locality 1 therefore still reads only the incident edges,
    /// which keeps sibling enumeration regions disjoint even at girth 4.
    pub fn vis_mask(&self, x: NodeId, r: u32) -> u128 {
        let mut mask = self.incident_mask(x);
        if r >= 2 {
            for (w, _) in self.graph.bfs_within(x, r - 1) {
                for &(e, _) in self.graph.incident(w) {
                    mask |= 1u128 << e.0;
                }
            }
        }
        mask
    }

    pub fn nodes_of(&self, side: Side) -> Vec<NodeId> {
        self.graph
            .nodes()
            .filter(|&v| self.coloring.side(v) == side)
            .collect()
    }

    pub fn full_input(&self) -> u128 {
        if self.graph.m() == 128 {
            u128::MAX
        } else {
            (1u128 << self.graph.m()) - 1
        }
    }

    fn edge_between(&self, u: NodeId, v: NodeId) -> Option<EdgeId> {
        self.graph
            .incident(u)
            .iter()
            .find(|&&(_, w)| w == v)
            .map(|&(e, _)| e)
    }

    /// Edges a radius-`t` scan around active `v` may fix freely when the
    /// input near its passive neighbor `u` is already pinned down.
    fn region(&self, u: NodeId, v: NodeId, t: u32) -> Vec<EdgeId> {
        edges_from_mask(self.vis_mask(v, t) & !self.vis_mask(u, t - 1))
    }
}

pub fn mask_from_edges(edges: &[EdgeId]) -> u128 {
    edges.iter().fold(0u128, |m, &e| m | (1u128 << e.0))
}

pub fn edges_from_mask(mut mask: u128) -> Vec<EdgeId> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    while mask != 0 {
        out.push(EdgeId(mask.trailing_zeros()));
        mask &= mask - 1;
    }
    out
}

fn subset_mask(edges: &[EdgeId], s: u32) -> u128 {
    let mut mask = 0u128;
    for (i, &e) in edges.iter().enumerate() {
        if s >> i & 1 == 1 {
            mask |= 1u128 << e.0;
        }
    }
    mask
}

/// Black-box candidate: labels the incident input edges of an active node
/// from the input restricted to its visible edges. `decide` receives the
/// input already masked to `vis_mask(v, locality)` and must emit exactly one
/// label per incident input edge of `v`.
pub trait BipartiteAlgorithm {
    fn name(&self) -> String;
    fn locality(&self, n: usize) -> u32;
    fn active(&self) -> Side;
    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError>;
}

/// Nonempty subset of `{O, I}`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct OutputSet {
    bits: u8,
}

impl OutputSet {
    pub fn empty() -> Self {
        OutputSet { bits: 0 }
    }

    fn bit(label: Label) -> u8 {
        match label {
            Label::O => 1,
            Label::I => 2,
        }
    }

    pub fn insert(&mut self, label: Label) {
        self.bits |= Self::bit(label);
    }

    pub fn contains(self, label: Label) -> bool {
        self.bits & Self::bit(label) != 0
    }

    pub fn only(self, label: Label) -> bool {
        self.bits == Self::bit(label)
    }

    pub fn is_all(self) -> bool {
        self.bits == 3
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }
}

impl std::fmt::Display for OutputSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.bits {
            0 => write!(f, "{{}}"),
            1 => write!(f, "{{O}}"),
            2 => write!(f, "{{I}}"),
            _ => write!(f, "{{O,I}}"),
        }
    }
}

/// Failing input for a specific algorithm on a specific support: replaying
/// the algorithm on exactly `input_edges` exhibits `kind` at
/// `violating_node`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub input_edges: Vec<EdgeId>,
    pub violating_node: NodeId,
    pub kind: ViolationKind,
}

impl Counterexample {
    pub fn new(mut input_edges: Vec<EdgeId>, violating_node: NodeId, kind: ViolationKind) -> Self {
        input_edges.sort();
        input_edges.dedup();
        Counterexample { input_edges, violating_node, kind }
    }

    pub fn input_mask(&self, m: usize) -> Result<u128, RefuteError> {
        let mut mask = 0u128;
        for &e in &self.input_edges {
            if e.idx() >= m {
                return Err(invalid(format!("certificate edge {e} out of range for m={m}")));
            }
            mask |= 1u128 << e.0;
        }
        if mask.count_ones() as usize != self.input_edges.len() {
            return Err(invalid("certificate lists an input edge twice"));
        }
        Ok(mask)
    }
}

/// On-disk form of a counterexample, tied to the support graph it refutes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub support_graph_ref: String,
    pub input_edge_ids: Vec<u32>,
    pub violating_node: u32,
    pub kind: ViolationKind,
}

impl Certificate {
    pub fn new(support_graph_ref: impl Into<String>, cex: &Counterexample) -> Self {
        Certificate {
            support_graph_ref: support_graph_ref.into(),
            input_edge_ids: cex.input_edges.iter().map(|e| e.0).collect(),
            violating_node: cex.violating_node.0,
            kind: cex.kind,
        }
    }

    pub fn counterexample(&self) -> Counterexample {
        Counterexample::new(
            self.input_edge_ids.iter().map(|&e| EdgeId(e)).collect(),
            NodeId(self.violating_node),
            self.kind,
        )
    }
}

/// Run one decide query through the visibility mask and check that the
/// answer labels exactly the incident input edges.
fn query(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    v: NodeId,
    input: u128,
) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
    if si.coloring.side(v) != alg.active() {
        return Err(invalid(format!("{v} is not on the active side")));
    }
    let visible = input & si.vis_mask(v, alg.locality(si.graph.n()));
    let out = alg.decide(si, v, visible)?;
    let expected = visible & si.incident_mask(v);
    let mut seen = 0u128;
    for &(e, _) in &out {
        if e.idx() >= si.graph.m() {
            return Err(invalid(format!("label on unknown edge {e}")));
        }
        let bit = 1u128 << e.0;
        if seen & bit != 0 {
            return Err(invalid(format!("two labels on edge {e}")));
        }
        if expected & bit == 0 {
            return Err(invalid(format!(
                "label on {e}, which is not an incident input edge of {v}"
            )));
        }
        seen |= bit;
    }
    if seen != expected {
        return Err(invalid(format!(
            "missing labels at {v} on {:?}",
            edges_from_mask(expected & !seen)
        )));
    }
    Ok(out)
}

fn check_input_mask(si: &SupportInstance, input: u128) -> Result<(), RefuteError> {
    if input & !si.full_input() != 0 {
        return Err(invalid("input mask has bits beyond the edge count"));
    }
    Ok(())
}

/// Labels every active node emits on the given input, keyed for the
/// orientation validator.
pub fn labeling_on_input(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    input: u128,
) -> Result<EdgeLabeling, RefuteError> {
    check_input_mask(si, input)?;
    let mut lab = EdgeLabeling::new();
    for v in si.nodes_of(alg.active()) {
        if input & si.incident_mask(v) == 0 {
            continue;
        }
        for (e, label) in query(si, alg, v, input)? {
            lab.set(v, e, label);
        }
    }
    Ok(lab)
}

/// Sink violations the algorithm leaves on the given input.
pub fn violations_on_input(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    input: u128,
) -> Result<Vec<Violation>, RefuteError> {
    let lab = labeling_on_input(si, alg, input)?;
    let bools: Vec<bool> = (0..si.graph.m()).map(|i| input >> i & 1 == 1).collect();
    orient::validate_bipartite(&si.graph, &si.coloring, &bools, alg.active(), &lab)
        .map_err(|e| invalid(e.to_string()))
}

/// Replay a certificate and insist the claimed violation is really there.
pub fn verify_counterexample(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    cex: &Counterexample,
) -> Result<(), RefuteError> {
    if !matches!(cex.kind, ViolationKind::ActiveSink | ViolationKind::PassiveSink) {
        return Err(invalid(format!("certificate kind {:?} is not a sink violation", cex.kind)));
    }
    let input = cex.input_mask(si.graph.m())?;
    let viols = violations_on_input(si, alg, input)?;
    if viols
        .iter()
        .any(|w| w.node == cex.violating_node && w.kind == cex.kind)
    {
        Ok(())
    } else {
        Err(RefuteError::Unconfirmed(format!(
            "no {:?} at {} under the certified input",
            cex.kind, cex.violating_node
        )))
    }
}

/// Memoizes decide calls per (node, visible mask). Keys are canonical
/// because every caller masks the input before querying.
struct MemoAlg<'a> {
    inner: &'a dyn BipartiteAlgorithm,
    memo: RefCell<HashMap<(NodeId, u128), Vec<(EdgeId, Label)>>>,
}

impl<'a> MemoAlg<'a> {
    fn new(inner: &'a dyn BipartiteAlgorithm) -> Self {
        MemoAlg { inner, memo: RefCell::new(HashMap::new()) }
    }
}

impl BipartiteAlgorithm for MemoAlg<'_> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn locality(&self, n: usize) -> u32 {
        self.inner.locality(n)
    }

    fn active(&self) -> Side {
        self.inner.active()
    }

    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        if let Some(hit) = self.memo.borrow().get(&(v, visible)) {
            return Ok(hit.clone());
        }
        let out = self.inner.decide(si, v, visible)?;
        self.memo.borrow_mut().insert((v, visible), out.clone());
        Ok(out)
    }
}

fn label_on(out: &[(EdgeId, Label)], e: EdgeId) -> Result<Label, RefuteError> {
    let mut found = None;
    for &(f, label) in out {
        if f == e {
            if found.is_some() {
                return Err(invalid(format!("two labels on edge {e}")));
            }
            found = Some(label);
        }
    }
    found.ok_or_else(|| invalid(format!("no label on edge {e}")))
}

const REGION_SCAN_CAP: usize = 26;

/// Enumerate every assignment of `free` on top of `base` and collect the
/// labels `alg` gives edge `e` at active node `v`. With `stop_at_first_o`
/// the scan returns as soon as one assignment yields `O`, along with that
/// assignment's bits on the free edges.
fn scan_region(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    v: NodeId,
    e: EdgeId,
    base: u128,
    free: &[EdgeId],
    stop_at_first_o: bool,
) -> Result<(OutputSet, Option<u128>), RefuteError> {
    if free.len() > REGION_SCAN_CAP {
        return Err(invalid(format!(
            "enumeration region of {} edges is too large to scan",
            free.len()
        )));
    }
    let vis_v = si.vis_mask(v, alg.locality(si.graph.n()));
    let free_bits: Vec<u128> = free.iter().map(|f| 1u128 << f.0).collect();
    let region_mask: u128 = free_bits.iter().fold(0, |m, b| m | b);
    let mut set = OutputSet::empty();
    for a in 0..(1u64 << free.len()) {
        let mut input = base;
        for (i, &b) in free_bits.iter().enumerate() {
            if a >> i & 1 == 1 {
                input |= b;
            }
        }
        let label = label_on(&alg.decide(si, v, input & vis_v)?, e)?;
        set.insert(label);
        if label == Label::O && stop_at_first_o {
            return Ok((set, Some(input & region_mask)));
        }
        if set.is_all() {
            break;
        }
    }
    Ok((set, None))
}

/// Labels `alg` can emit on the edge `{u, v}` across every input that
/// agrees with `known` on the edges visible to passive `u` one radius in.
/// The edge itself must be input in `known`.
pub fn possible_outputs(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    u: NodeId,
    v: NodeId,
    known: u128,
) -> Result<OutputSet, RefuteError> {
    check_input_mask(si, known)?;
    let t = alg.locality(si.graph.n());
    if t == 0 {
        return Err(invalid("output enumeration needs locality >= 1"));
    }
    if si.coloring.side(v) != alg.active() || si.coloring.side(u) == alg.active() {
        return Err(invalid(format!("{u} must be passive and {v} active")));
    }
    let e = si
        .edge_between(u, v)
        .ok_or_else(|| invalid(format!("{u} and {v} are not adjacent")))?;
    if known >> e.0 & 1 == 0 {
        return Err(invalid(format!("edge {e} must be input in `known`")));
    }
    let base = known & si.vis_mask(u, t - 1);
    let free = si.region(u, v, t);
    let (set, _) = scan_region(si, alg, v, e, base, &free, false)?;
    Ok(set)
}

fn check_regions_at(si: &SupportInstance, u: NodeId, t: u32) -> Result<(), RefuteError> {
    let vis_u = si.vis_mask(u, t - 1);
    let inc = si.graph.incident(u);
    for (i, &(_, v)) in inc.iter().enumerate() {
        let rv = si.vis_mask(v, t) & !vis_u;
        for &(_, v2) in &inc[i + 1..] {
            if rv & (si.vis_mask(v2, t) & !vis_u) != 0 {
                return Err(RefuteError::RegionsOverlap { node: u, via: v, via2: v2 });
            }
        }
    }
    Ok(())
}

/// One round shaved off `inner`: active sides swap, and the new algorithm
/// answers from the set of labels `inner` could still emit. Bound to the
/// support instance it was checked against.
pub struct EliminatedAlgorithm {
    inner: Rc<dyn BipartiteAlgorithm>,
    t: u32,
    active: Side,
    memo: RefCell<HashMap<(NodeId, u128), Vec<(EdgeId, Label)>>>,
}

impl BipartiteAlgorithm for EliminatedAlgorithm {
    fn name(&self) -> String {
        format!("eliminated({})", self.inner.name())
    }

    fn locality(&self, _n: usize) -> u32 {
        self.t - 1
    }

    fn active(&self) -> Side {
        self.active
    }

    fn decide(
        &self,
        si: &SupportInstance,
        u: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        let visible = visible & si.vis_mask(u, self.t - 1);
        if let Some(hit) = self.memo.borrow().get(&(u, visible)) {
            return Ok(hit.clone());
        }
        let mut out = Vec::new();
        for &(e, v) in si.graph.incident(u) {
            if visible >> e.0 & 1 == 0 {
                continue;
            }
            let free = si.region(u, v, self.t);
            // O goes out only when every completion the inner algorithm
            // could see labels the edge I; one O witness settles it as I.
            let (_, o_witness) = scan_region(si, self.inner.as_ref(), v, e, visible, &free, true)?;
            out.push((e, if o_witness.is_some() { Label::I } else { Label::O }));
        }
        self.memo.borrow_mut().insert((u, visible), out.clone());
        Ok(out)
    }
}

/// Build the one-round-cheaper replacement. Requires 0 < 2*locality < girth
/// and verifies on the concrete support that the enumeration regions of
/// sibling neighbors never overlap, which is what makes their completions
/// independently realizable.
pub fn eliminate_round(
    si: &SupportInstance,
    alg: Rc<dyn BipartiteAlgorithm>,
) -> Result<EliminatedAlgorithm, RefuteError> {
    let t = alg.locality(si.graph.n());
    if t == 0 || 2 * t >= si.girth {
        return Err(RefuteError::LocalityOutOfRange { t, girth: si.girth });
    }
    for u in si.nodes_of(alg.active().opposite()) {
        check_regions_at(si, u, t)?;
    }
    Ok(EliminatedAlgorithm {
        t,
        active: alg.active().opposite(),
        inner: alg,
        memo: RefCell::new(HashMap::new()),
    })
}

/// Refute a locality-0 algorithm on a 5-regular support by tabulating, per
/// edge, the labels it emits across all 2^5 incident views of the edge's
/// active endpoint, then reading a failing input off the table.
pub fn refute_zero_round(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
) -> Result<Counterexample, RefuteError> {
    let n = si.graph.n();
    if si.d != 5 {
        return Err(invalid(format!(
            "zero-round refutation is calibrated to 5-regular supports, got {}-regular",
            si.d
        )));
    }
    if alg.locality(n) != 0 {
        return Err(invalid(format!(
            "zero-round refutation needs a locality-0 algorithm, got locality {}",
            alg.locality(n)
        )));
    }
    // The memo also serves the certificate replay below, so the whole call
    // issues at most 2^5 distinct queries per active node.
    let memo = MemoAlg::new(alg);
    let active = alg.active();
    let m = si.graph.m();
    let mut sets = vec![OutputSet::empty(); m];
    let mut o_witness: Vec<Option<u128>> = vec![None; m];
    for &v in &si.nodes_of(active) {
        let inc: Vec<EdgeId> = si.graph.incident(v).iter().map(|&(e, _)| e).collect();
        for s in 1u32..1 << inc.len() {
            let mask = subset_mask(&inc, s);
            for (e, label) in query(si, &memo, v, mask)? {
                sets[e.idx()].insert(label);
                if label == Label::O && o_witness[e.idx()].is_none() {
                    o_witness[e.idx()] = Some(mask);
                }
            }
        }
    }
    // An active node with three edges that never come out O is starved by
    // making exactly those three its input.
    for &v in &si.nodes_of(active) {
        let all_i: Vec<EdgeId> = si
            .graph
            .incident(v)
            .iter()
            .map(|&(e, _)| e)
            .filter(|&e| sets[e.idx()].only(Label::I))
            .collect();
        if all_i.len() >= 3 {
            let cex = Counterexample::new(all_i[..3].to_vec(), v, ViolationKind::ActiveSink);
            verify_counterexample(si, &memo, &cex)?;
            return Ok(cex);
        }
    }
    // Otherwise every active node has at least three edges that can come
    // out O; averaging over the passive side, some passive node collects
    // three of them. Realizing each O witness around its active endpoint
    // starves that passive node of I labels. Distinct active endpoints have
    // disjoint incident edge sets, so the witness views merge verbatim.
    for &u in &si.nodes_of(active.opposite()) {
        let outward: Vec<EdgeId> = si
            .graph
            .incident(u)
            .iter()
            .map(|&(e, _)| e)
            .filter(|&e| sets[e.idx()].contains(Label::O))
            .collect();
        if outward.len() < 3 {
            continue;
        }
        let mut input = 0u128;
        for &e in &outward[..3] {
            input |= o_witness[e.idx()].expect("an O in the set records its witness view");
        }
        let cex =
            Counterexample::new(edges_from_mask(input), u, ViolationKind::PassiveSink);
        verify_counterexample(si, &memo, &cex)?;
        return Ok(cex);
    }
    Err(RefuteError::Internal(
        "every active node can emit O on three edges, yet no passive node collects three".into(),
    ))
}

/// Translate a counterexample against `eliminate_round(upper)` into one
/// against `upper` itself.
pub fn lift_counterexample(
    si: &SupportInstance,
    upper: &dyn BipartiteAlgorithm,
    cex: &Counterexample,
) -> Result<Counterexample, RefuteError> {
    let t = upper.locality(si.graph.n());
    if t == 0 {
        return Err(invalid("lifting needs the upper algorithm to have locality >= 1"));
    }
    let input = cex.input_mask(si.graph.m())?;
    let lifted = match cex.kind {
        ViolationKind::ActiveSink => {
            // The eliminated algorithm answered I on every input edge of its
            // active node u, meaning each edge has a completion where
            // `upper` answers O. Installing all those completions at once is
            // sound exactly because the regions are disjoint.
            let u = cex.violating_node;
            if si.coloring.side(u) == upper.active() {
                return Err(invalid(format!(
                    "active-sink node {u} should be passive for the lifted algorithm"
                )));
            }
            check_regions_at(si, u, t)?;
            let known = input & si.vis_mask(u, t - 1);
            let mut new_input = input;
            for &(e, v) in si.graph.incident(u) {
                if input >> e.0 & 1 == 0 {
                    continue;
                }
                let free = si.region(u, v, t);
                let (_, witness) = scan_region(si, upper, v, e, known, &free, true)?;
                let witness = witness.ok_or_else(|| {
                    RefuteError::Unconfirmed(format!(
                        "no completion makes the lifted algorithm emit O on {e}"
                    ))
                })?;
                new_input = (new_input & !mask_from_edges(&free)) | witness;
            }
            Counterexample::new(edges_from_mask(new_input), u, ViolationKind::PassiveSink)
        }
        ViolationKind::PassiveSink => {
            // Every incident input edge of the passive node came out O,
            // meaning `upper` answers I on it under every completion, the
            // actual input included. The same input already works.
            let v = cex.violating_node;
            if si.coloring.side(v) != upper.active() {
                return Err(invalid(format!(
                    "passive-sink node {v} should be active for the lifted algorithm"
                )));
            }
            Counterexample::new(cex.input_edges.clone(), v, ViolationKind::ActiveSink)
        }
        other => return Err(invalid(format!("cannot lift a {other:?} certificate"))),
    };
    verify_counterexample(si, upper, &lifted)?;
    Ok(lifted)
}

/// Verified refutation of `alg`: the certified input on which it leaves a
/// sink, plus how many rounds were eliminated to find it.
#[derive(Clone, Debug)]
pub struct Refutation {
    pub counterexample: Counterexample,
    pub rounds_eliminated: u32,
}

/// Eliminate rounds down to locality 0, refute there, and lift the failing
/// input back up. The returned certificate is replayed against the original
/// algorithm before this returns.
pub fn refute(
    si: &SupportInstance,
    alg: Rc<dyn BipartiteAlgorithm>,
) -> Result<Refutation, RefuteError> {
    let t0 = alg.locality(si.graph.n());
    if 2 * t0 >= si.girth {
        return Err(RefuteError::LocalityOutOfRange { t: t0, girth: si.girth });
    }
    let mut chain: Vec<Rc<dyn BipartiteAlgorithm>> = vec![alg];
    for _ in 0..t0 {
        let next = eliminate_round(si, chain.last().unwrap().clone())?;
        chain.push(Rc::new(next));
    }
    let mut cex = refute_zero_round(si, chain.last().unwrap().as_ref())?;
    for upper in chain.iter().rev().skip(1) {
        cex = lift_counterexample(si, upper.as_ref(), &cex)?;
    }
    verify_counterexample(si, chain[0].as_ref(), &cex)?;
    Ok(Refutation { counterexample: cex, rounds_eliminated: t0 })
}

pub const EXHAUSTIVE_EDGE_CAP: usize = 30;

/// Try every input in ascending mask order and return the first one the
/// algorithm fails on, or `None` once all pass. Guarded by an edge cap
/// because the scan is 2^m.
pub fn exhaustive_check(
    si: &SupportInstance,
    alg: &dyn BipartiteAlgorithm,
    cap: Option<usize>,
) -> Result<Option<Counterexample>, RefuteError> {
    let cap = cap.unwrap_or(EXHAUSTIVE_EDGE_CAP);
    if cap > 60 {
        return Err(invalid(format!("exhaustive cap {cap} is beyond any tractable range")));
    }
    let m = si.graph.m();
    if m > cap {
        return Err(RefuteError::TooManyEdges(m, cap));
    }
    let memo = MemoAlg::new(alg);
    for mask in 0..(1u128 << m) {
        let viols = violations_on_input(si, &memo, mask)?;
        if let Some(first) = viols.first() {
            let cex = Counterexample::new(edges_from_mask(mask), first.node, first.kind);
            verify_counterexample(si, &memo, &cex)?;
            return Ok(Some(cex));
        }
    }
    Ok(None)
}

/// Deliberately wrong candidates used to exercise the refuter.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum StrawmanKind {
    /// Every incident input edge gets O.
    ConstantO,
    /// Every incident input edge gets I.
    ConstantI,
    /// O on every edge iff the input degree is even.
    Parity,
    /// O only on the lowest incident input edge.
    LowestEdgeO,
    /// O iff the active endpoint has the smaller identifier.
    IdCompare,
}

impl StrawmanKind {
    pub const ALL: [StrawmanKind; 5] = [
        StrawmanKind::ConstantO,
        StrawmanKind::ConstantI,
        StrawmanKind::Parity,
        StrawmanKind::LowestEdgeO,
        StrawmanKind::IdCompare,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrawmanKind::ConstantO => "constant-o",
            StrawmanKind::ConstantI => "constant-i",
            StrawmanKind::Parity => "parity",
            StrawmanKind::LowestEdgeO => "lowest-edge-o",
            StrawmanKind::IdCompare => "id-compare",
        }
    }

    pub fn parse(s: &str) -> Option<StrawmanKind> {
        StrawmanKind::ALL.into_iter().find(|k| k.label() == s)
    }
}

pub struct Strawman {
    kind: StrawmanKind,
    t: u32,
    active: Side,
}

impl Strawman {
    pub fn new(kind: StrawmanKind, t: u32, active: Side) -> Self {
        Strawman { kind, t, active }
    }
}

pub fn strawman(kind: StrawmanKind, t: u32, active: Side) -> Rc<dyn BipartiteAlgorithm> {
    Rc::new(Strawman::new(kind, t, active))
}

impl BipartiteAlgorithm for Strawman {
    fn name(&self) -> String {
        self.kind.label().into()
    }

    fn locality(&self, _n: usize) -> u32 {
        self.t
    }

    fn active(&self) -> Side {
        self.active
    }

    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        let mine = visible & si.incident_mask(v);
        let out = match self.kind {
            StrawmanKind::ConstantO => {
                edges_from_mask(mine).into_iter().map(|e| (e, Label::O)).collect()
            }
            StrawmanKind::ConstantI => {
                edges_from_mask(mine).into_iter().map(|e| (e, Label::I)).collect()
            }
            StrawmanKind::Parity => {
                let label = if mine.count_ones() % 2 == 0 { Label::O } else { Label::I };
                edges_from_mask(mine).into_iter().map(|e| (e, label)).collect()
            }
            StrawmanKind::LowestEdgeO => edges_from_mask(mine)
                .into_iter()
                .enumerate()
                .map(|(i, e)| (e, if i == 0 { Label::O } else { Label::I }))
                .collect(),
            StrawmanKind::IdCompare => si
                .graph
                .incident(v)
                .iter()
                .filter(|&&(e, _)| mine >> e.0 & 1 == 1)
                .map(|&(e, w)| {
                    (e, if si.ids.id(v) < si.ids.id(w) { Label::O } else { Label::I })
                })
                .collect(),
        };
        Ok(out)
    }
}

/// Candidate whose labels are a deterministic hash of the seed, the node,
/// its visible input, and the edge. Any declared locality; on these
/// supports the visible input at locality <= 1 is the incident edges.
pub struct SeededRandom {
    seed: u64,
    t: u32,
    active: Side,
}

pub fn seeded_random(seed: u64, active: Side) -> Rc<dyn BipartiteAlgorithm> {
    seeded_random_at(seed, 0, active)
}

pub fn seeded_random_at(seed: u64, t: u32, active: Side) -> Rc<dyn BipartiteAlgorithm> {
    Rc::new(SeededRandom { seed, t, active })
}

impl BipartiteAlgorithm for SeededRandom {
    fn name(&self) -> String {
        format!("seeded-{}-t{}", self.seed, self.t)
    }

    fn locality(&self, _n: usize) -> u32 {
        self.t
    }

    fn active(&self) -> Side {
        self.active
    }

    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        let mine = visible & si.incident_mask(v);
        Ok(edges_from_mask(mine)
            .into_iter()
            .map(|e| {
                let mut h = Sha256::new();
                h.update(self.seed.to_le_bytes());
                h.update(v.0.to_le_bytes());
                h.update(visible.to_le_bytes());
                h.update(e.0.to_le_bytes());
                let label = if h.finalize()[0] & 1 == 0 { Label::O } else { Label::I };
                (e, label)
            })
            .collect())
    }
}

/// Counts decide calls that reach the wrapped algorithm.
pub struct CountingAlg {
    inner: Rc<dyn BipartiteAlgorithm>,
    calls: Cell<u64>,
}

impl CountingAlg {
    pub fn new(inner: Rc<dyn BipartiteAlgorithm>) -> Self {
        CountingAlg { inner, calls: Cell::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.get()
    }
}

impl BipartiteAlgorithm for CountingAlg {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn locality(&self, n: usize) -> u32 {
        self.inner.locality(n)
    }

    fn active(&self) -> Side {
        self.inner.active()
    }

    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        self.calls.set(self.calls.get() + 1);
        self.inner.decide(si, v, visible)
    }
}

pub fn encode_incident_orientation(pairs: &[(EdgeId, NodeId)]) -> Blob {
    let mut buf = Vec::with_capacity(4 + 8 * pairs.len());
    wire::put_u32(&mut buf, pairs.len() as u32);
    for &(e, h) in pairs {
        wire::put_u32(&mut buf, e.0);
        wire::put_u32(&mut buf, h.0);
    }
    buf
}

pub fn decode_incident_orientation(blob: &[u8]) -> Result<Vec<(EdgeId, NodeId)>, RefuteError> {
    let mut c = wire::Cursor::new(blob);
    let k = c.u32()?;
    let mut out = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let e = c.u32()?;
        let h = c.u32()?;
        out.push((EdgeId(e), NodeId(h)));
    }
    c.done()?;
    Ok(out)
}

/// Adapter running a view-based orientation algorithm as a bipartite
/// labeling candidate: edges oriented away from the active node become O,
/// toward it become I. The algorithm must orient exactly the incident input
/// edges of the queried node.
pub struct EncodedLocal {
    alg: Rc<dyn LocalAlgorithm>,
    active: Side,
}

pub fn encode_bipartite(alg: Rc<dyn LocalAlgorithm>, active: Side) -> Rc<EncodedLocal> {
    Rc::new(EncodedLocal { alg, active })
}

fn not_an_orientation(v: NodeId, why: impl std::fmt::Display) -> RefuteError {
    invalid(format!("output at {v} is not an orientation of its incident input edges: {why}"))
}

impl BipartiteAlgorithm for EncodedLocal {
    fn name(&self) -> String {
        format!("encoded({})", self.alg.name())
    }

    fn locality(&self, n: usize) -> u32 {
        self.alg.locality(n)
    }

    fn active(&self) -> Side {
        self.active
    }

    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        let t = self.alg.locality(si.graph.n());
        let vis = si.vis_mask(v, t);
        let input: Vec<InputStatus> = (0..si.graph.m() as u32)
            .map(|i| {
                if vis >> i & 1 == 0 {
                    InputStatus::Unknown
                } else if visible >> i & 1 == 1 {
                    InputStatus::Input
                } else {
                    InputStatus::NonInput
                }
            })
            .collect();
        let mut inst = Instance::new(si.graph.clone(), si.ids.clone())
            .with_input(input)
            .supported();
        inst.coloring = Some(si.coloring.clone());
        let meter = Meter::new(t);
        let view = View::new(&inst, v, t, &meter, &NoStates, None);
        let blob = self.alg.decide(&view)?;
        let pairs = decode_incident_orientation(&blob)?;
        let expected = visible & si.incident_mask(v);
        let mut seen = 0u128;
        let mut out = Vec::with_capacity(pairs.len());
        for (e, head) in pairs {
            if e.idx() >= si.graph.m() {
                return Err(not_an_orientation(v, format!("unknown edge {e}")));
            }
            let bit = 1u128 << e.0;
            let (a, b) = si.graph.endpoints(e);
            if expected & bit == 0 {
                return Err(not_an_orientation(v, format!("{e} is not an incident input edge")));
            }
            if seen & bit != 0 {
                return Err(not_an_orientation(v, format!("{e} oriented twice")));
            }
            if head != a && head != b {
                return Err(not_an_orientation(v, format!("{head} is not an endpoint of {e}")));
            }
            seen |= bit;
            out.push((e, if head == v { Label::I } else { Label::O }));
        }
        if seen != expected {
            return Err(not_an_orientation(
                v,
                format!("unoriented input edges {:?}", edges_from_mask(expected & !seen)),
            ));
        }
        Ok(out)
    }
}

/// Full-information reference: reads the whole visible input subgraph and
/// orients it globally, so it is correct whenever its locality covers the
/// component. Pair with [`encode_bipartite`] for a candidate that passes
/// [`exhaustive_check`].
pub struct OrientedReference;

impl LocalAlgorithm for OrientedReference {
    fn name(&self) -> String {
        "oriented-reference".into()
    }

    fn locality(&self, n: usize) -> u32 {
        n as u32
    }

    fn decide(&self, view: &View) -> Result<Blob, ExecError> {
        let root = view.root();
        let nodes = view.nodes_within(view.budget())?;
        let mut index: HashMap<NodeId, u32> = HashMap::new();
        let mut ids = Vec::with_capacity(nodes.len());
        for (i, &(u, _)) in nodes.iter().enumerate() {
            index.insert(u, i as u32);
            ids.push(view.identifier(u)?);
        }
        let mut orig = Vec::new();
        let mut edges = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for &(u, _) in &nodes {
            for (e, w) in view.incident(u)? {
                if !seen.insert(e) {
                    continue;
                }
                let Some(&wi) = index.get(&w) else { continue };
                if view.input_status(e)? == InputStatus::Input {
                    edges.push((index[&u], wi));
                    orig.push(e);
                }
            }
        }
        let sub = Multigraph::new(nodes.len(), &edges)
            .map_err(|g| ExecError::Algorithm(g.to_string()))?;
        let o = global_orientation(&sub, &IdAssignment::from_ids(ids));
        let ri = index[&root];
        let mut out = Vec::new();
        for (i, &e) in orig.iter().enumerate() {
            let se = EdgeId(i as u32);
            let (a, b) = sub.endpoints(se);
            if a.0 != ri && b.0 != ri {
                continue;
            }
            let head = o.head(se).expect("global orientation is total");
            out.push((e, nodes[head.idx()].0));
        }
        Ok(encode_incident_orientation(&out))
    }
}

/// Candidate defined by an explicit lookup table, one row per (active node,
/// visible input mask). Covers locality 0 and 1, where the visible edges
/// are exactly the incident ones and rows stay enumerable.
pub struct TableAlgorithm {
    name: String,
    t: u32,
    active: Side,
    rows: HashMap<(u32, u128), Vec<Label>>,
}

impl TableAlgorithm {
    /// Text format: a `locality <0|1>` line, an `active <black|white>` line,
    /// then `node;mask;labels` rows. `labels` holds one `O`/`I` per set bit
    /// of the mask, in ascending edge order. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, RefuteError> {
        let mut t = None;
        let mut active = None;
        let mut rows = HashMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |msg: String| invalid(format!("line {}: {msg}", ln + 1));
            if let Some(rest) = line.strip_prefix("locality ") {
                t = Some(
                    rest.trim()
                        .parse::<u32>()
                        .map_err(|e| at(format!("bad locality: {e}")))?,
                );
                continue;
            }
            if let Some(rest) = line.strip_prefix("active ") {
                active = Some(match rest.trim() {
                    "black" => Side::Black,
                    "white" => Side::White,
                    other => return Err(at(format!("unknown side `{other}`"))),
                });
                continue;
            }
            let mut parts = line.split(';');
            let node = parts
                .next()
                .and_then(|s| s.trim().parse::<u32>().ok())
                .ok_or_else(|| at("expected `node;mask;labels`".into()))?;
            let mask_str = parts.next().map(str::trim).unwrap_or("");
            let mask = if let Some(hex) = mask_str.strip_prefix("0x") {
                u128::from_str_radix(hex, 16)
            } else {
                mask_str.parse::<u128>()
            }
            .map_err(|e| at(format!("bad mask: {e}")))?;
            let labels_str = parts.next().map(str::trim).unwrap_or("");
            if parts.next().is_some() {
                return Err(at("too many fields".into()));
            }
            let mut labels = Vec::with_capacity(labels_str.len());
            for ch in labels_str.chars() {
                labels.push(match ch {
                    'O' => Label::O,
                    'I' => Label::I,
                    other => return Err(at(format!("unknown label `{other}`"))),
                });
            }
            if labels.len() != mask.count_ones() as usize {
                return Err(at(format!(
                    "{} labels for a {}-edge mask",
                    labels.len(),
                    mask.count_ones()
                )));
            }
            rows.insert((node, mask), labels);
        }
        let t = t.ok_or_else(|| invalid("missing `locality` line"))?;
        if t > 1 {
            return Err(invalid("lookup tables cover locality 0 and 1"));
        }
        let active = active.ok_or_else(|| invalid("missing `active` line"))?;
        Ok(TableAlgorithm { name: "table".into(), t, active, rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# bipartite lookup table\n");
        out.push_str(&format!("locality {}\n", self.t));
        out.push_str(&format!(
            "active {}\n",
            match self.active {
                Side::Black => "black",
                Side::White => "white",
            }
        ));
        let mut keys: Vec<&(u32, u128)> = self.rows.keys().collect();
        keys.sort();
        for &(node, mask) in keys {
            let labels: String = self.rows[&(node, mask)]
                .iter()
                .map(|l| if *l == Label::O { 'O' } else { 'I' })
                .collect();
            out.push_str(&format!("{node};{mask:#x};{labels}\n"));
        }
        out
    }

    /// Tabulate an existing candidate over every nonempty incident input
    /// mask of every active node.
    pub fn from_algorithm(
        si: &SupportInstance,
        alg: &dyn BipartiteAlgorithm,
    ) -> Result<Self, RefuteError> {
        let t = alg.locality(si.graph.n());
        if t > 1 {
            return Err(invalid("lookup tables cover locality 0 and 1"));
        }
        let mut rows = HashMap::new();
        for v in si.nodes_of(alg.active()) {
            let inc: Vec<EdgeId> = si.graph.incident(v).iter().map(|&(e, _)| e).collect();
            for s in 1u32..1 << inc.len() {
                let mask = subset_mask(&inc, s);
                let mut out = query(si, alg, v, mask)?;
                out.sort_by_key(|&(e, _)| e);
                rows.insert((v.0, mask), out.into_iter().map(|(_, l)| l).collect());
            }
        }
        Ok(TableAlgorithm {
            name: format!("table({})", alg.name()),
            t,
            active: alg.active(),
            rows,
        })
    }
}

impl BipartiteAlgorithm for TableAlgorithm {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn locality(&self, _n: usize) -> u32 {
        self.t
    }

    fn active(&self) -> Side {
        self.active
    }

    fn decide(
        &self,
        si: &SupportInstance,
        v: NodeId,
        visible: u128,
    ) -> Result<Vec<(EdgeId, Label)>, RefuteError> {
        if visible == 0 {
            return Ok(Vec::new());
        }
        let labels = self.rows.get(&(v.0, visible)).ok_or_else(|| {
            invalid(format!("lookup table has no row for {v} with input {visible:#x}"))
        })?;
        let bits = edges_from_mask(visible & si.incident_mask(v));
        if labels.len() != bits.len() {
            return Err(invalid(format!(
                "table row for {v} with input {visible:#x} has {} labels for {} edges",
                labels.len(),
                bits.len()
            )));
        }
        Ok(bits.into_iter().zip(labels.iter().copied()).collect())
    }
}
