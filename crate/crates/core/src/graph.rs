//! Multigraph storage plus the structural queries and generators shared by
//! the orientation pipeline and the refuter: balls, girth, power graphs,
//! bipartite double covers, fixed support graphs, and seeded random families.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Dense node index in `[0, n)`. Distinct from the adversary-chosen
/// [`Identifier`]; algorithms compare identifiers, never node indices.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct NodeId(pub u32);

/// Dense edge index in `[0, m)`, fixed by insertion order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct EdgeId(pub u32);

/// Adversary-chosen node identifier. Always positive and injective.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Identifier(pub u64);

impl NodeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl EdgeId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl std::fmt::Display for EdgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Error, Debug, PartialEq, Eq)]
pub enum GraphError {
    #[error("node index {0} out of range for n={1}")]
    NodeOutOfRange(u32, usize),
    #[error("self-loop at node {0} (edge {1})")]
    SelfLoop(u32, usize),
    #[error("parallel edge {{{0}, {1}}} not allowed in a simple graph")]
    ParallelEdge(u32, u32),
    #[error("no {d}-regular simple graph on {n} nodes: {reason}")]
    Infeasible { n: usize, d: u32, reason: String },
    #[error("generator failed to converge after {0} restarts")]
    GeneratorStuck(u32),
    #[error("graph is not bipartite")]
    NotBipartite,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Undirected multigraph. Parallel edges are allowed, self-loops are not.
/// Incidence lists hold `(edge, other_endpoint)` pairs in ascending edge
/// order, so traversals are deterministic.
#[derive(Clone, Debug)]
pub struct Multigraph {
    n: usize,
    endpoints: Vec<(NodeId, NodeId)>,
    incidence: Vec<Vec<(EdgeId, NodeId)>>,
}

impl Multigraph {
    pub fn new(n: usize, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        let mut incidence = vec![Vec::new(); n];
        let mut endpoints = Vec::with_capacity(edges.len());
        for (i, &(u, v)) in edges.iter().enumerate() {
            if u as usize >= n {
                return Err(GraphError::NodeOutOfRange(u, n));
            }
            if v as usize >= n {
                return Err(GraphError::NodeOutOfRange(v, n));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u, i));
            }
            let e = EdgeId(i as u32);
            incidence[u as usize].push((e, NodeId(v)));
            incidence[v as usize].push((e, NodeId(u)));
            endpoints.push((NodeId(u), NodeId(v)));
        }
        Ok(Multigraph { n, endpoints, incidence })
    }

    /// Like [`Multigraph::new`] but also rejects parallel edges.
    pub fn simple(n: usize, edges: &[(u32, u32)]) -> Result<Self, GraphError> {
        let g = Self::new(n, edges)?;
        if !g.is_simple() {
            for &(u, v) in edges {
                let dup = edges.iter().filter(|&&(a, b)| (a, b) == (u, v) || (a, b) == (v, u)).count();
                if dup > 1 {
                    return Err(GraphError::ParallelEdge(u, v));
                }
            }
        }
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.endpoints.len()
    }

    #[inline]
    pub fn degree(&self, v: NodeId) -> u32 {
        self.incidence[v.idx()].len() as u32
    }

    #[inline]
    pub fn incident(&self, v: NodeId) -> &[(EdgeId, NodeId)] {
        &self.incidence[v.idx()]
    }

    #[inline]
    pub fn endpoints(&self, e: EdgeId) -> (NodeId, NodeId) {
        self.endpoints[e.idx()]
    }

    pub fn other_endpoint(&self, e: EdgeId, v: NodeId) -> NodeId {
        let (a, b) = self.endpoints[e.idx()];
        if a == v {
            b
        } else {
            debug_assert_eq!(b, v);
            a
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n as u32).map(NodeId)
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> {
        (0..self.endpoints.len() as u32).map(EdgeId)
    }

    pub fn max_degree(&self) -> u32 {
        self.incidence.iter().map(|l| l.len() as u32).max().unwrap_or(0)
    }

    pub fn is_simple(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &self.endpoints {
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return false;
            }
        }
        true
    }

    /// BFS distances from `v`; `None` for unreachable nodes.
    pub fn bfs_distances(&self, v: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n];
        dist[v.idx()] = Some(0);
        let mut queue = VecDeque::new();
        queue.push_back(v);
        while let Some(u) = queue.pop_front() {
            let du = dist[u.idx()].unwrap();
            for &(_, w) in self.incident(u) {
                if dist[w.idx()].is_none() {
                    dist[w.idx()] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Nodes within distance `r` of `v`, as `(node, dist)` in BFS discovery
    /// order starting with `(v, 0)`.
    pub fn bfs_within(&self, v: NodeId, r: u32) -> Vec<(NodeId, u32)> {
        let mut dist = vec![u32::MAX; self.n];
        dist[v.idx()] = 0;
        let mut order = vec![(v, 0)];
        let mut head = 0;
        while head < order.len() {
            let (u, du) = order[head];
            head += 1;
            if du == r {
                continue;
            }
            for &(_, w) in self.incident(u) {
                if dist[w.idx()] == u32::MAX {
                    dist[w.idx()] = du + 1;
                    order.push((w, du + 1));
                }
            }
        }
        order
    }

    /// Distance from `u` to `v` if it is at most `cap`.
    pub fn dist_within(&self, u: NodeId, v: NodeId, cap: u32) -> Option<u32> {
        if u == v {
            return Some(0);
        }
        let mut dist = vec![u32::MAX; self.n];
        dist[u.idx()] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(u);
        while let Some(x) = queue.pop_front() {
            let dx = dist[x.idx()];
            if dx == cap {
                continue;
            }
            for &(_, w) in self.incident(x) {
                if dist[w.idx()] == u32::MAX {
                    if w == v {
                        return Some(dx + 1);
                    }
                    dist[w.idx()] = dx + 1;
                    queue.push_back(w);
                }
            }
        }
        None
    }

    /// Length of the shortest cycle, or `None` when the graph is acyclic.
    /// A parallel edge pair counts as a 2-cycle.
    pub fn girth(&self) -> Option<u32> {
        let mut best: Option<u32> = None;
        // Parallel edges first: cheapest possible cycle.
        for v in self.nodes() {
            let mut prev: Option<NodeId> = None;
            let mut sorted: Vec<NodeId> = self.incident(v).iter().map(|&(_, w)| w).collect();
            sorted.sort();
            for w in sorted {
                if prev == Some(w) && v < w {
                    return Some(2);
                }
                prev = Some(w);
            }
        }
        // Per-root BFS: for each non-tree edge {u, w} with both endpoints
        // reached, dist[u] + dist[w] + 1 closes a cycle through the root;
        // minimizing over all roots yields the exact girth.
        for root in self.nodes() {
            let mut dist = vec![u32::MAX; self.n];
            let mut via = vec![EdgeId(u32::MAX); self.n];
            dist[root.idx()] = 0;
            let mut queue = VecDeque::new();
            queue.push_back(root);
            while let Some(u) = queue.pop_front() {
                let du = dist[u.idx()];
                if let Some(b) = best {
                    if 2 * du >= b {
                        continue;
                    }
                }
                for &(e, w) in self.incident(u) {
                    if dist[w.idx()] == u32::MAX {
                        dist[w.idx()] = du + 1;
                        via[w.idx()] = e;
                        queue.push_back(w);
                    } else if via[u.idx()] != e && via[w.idx()] != e {
                        let c = du + dist[w.idx()] + 1;
                        if best.map_or(true, |b| c < b) {
                            best = Some(c);
                        }
                    }
                }
            }
        }
        best
    }

    /// Connected components, each listed in ascending node order.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut comp = vec![usize::MAX; self.n];
        let mut out: Vec<Vec<NodeId>> = Vec::new();
        for s in self.nodes() {
            if comp[s.idx()] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![s];
            comp[s.idx()] = id;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &(_, w) in self.incident(u) {
                    if comp[w.idx()] == usize::MAX {
                        comp[w.idx()] = id;
                        members.push(w);
                        queue.push_back(w);
                    }
                }
            }
            members.sort();
            out.push(members);
        }
        out
    }

    pub fn edge_list(&self) -> Vec<(u32, u32)> {
        self.endpoints.iter().map(|&(u, v)| (u.0, v.0)).collect()
    }
}

/// `k`-th power: simple graph joining distinct nodes at distance <= `k`.
pub fn power_graph(g: &Multigraph, k: u32) -> Multigraph {
    assert!(k >= 1, "power_graph requires k >= 1");
    let mut edges = Vec::new();
    for u in g.nodes() {
        for (w, d) in g.bfs_within(u, k) {
            if u < w && d >= 1 {
                edges.push((u.0, w.0));
            }
        }
    }
    edges.sort_unstable();
    Multigraph::new(g.n(), &edges).expect("power graph edges are valid")
}

/// Which side of a two-coloring a node is on. `Black` is the default active
/// side in the bipartite labeling encoding.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Side {
    Black,
    White,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Black => Side::White,
            Side::White => Side::Black,
        }
    }
}

/// Proper two-coloring: every edge must join a black node and a white node.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoColoring {
    side: Vec<Side>,
}

impl TwoColoring {
    pub fn new(side: Vec<Side>) -> Self {
        TwoColoring { side }
    }

    #[inline]
    pub fn side(&self, v: NodeId) -> Side {
        self.side[v.idx()]
    }

    pub fn n(&self) -> usize {
        self.side.len()
    }

    pub fn is_proper(&self, g: &Multigraph) -> bool {
        self.side.len() == g.n()
            && g.edges().all(|e| {
                let (u, v) = g.endpoints(e);
                self.side(u) != self.side(v)
            })
    }

    pub fn nodes_on(&self, s: Side) -> Vec<NodeId> {
        (0..self.side.len() as u32)
            .map(NodeId)
            .filter(|&v| self.side(v) == s)
            .collect()
    }
}

/// BFS bipartition, `Err(NotBipartite)` when an odd cycle exists. The
/// lowest-indexed node of each component goes on the black side.
pub fn two_coloring(g: &Multigraph) -> Result<TwoColoring, GraphError> {
    let mut side = vec![None; g.n()];
    for s in g.nodes() {
        if side[s.idx()].is_some() {
            continue;
        }
        side[s.idx()] = Some(Side::Black);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            let su = side[u.idx()].unwrap();
            for &(_, w) in g.incident(u) {
                match side[w.idx()] {
                    None => {
                        side[w.idx()] = Some(su.opposite());
                        queue.push_back(w);
                    }
                    Some(sw) if sw == su => return Err(GraphError::NotBipartite),
                    Some(_) => {}
                }
            }
        }
    }
    Ok(TwoColoring::new(side.into_iter().map(|s| s.unwrap()).collect()))
}

/// Bipartite double cover: node `v` becomes `v` (layer 0, black) and `n + v`
/// (layer 1, white); edge `{u, v}` becomes the cross pair `{u, n+v}` and
/// `{v, n+u}`.
pub fn bipartite_double_cover(g: &Multigraph) -> (Multigraph, TwoColoring) {
    let n = g.n() as u32;
    let mut edges = Vec::with_capacity(2 * g.m());
    for e in g.edges() {
        let (u, v) = g.endpoints(e);
        edges.push((u.0, n + v.0));
        edges.push((v.0, n + u.0));
    }
    let cover = Multigraph::new(2 * g.n(), &edges).expect("double cover edges are valid");
    let mut side = vec![Side::Black; 2 * g.n()];
    for i in g.n()..2 * g.n() {
        side[i] = Side::White;
    }
    (cover, TwoColoring::new(side))
}

pub fn path(n: usize) -> Multigraph {
    let edges: Vec<(u32, u32)> = (0..n.saturating_sub(1) as u32).map(|i| (i, i + 1)).collect();
    Multigraph::new(n, &edges).unwrap()
}

pub fn cycle(n: usize) -> Multigraph {
    assert!(n >= 3, "cycle needs at least 3 nodes");
    let mut edges: Vec<(u32, u32)> = (0..n as u32 - 1).map(|i| (i, i + 1)).collect();
    edges.push((n as u32 - 1, 0));
    Multigraph::new(n, &edges).unwrap()
}

pub fn complete(n: usize) -> Multigraph {
    let mut edges = Vec::new();
    for u in 0..n as u32 {
        for v in u + 1..n as u32 {
            edges.push((u, v));
        }
    }
    Multigraph::new(n, &edges).unwrap()
}

/// Complete bipartite graph; the first `a` nodes form the black side.
pub fn complete_bipartite(a: usize, b: usize) -> (Multigraph, TwoColoring) {
    let mut edges = Vec::new();
    for u in 0..a as u32 {
        for v in 0..b as u32 {
            edges.push((u, a as u32 + v));
        }
    }
    let g = Multigraph::new(a + b, &edges).unwrap();
    let mut side = vec![Side::Black; a + b];
    for s in side.iter_mut().skip(a) {
        *s = Side::White;
    }
    (g, TwoColoring::new(side))
}

/// Random simple `d`-regular graph via the pairing model. Stub collisions
/// (loops and duplicate pairs) are repaired by re-pairing against random
/// partners; a bounded number of repair rounds per shuffle and of restarts
/// keeps the generator deterministic in `seed` and guarantees termination.
pub fn random_regular(n: usize, d: u32, seed: u64) -> Result<Multigraph, GraphError> {
    if n * d as usize % 2 != 0 {
        return Err(GraphError::Infeasible {
            n,
            d,
            reason: "odd degree sum".into(),
        });
    }
    if d as usize >= n {
        return Err(GraphError::Infeasible {
            n,
            d,
            reason: "degree must be below node count".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n * d as usize / 2;
    'restart: for _restart in 0..200u32 {
        let mut stubs: Vec<u32> = (0..n as u32).flat_map(|v| std::iter::repeat(v).take(d as usize)).collect();
        stubs.shuffle(&mut rng);
        let bad = |stubs: &[u32], p: usize, seen: &std::collections::HashMap<(u32, u32), u32>| {
            let (a, b) = (stubs[2 * p], stubs[2 * p + 1]);
            a == b || seen[&(a.min(b), a.max(b))] > 1
        };
        for _round in 0..60 * half.max(1) {
            let mut seen: std::collections::HashMap<(u32, u32), u32> = std::collections::HashMap::new();
            for p in 0..half {
                let (a, b) = (stubs[2 * p], stubs[2 * p + 1]);
                *seen.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
            let Some(p) = (0..half).find(|&p| bad(&stubs, p, &seen)) else {
                let edges: Vec<(u32, u32)> = (0..half).map(|p| (stubs[2 * p], stubs[2 * p + 1])).collect();
                return Multigraph::simple(n, &edges);
            };
            // Swap one stub of the bad pair with a stub of a random pair.
            let q = rng.gen_range(0..half);
            if q == p {
                continue;
            }
            stubs.swap(2 * p + 1, 2 * q + 1);
            // Occasional full reshuffle breaks repair cycles.
            if rng.gen_ratio(1, 1000) {
                continue 'restart;
            }
        }
    }
    Err(GraphError::GeneratorStuck(200))
}

/// Random multigraph with `m` edges: endpoints drawn uniformly, loops
/// redrawn, parallels kept.
pub fn random_multigraph(n: usize, m: usize, seed: u64) -> Multigraph {
    assert!(n >= 2, "need at least two nodes to avoid loops");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m);
    while edges.len() < m {
        let u = rng.gen_range(0..n as u32);
        let v = rng.gen_range(0..n as u32);
        if u != v {
            edges.push((u, v));
        }
    }
    Multigraph::new(n, &edges).unwrap()
}

/// Uniform random labeled tree from a Pruefer sequence.
pub fn random_tree(n: usize, seed: u64) -> Multigraph {
    if n <= 1 {
        return Multigraph::new(n, &[]).unwrap();
    }
    if n == 2 {
        return Multigraph::new(2, &[(0, 1)]).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seq: Vec<u32> = (0..n - 2).map(|_| rng.gen_range(0..n as u32)).collect();
    let mut deg = vec![1u32; n];
    for &v in &seq {
        deg[v as usize] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<u32>> = (0..n as u32)
        .filter(|&v| deg[v as usize] == 1)
        .map(std::cmp::Reverse)
        .collect();
    for &v in &seq {
        let std::cmp::Reverse(leaf) = heap.pop().unwrap();
        edges.push((leaf, v));
        deg[v as usize] -= 1;
        if deg[v as usize] == 1 {
            heap.push(std::cmp::Reverse(v));
        }
    }
    let std::cmp::Reverse(a) = heap.pop().unwrap();
    let std::cmp::Reverse(b) = heap.pop().unwrap();
    edges.push((a, b));
    Multigraph::new(n, &edges).unwrap()
}

/// K_{5,5}: girth 4, m = 25. Smallest 5-regular bipartite support graph.
pub fn k55() -> (Multigraph, TwoColoring) {
    complete_bipartite(5, 5)
}

/// Bipartite double cover of K_6: 12 nodes, 5-regular, girth 4, m = 30.
pub fn k6_double_cover() -> (Multigraph, TwoColoring) {
    bipartite_double_cover(&complete(6))
}

/// Point-line incidence graph of the projective plane of order 4:
/// 21 points + 21 lines, 5-regular, girth 6, m = 105. Points are the
/// canonical GF(4)^3 triples whose first nonzero coordinate is 1; a point
/// and a line are adjacent when their dot product over GF(4) vanishes.
pub fn pg2_4_incidence() -> (Multigraph, TwoColoring) {
    // GF(4) = {0, 1, x, x+1} with addition = xor and multiplication below.
    const MUL: [[u8; 4]; 4] = [[0, 0, 0, 0], [0, 1, 2, 3], [0, 2, 3, 1], [0, 3, 1, 2]];
    let mut points: Vec<[u8; 3]> = Vec::new();
    for a in 0..4u8 {
        for b in 0..4u8 {
            for c in 0..4u8 {
                let p = [a, b, c];
                let first = p.iter().copied().find(|&x| x != 0);
                if first == Some(1) {
                    points.push(p);
                }
            }
        }
    }
    assert_eq!(points.len(), 21);
    let dot = |p: &[u8; 3], q: &[u8; 3]| -> u8 {
        (0..3).fold(0u8, |acc, i| acc ^ MUL[p[i] as usize][q[i] as usize])
    };
    let mut edges = Vec::new();
    for (i, p) in points.iter().enumerate() {
        for (j, l) in points.iter().enumerate() {
            if dot(p, l) == 0 {
                edges.push((i as u32, 21 + j as u32));
            }
        }
    }
    let g = Multigraph::new(42, &edges).unwrap();
    let mut side = vec![Side::Black; 42];
    for s in side.iter_mut().skip(21) {
        *s = Side::White;
    }
    (g, TwoColoring::new(side))
}

/// Seven-node path used as the smallest end-to-end demo instance.
pub fn fig_path7() -> Multigraph {
    path(7)
}

/// Injective assignment of identifiers to nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdAssignment {
    ids: Vec<Identifier>,
}

impl IdAssignment {
    /// `id(v) = v + 1`.
    pub fn identity(n: usize) -> Self {
        IdAssignment {
            ids: (1..=n as u64).map(Identifier).collect(),
        }
    }

    /// Distinct identifiers drawn uniformly from `[1, n^c]`.
    pub fn random_poly(n: usize, c: u32, seed: u64) -> Self {
        let max = (n as u64).saturating_pow(c).max(n as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen = std::collections::HashSet::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        while ids.len() < n {
            let id = rng.gen_range(1..=max);
            if chosen.insert(id) {
                ids.push(Identifier(id));
            }
        }
        IdAssignment { ids }
    }

    pub fn from_ids(ids: Vec<Identifier>) -> Self {
        let a = IdAssignment { ids };
        debug_assert!(a.is_injective());
        a
    }

    /// Higher degree gets a lower identifier; ties by node index.
    pub fn by_degree(g: &Multigraph) -> Self {
        let mut order: Vec<NodeId> = g.nodes().collect();
        order.sort_by_key(|&v| (std::cmp::Reverse(g.degree(v)), v));
        let mut ids = vec![Identifier(0); g.n()];
        for (rank, v) in order.into_iter().enumerate() {
            ids[v.idx()] = Identifier(rank as u64 + 1);
        }
        IdAssignment { ids }
    }

    #[inline]
    pub fn id(&self, v: NodeId) -> Identifier {
        self.ids[v.idx()]
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.ids.iter().all(|id| id.0 >= 1 && seen.insert(id.0))
    }
}

/// Plain text edge list: first line `n m`, then one `u v` pair per line in
/// edge order, zero-based.
pub fn to_edge_list(g: &Multigraph) -> String {
    let mut out = format!("{} {}\n", g.n(), g.m());
    for e in g.edges() {
        let (u, v) = g.endpoints(e);
        out.push_str(&format!("{} {}\n", u.0, v.0));
    }
    out
}

pub fn parse_edge_list(text: &str) -> Result<Multigraph, GraphError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (line, header) = lines.next().ok_or(GraphError::Parse {
        line: 0,
        msg: "empty input".into(),
    })?;
    let mut it = header.split_whitespace();
    let parse_num = |s: Option<&str>, line: usize| -> Result<usize, GraphError> {
        s.ok_or(GraphError::Parse {
            line,
            msg: "expected two integers".into(),
        })?
        .parse()
        .map_err(|e| GraphError::Parse {
            line,
            msg: format!("bad integer: {e}"),
        })
    };
    let n = parse_num(it.next(), line)?;
    let m = parse_num(it.next(), line)?;
    let mut edges = Vec::with_capacity(m);
    for (line, l) in lines {
        let mut it = l.split_whitespace();
        let u = parse_num(it.next(), line)?;
        let v = parse_num(it.next(), line)?;
        edges.push((u as u32, v as u32));
    }
    if edges.len() != m {
        return Err(GraphError::Parse {
            line: 0,
            msg: format!("header promised {m} edges, found {}", edges.len()),
        });
    }
    Multigraph::new(n, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent girth oracle: min over edges e = {u, v} of
    /// 1 + (shortest u-v path avoiding e).
    fn girth_oracle(g: &Multigraph) -> Option<u32> {
        let mut best: Option<u32> = None;
        for e in g.edges() {
            let (u, v) = g.endpoints(e);
            let mut dist = vec![u32::MAX; g.n()];
            dist[u.idx()] = 0;
            let mut queue = VecDeque::from([u]);
            while let Some(x) = queue.pop_front() {
                for &(f, w) in g.incident(x) {
                    if f != e && dist[w.idx()] == u32::MAX {
                        dist[w.idx()] = dist[x.idx()] + 1;
                        queue.push_back(w);
                    }
                }
            }
            if dist[v.idx()] != u32::MAX {
                let c = dist[v.idx()] + 1;
                if best.map_or(true, |b| c < b) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Brute-force pairwise distances via repeated BFS.
    fn dist_oracle(g: &Multigraph, u: NodeId, v: NodeId) -> Option<u32> {
        g.bfs_distances(u)[v.idx()]
    }

    #[test]
    fn build_rejects_self_loop_and_bad_index() {
        assert!(matches!(Multigraph::new(3, &[(0, 0)]), Err(GraphError::SelfLoop(0, 0))));
        assert!(matches!(Multigraph::new(3, &[(0, 3)]), Err(GraphError::NodeOutOfRange(3, 3))));
        assert!(matches!(Multigraph::simple(3, &[(0, 1), (1, 0)]), Err(GraphError::ParallelEdge(_, _))));
    }

    #[test]
    fn incidence_in_edge_order() {
        let g = Multigraph::new(3, &[(0, 1), (1, 2), (0, 1)]).unwrap();
        assert_eq!(g.m(), 3);
        assert_eq!(g.degree(NodeId(1)), 3);
        assert_eq!(
            g.incident(NodeId(1)),
            &[(EdgeId(0), NodeId(0)), (EdgeId(1), NodeId(2)), (EdgeId(2), NodeId(0))]
        );
        assert_eq!(g.other_endpoint(EdgeId(1), NodeId(2)), NodeId(1));
        assert!(!g.is_simple());
    }

    #[test]
    fn ball_on_path() {
        let g = path(5);
        let ball: Vec<NodeId> = g.bfs_within(NodeId(2), 1).iter().map(|&(v, _)| v).collect();
        assert_eq!(ball, vec![NodeId(2), NodeId(1), NodeId(3)]);
        let all: Vec<u32> = g.bfs_within(NodeId(0), 10).iter().map(|&(_, d)| d).collect();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn ball_monotone_in_radius() {
        let g = random_regular(40, 3, 7).unwrap();
        for v in [NodeId(0), NodeId(7), NodeId(39)] {
            for r in 0..4 {
                let small = g.bfs_within(v, r).len();
                let large = g.bfs_within(v, r + 1).len();
                assert!(small <= large);
            }
        }
    }

    #[test]
    fn girth_examples() {
        assert_eq!(path(6).girth(), None);
        assert_eq!(cycle(5).girth(), Some(5));
        assert_eq!(cycle(9).girth(), Some(9));
        assert_eq!(complete(4).girth(), Some(3));
        assert_eq!(Multigraph::new(2, &[(0, 1), (0, 1)]).unwrap().girth(), Some(2));
        let (k, _) = k55();
        assert_eq!(k.girth(), Some(4));
    }

    #[test]
    fn girth_matches_oracle_on_random_graphs() {
        for seed in 0..12 {
            let g = random_multigraph(14, 20, seed);
            assert_eq!(g.girth(), girth_oracle(&g), "seed {seed}");
        }
        for seed in 0..6 {
            let g = random_regular(24, 3, seed).unwrap();
            assert_eq!(g.girth(), girth_oracle(&g), "seed {seed}");
        }
        for seed in 0..4 {
            let t = random_tree(30, seed);
            assert_eq!(t.girth(), None);
        }
    }

    #[test]
    fn power_graph_examples() {
        let g = path(4);
        let p1 = power_graph(&g, 1);
        assert_eq!(p1.edge_list(), g.edge_list());
        let p2 = power_graph(&g, 2);
        assert_eq!(p2.m(), 5);
        assert!(p2.is_simple());
        // Cubing a 6-cycle reaches everything: K_6.
        let c3 = power_graph(&cycle(6), 3);
        assert_eq!(c3.m(), 15);
        assert_eq!(c3.max_degree(), 5);
    }

    #[test]
    fn power_graph_agrees_with_distance_oracle() {
        for seed in 0..5 {
            let g = random_multigraph(12, 15, seed);
            for k in 1..4 {
                let p = power_graph(&g, k);
                let mut adj = std::collections::HashSet::new();
                for e in p.edges() {
                    let (u, v) = p.endpoints(e);
                    adj.insert((u.min(v), u.max(v)));
                }
                for u in g.nodes() {
                    for v in g.nodes() {
                        if u < v {
                            let within = dist_oracle(&g, u, v).is_some_and(|d| d >= 1 && d <= k);
                            assert_eq!(adj.contains(&(u, v)), within, "k={k} {u} {v}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn double_cover_examples() {
        // 5-cycle lifts to a 10-cycle.
        let (c, col) = bipartite_double_cover(&cycle(5));
        assert_eq!(c.n(), 10);
        assert_eq!(c.m(), 10);
        assert_eq!(c.girth(), Some(10));
        assert!(col.is_proper(&c));
        // A single edge lifts to two disjoint edges.
        let (e2, _) = bipartite_double_cover(&Multigraph::new(2, &[(0, 1)]).unwrap());
        assert_eq!(e2.n(), 4);
        assert_eq!(e2.m(), 2);
        assert_eq!(e2.components().len(), 2);
    }

    #[test]
    fn k6_cover_is_the_twelve_node_support() {
        let (g, col) = k6_double_cover();
        assert_eq!(g.n(), 12);
        assert_eq!(g.m(), 30);
        assert!(g.nodes().all(|v| g.degree(v) == 5));
        assert_eq!(g.girth(), Some(4));
        assert!(col.is_proper(&g));
        assert!(g.is_simple());
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn pg24_is_the_forty_two_node_support() {
        let (g, col) = pg2_4_incidence();
        assert_eq!(g.n(), 42);
        assert_eq!(g.m(), 105);
        assert!(g.nodes().all(|v| g.degree(v) == 5));
        assert_eq!(g.girth(), Some(6));
        assert!(col.is_proper(&g));
        assert!(g.is_simple());
        assert_eq!(g.components().len(), 1);
    }

    #[test]
    fn regular_generator_small_cases() {
        // Only one 3-regular graph on 4 nodes: K_4.
        let g = random_regular(4, 3, 1).unwrap();
        assert_eq!(g.m(), 6);
        assert!(g.is_simple());
        let g = random_regular(6, 5, 9).unwrap();
        assert_eq!(g.m(), 15);
        assert!(matches!(
            random_regular(5, 3, 0),
            Err(GraphError::Infeasible { .. })
        ));
        assert!(matches!(
            random_regular(4, 4, 0),
            Err(GraphError::Infeasible { .. })
        ));
    }

    #[test]
    fn regular_generator_properties_and_determinism() {
        for (n, d) in [(30, 3), (40, 5), (24, 10)] {
            for seed in 0..4 {
                let g = random_regular(n, d, seed).unwrap();
                assert_eq!(g.n(), n);
                assert!(g.is_simple());
                assert!(g.nodes().all(|v| g.degree(v) == d), "n={n} d={d}");
                let h = random_regular(n, d, seed).unwrap();
                assert_eq!(g.edge_list(), h.edge_list());
            }
        }
    }

    #[test]
    fn tree_generator_properties() {
        for seed in 0..8 {
            let t = random_tree(50, seed);
            assert_eq!(t.m(), 49);
            assert_eq!(t.components().len(), 1);
            assert_eq!(t.girth(), None);
        }
        assert_eq!(random_tree(1, 0).m(), 0);
        assert_eq!(random_tree(2, 0).m(), 1);
    }

    #[test]
    fn coloring_and_ids() {
        let (g, col) = complete_bipartite(3, 4);
        assert!(col.is_proper(&g));
        assert_eq!(col.nodes_on(Side::Black).len(), 3);
        let found = two_coloring(&g).unwrap();
        assert!(found.is_proper(&g));
        assert!(two_coloring(&cycle(5)).is_err());
        assert!(two_coloring(&cycle(6)).is_ok());

        let ids = IdAssignment::identity(5);
        assert_eq!(ids.id(NodeId(4)), Identifier(5));
        assert!(ids.is_injective());
        let r = IdAssignment::random_poly(100, 2, 3);
        assert!(r.is_injective());
        assert!((0..100).all(|v| r.id(NodeId(v)).0 <= 100 * 100));
        let star = complete_bipartite(1, 4).0;
        let d = IdAssignment::by_degree(&star);
        assert_eq!(d.id(NodeId(0)), Identifier(1));
        assert!(d.is_injective());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = random_multigraph(9, 14, 5);
        let text = to_edge_list(&g);
        let h = parse_edge_list(&text).unwrap();
        assert_eq!(g.n(), h.n());
        assert_eq!(g.edge_list(), h.edge_list());
        assert!(parse_edge_list("2 1\n0 0\n").is_err());
        assert!(parse_edge_list("2 2\n0 1\n").is_err());
    }
}
