//! Directed graphs and the reachability constructions used by the rate
//! synthesis procedures.
//!
//! Vertices are `0..M` internally; the JSON interface is 1-based.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ctmc::Distribution;
use crate::error::{Error, Result};

/// A simple directed graph: no self-loops, no duplicate edges.
///
/// The edge list order is significant: rate assignments are stored as
/// vectors aligned with it.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    edge_index: HashMap<(usize, usize), usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidGraph("vertex count must be positive".into()));
        }
        let mut out_adj = vec![Vec::new(); vertex_count];
        let mut in_adj = vec![Vec::new(); vertex_count];
        let mut edge_index = HashMap::with_capacity(edges.len());
        for (k, &(s, t)) in edges.iter().enumerate() {
            if s >= vertex_count || t >= vertex_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) references a vertex outside 0..{}",
                    s, t, vertex_count
                )));
            }
            if s == t {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {}", s)));
            }
            if edge_index.insert((s, t), k).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge ({}, {})", s, t)));
            }
            out_adj[s].push(t);
            in_adj[t].push(s);
        }
        Ok(Self { vertex_count, edges, out_adj, in_adj, edge_index })
    }

    /// The bidirected chain `1 ↔ 2 ↔ … ↔ m`.
    pub fn bidirected_chain(m: usize) -> Result<Self> {
        let mut edges = Vec::with_capacity(2 * m.saturating_sub(1));
        for k in 0..m.saturating_sub(1) {
            edges.push((k, k + 1));
            edges.push((k + 1, k));
        }
        Self::new(m, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, s: usize, t: usize) -> bool {
        self.edge_index.contains_key(&(s, t))
    }

    /// Position of edge `(s, t)` in the edge list.
    pub fn edge_position(&self, s: usize, t: usize) -> Option<usize> {
        self.edge_index.get(&(s, t)).copied()
    }

    pub fn out_neighbors(&self, v: usize) -> &[usize] {
        &self.out_adj[v]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.in_adj[v]
    }

    /// True iff a directed path exists between every ordered vertex pair.
    pub fn is_strongly_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.vertex_count).collect();
        self.is_vertex_set_strongly_connected_members(&all)
    }

    /// True iff the subgraph induced on `set` is strongly connected.
    pub fn is_vertex_set_strongly_connected(&self, set: &VertexSet) -> bool {
        self.is_vertex_set_strongly_connected_members(set.members())
    }

    fn is_vertex_set_strongly_connected_members(&self, members: &[usize]) -> bool {
        if members.is_empty() {
            return false;
        }
        let mut inside = vec![false; self.vertex_count];
        for &v in members {
            inside[v] = true;
        }
        let reached_fwd = self.bfs_within(members[0], &inside, false);
        let reached_bwd = self.bfs_within(members[0], &inside, true);
        members.iter().all(|&v| reached_fwd[v] && reached_bwd[v])
    }

    fn bfs_within(&self, start: usize, inside: &[bool], reverse: bool) -> Vec<bool> {
        let mut seen = vec![false; self.vertex_count];
        seen[start] = true;
        let mut queue = vec![start];
        while let Some(v) = queue.pop() {
            let nbrs = if reverse { &self.in_adj[v] } else { &self.out_adj[v] };
            for &w in nbrs {
                if inside[w] && !seen[w] {
                    seen[w] = true;
                    queue.push(w);
                }
            }
        }
        seen
    }

    /// True iff `(i, j) ∈ E` implies `(j, i) ∈ E`.
    pub fn is_bidirected(&self) -> bool {
        self.edges.iter().all(|&(s, t)| self.contains_edge(t, s))
    }

    /// Out-Laplacian `L = D_out − A`, the negated unit-rate generator.
    ///
    /// Rows sum to zero for every graph, so `−L` has the row-sum and sign
    /// pattern of a transition-rate matrix with rate 1 on each edge.
    pub fn out_laplacian(&self) -> DMatrix<f64> {
        let m = self.vertex_count;
        let mut lap = DMatrix::zeros(m, m);
        for &(s, t) in &self.edges {
            lap[(s, t)] -= 1.0;
            lap[(s, s)] += 1.0;
        }
        lap
    }

    /// True iff the subgraph induced on `{v : x_v > 0}` is strongly connected.
    pub fn has_strongly_connected_support(&self, x: &Distribution) -> bool {
        if x.len() != self.vertex_count {
            return false;
        }
        self.is_vertex_set_strongly_connected(&x.support())
    }

    /// The set `σ_y(i)`: vertices `j` admitting a directed path
    /// `e_1 … e_f` to `i` with `y_{S(e_k)} = 0` for `1 ≤ k ≤ f−1`.
    ///
    /// The bound is taken literally: the source of the final edge is
    /// unconstrained, so every in-neighbor of `i` belongs (f = 1 leaves
    /// the condition vacuous), and longer paths additionally require the
    /// first source to have zero density.
    pub fn sigma_set(&self, y: &Distribution, target: usize) -> VertexSet {
        assert!(target < self.vertex_count, "vertex out of range");
        assert_eq!(y.len(), self.vertex_count, "distribution size mismatch");
        let mut member = vec![false; self.vertex_count];
        // f = 1: direct in-neighbors, no zero-density condition.
        for &w in self.in_neighbors(target) {
            member[w] = true;
        }
        // f ≥ 2: walk backward from the in-neighbors through zero-density
        // vertices; every vertex of the path except the final-edge source
        // must have zero density.
        let mut reach = vec![false; self.vertex_count];
        let mut queue = Vec::new();
        for &w in self.in_neighbors(target) {
            for &p in self.in_neighbors(w) {
                if y.get(p) == 0.0 && !reach[p] {
                    reach[p] = true;
                    queue.push(p);
                }
            }
        }
        while let Some(v) = queue.pop() {
            for &p in self.in_neighbors(v) {
                if y.get(p) == 0.0 && !reach[p] {
                    reach[p] = true;
                    queue.push(p);
                }
            }
        }
        for v in 0..self.vertex_count {
            if reach[v] {
                member[v] = true;
            }
        }
        VertexSet::from_membership(&member)
    }

    /// Zero-density vertices that can reach `target` through a path whose
    /// every vertex except `target` has zero density. This is the corridor
    /// along which transient mass can drain into a root.
    pub(crate) fn zero_density_reach(&self, y: &Distribution, target: usize) -> Vec<usize> {
        let mut reach = vec![false; self.vertex_count];
        let mut queue = Vec::new();
        for &p in self.in_neighbors(target) {
            if y.get(p) == 0.0 && !reach[p] {
                reach[p] = true;
                queue.push(p);
            }
        }
        while let Some(v) = queue.pop() {
            for &p in self.in_neighbors(v) {
                if y.get(p) == 0.0 && !reach[p] {
                    reach[p] = true;
                    queue.push(p);
                }
            }
        }
        (0..self.vertex_count).filter(|&v| reach[v]).collect()
    }

    /// The graph `G̃`: edge `e` retained unless `S(e) ∈ support` and
    /// `T(e) ∉ support`.
    pub fn restricted_graph(&self, support: &VertexSet) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInput("restriction support must be nonempty".into()));
        }
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(s, t)| !(support.contains(s) && !support.contains(t)))
            .collect();
        Self::new(self.vertex_count, edges)
    }

    /// Acyclic subgraph in which every vertex has a directed path to
    /// `root`: vertices are layered by shortest path length to the root
    /// and only edges from layer `n` to layer `n−1` are kept.
    pub fn rooted_in_branching(&self, root: usize) -> Result<Self> {
        assert!(root < self.vertex_count, "vertex out of range");
        let dist = self.distance_to(root);
        if let Some(v) = dist.iter().position(|d| d.is_none()) {
            return Err(Error::InvalidInput(format!(
                "vertex {} has no directed path to the root {}",
                v + 1,
                root + 1
            )));
        }
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(s, t)| dist[s].unwrap() == dist[t].unwrap() + 1)
            .collect();
        Self::new(self.vertex_count, edges)
    }

    /// Shortest directed path length from each vertex to `target`.
    fn distance_to(&self, target: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.vertex_count];
        dist[target] = Some(0);
        let mut frontier = vec![target];
        let mut next = Vec::new();
        let mut level = 0usize;
        while !frontier.is_empty() {
            level += 1;
            for &v in &frontier {
                for &p in self.in_neighbors(v) {
                    if dist[p].is_none() {
                        dist[p] = Some(level);
                        next.push(p);
                    }
                }
            }
            frontier = std::mem::take(&mut next);
        }
        dist
    }

    /// True iff the edge set is empty and there are no cycles — used by
    /// tests; a layered subgraph is acyclic by construction.
    pub fn is_acyclic(&self) -> bool {
        // Kahn's algorithm.
        let mut indeg: Vec<usize> = (0..self.vertex_count).map(|v| self.in_adj[v].len()).collect();
        let mut queue: Vec<usize> = (0..self.vertex_count).filter(|&v| indeg[v] == 0).collect();
        let mut removed = 0;
        while let Some(v) = queue.pop() {
            removed += 1;
            for &w in self.out_neighbors(v) {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push(w);
                }
            }
        }
        removed == self.vertex_count
    }

    /// Parse `{"vertices": M, "edges": [[i, j], …]}` with 1-based indices.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let parsed: GraphJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidGraph(format!("malformed graph JSON: {}", e)))?;
        let mut edges = Vec::with_capacity(parsed.edges.len());
        for (i, j) in parsed.edges {
            if i == 0 || j == 0 {
                return Err(Error::InvalidGraph(
                    "graph JSON uses 1-based vertex indices; found index 0".into(),
                ));
            }
            edges.push((i - 1, j - 1));
        }
        Self::new(parsed.vertices, edges)
    }

    /// Serialize with 1-based indices.
    pub fn to_json_string(&self) -> String {
        let json = GraphJson {
            vertices: self.vertex_count,
            edges: self.edges.iter().map(|&(s, t)| (s + 1, t + 1)).collect(),
        };
        serde_json::to_string_pretty(&json).expect("graph serialization cannot fail")
    }
}

/// A subset of the vertices of a graph, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexSet {
    members: Vec<usize>,
}

impl VertexSet {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    fn from_membership(member: &[bool]) -> Self {
        Self { members: (0..member.len()).filter(|&v| member[v]).collect() }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    /// 1-based comma-separated rendering for diagnostics.
    pub fn display_one_based(&self) -> String {
        let parts: Vec<String> = self.members.iter().map(|v| (v + 1).to_string()).collect();
        parts.join(", ")
    }
}

impl FromIterator<usize> for VertexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// One block of a [`TransientPartition`]: a root vertex with positive
/// target density plus the zero-density vertices routed toward it.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionBlock {
    root: usize,
    transients: VertexSet,
}

impl PartitionBlock {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn transients(&self) -> &VertexSet {
        &self.transients
    }

    /// Root plus transients.
    pub fn vertices(&self) -> Vec<usize> {
        let mut v = vec![self.root];
        v.extend_from_slice(self.transients.members());
        v.sort_unstable();
        v
    }

    pub fn contains(&self, v: usize) -> bool {
        v == self.root || self.transients.contains(v)
    }
}

/// Disjoint cover of the vertex set by blocks, one per support vertex of
/// the target distribution, ordered by ascending root index.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientPartition {
    blocks: Vec<PartitionBlock>,
    vertex_count: usize,
}

impl TransientPartition {
    /// Validate and build a partition from `(root, transients)` pairs.
    pub fn new(blocks: Vec<(usize, Vec<usize>)>, xd: &Distribution) -> Result<Self> {
        let m = xd.len();
        let mut claimed = vec![false; m];
        let mut built = Vec::with_capacity(blocks.len());
        for (root, transients) in blocks {
            if root >= m {
                return Err(Error::InvalidInput(format!("root {} out of range", root + 1)));
            }
            if xd.get(root) <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "block root {} has zero target density",
                    root + 1
                )));
            }
            if claimed[root] {
                return Err(Error::InvalidInput(format!("vertex {} claimed twice", root + 1)));
            }
            claimed[root] = true;
            for &v in &transients {
                if v >= m {
                    return Err(Error::InvalidInput(format!("vertex {} out of range", v + 1)));
                }
                if xd.get(v) != 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "transient {} has nonzero target density",
                        v + 1
                    )));
                }
                if claimed[v] {
                    return Err(Error::InvalidInput(format!("vertex {} claimed twice", v + 1)));
                }
                claimed[v] = true;
            }
            built.push(PartitionBlock { root, transients: VertexSet::new(transients) });
        }
        if let Some(v) = claimed.iter().position(|&c| !c) {
            return Err(Error::InvalidInput(format!("vertex {} belongs to no block", v + 1)));
        }
        Ok(Self { blocks: built, vertex_count: m })
    }

    pub fn blocks(&self) -> &[PartitionBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// Index of the block containing `v`.
    pub fn block_of(&self, v: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(v))
    }
}

/// Partition the vertex set into blocks, each holding one positive-density
/// root and the zero-density vertices whose mass can drain into it through
/// zero-density corridors. Roots are claimed in ascending index order.
pub fn transient_partition(g: &DirectedGraph, xd: &Distribution) -> Result<TransientPartition> {
    if xd.len() != g.vertex_count() {
        return Err(Error::InvalidInput("distribution size does not match graph".into()));
    }
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let roots = xd.support();
    let mut claimed = vec![false; g.vertex_count()];
    for &r in roots.members() {
        claimed[r] = true;
    }
    let mut blocks = Vec::with_capacity(roots.len());
    for &root in roots.members() {
        let mut transients = Vec::new();
        for v in g.zero_density_reach(xd, root) {
            if !claimed[v] {
                claimed[v] = true;
                transients.push(v);
            }
        }
        blocks.push((root, transients));
    }
    // Strong connectivity guarantees every zero-density vertex has a
    // zero-density corridor to some root, so the cover is exhaustive.
    if let Some(v) = claimed.iter().position(|&c| !c) {
        return Err(Error::Infeasible(format!(
            "zero-density vertex {} was claimed by no block",
            v + 1
        )));
    }
    let partition = TransientPartition::new(blocks, xd)?;
    // Every transient must be able to reach its root inside its own
    // block, otherwise the terminal flow would strand its mass there.
    for block in partition.blocks() {
        let block_vertices = VertexSet::new(block.vertices());
        for &v in block.transients().members() {
            if !reaches_within(g, v, block.root(), &block_vertices) {
                return Err(Error::Infeasible(format!(
                    "transient {} cannot reach root {} within its block",
                    v + 1,
                    block.root() + 1
                )));
            }
        }
    }
    Ok(partition)
}

fn reaches_within(g: &DirectedGraph, from: usize, to: usize, inside: &VertexSet) -> bool {
    let mut seen = vec![false; g.vertex_count()];
    seen[from] = true;
    let mut queue = vec![from];
    while let Some(v) = queue.pop() {
        if v == to {
            return true;
        }
        for &w in g.out_neighbors(v) {
            if inside.contains(w) && !seen[w] {
                seen[w] = true;
                queue.push(w);
            }
        }
    }
    false
}
