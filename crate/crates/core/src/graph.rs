//! Physical communication topology, hop-count shortest paths, Steiner routing
//! trees (Kou–Markowsky–Berman 2-approximation) and the round-trip delay table
//! those trees induce.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use thiserror::Error;

use crate::seed;

/// Index of an agent, in `[0, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub usize);

impl AgentId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for AgentId {
    fn from(i: usize) -> Self {
        AgentId(i)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("topology needs at least one agent")]
    NoAgents,
    #[error("edge ({0}, {0}) is a self-loop")]
    SelfLoop(usize),
    #[error("edge ({u}, {v}) references an agent outside [0, {n_agents})")]
    OutOfRange { u: usize, v: usize, n_agents: usize },
    #[error("edge ({u}, {v}) appears more than once")]
    DuplicateEdge { u: usize, v: usize },
    #[error("graph is disconnected: agent {unreachable} cannot be reached from agent 0")]
    Disconnected { unreachable: usize },
    #[error("edge list line {line}: cannot parse {content:?} as `u v`")]
    Parse { line: usize, content: String },
    #[error("invalid topology generator {0:?}")]
    BadGenerator(String),
    #[error("generator {generator} produced no connected graph after {attempts} attempts")]
    GeneratorExhausted { generator: String, attempts: u32 },
    #[error("agent {0} is out of range")]
    AgentOutOfRange(usize),
    #[error("routing tree rooted at {root} does not reach agent {target}")]
    Unreachable { root: usize, target: usize },
    #[error("routing tree at position {position} is rooted at {root}")]
    MisplacedTree { position: usize, root: usize },
}

/// How to build a topology.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    EdgeList(Vec<(usize, usize)>),
    Ring,
    ErdosRenyi { p: f64 },
    RandomGeometric { radius: f64 },
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::EdgeList(e) => write!(f, "edge-list({} edges)", e.len()),
            TopologySpec::Ring => write!(f, "ring"),
            TopologySpec::ErdosRenyi { p } => write!(f, "erdos-renyi:{p}"),
            TopologySpec::RandomGeometric { radius } => write!(f, "random-geometric:{radius}"),
        }
    }
}

impl FromStr for TopologySpec {
    type Err = GraphError;

    /// Parses a generator descriptor: `ring`, `erdos-renyi:<p>` or
    /// `random-geometric:<r>`. Edge lists come from [`parse_edge_list`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || GraphError::BadGenerator(s.to_string());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let prob = |a: Option<&str>| -> Result<f64, GraphError> {
            let v: f64 = a.ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if v.is_finite() && v > 0.0 && v <= 1.0 {
                Ok(v)
            } else {
                Err(bad())
            }
        };
        match name {
            "ring" if arg.is_none() => Ok(TopologySpec::Ring),
            "erdos-renyi" => Ok(TopologySpec::ErdosRenyi { p: prob(arg)? }),
            "random-geometric" => {
                let radius: f64 = arg.ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if radius.is_finite() && radius > 0.0 {
                    Ok(TopologySpec::RandomGeometric { radius })
                } else {
                    Err(bad())
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Parses the edge-list text format: one `u v` pair per line, 0-based,
/// whitespace separated, `#` starts a comment.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>, GraphError> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = || GraphError::Parse {
            line: i + 1,
            content: raw.to_string(),
        };
        let mut it = line.split_whitespace();
        let u = it.next().ok_or_else(err)?.parse().map_err(|_| err())?;
        let v = it.next().ok_or_else(err)?.parse().map_err(|_| err())?;
        if it.next().is_some() {
            return Err(err());
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Undirected, connected, simple graph over agents `0..n_agents`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_agents: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    retries: u32,
}

fn normalized(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

impl Topology {
    /// Validates an explicit edge list.
    pub fn from_edges(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n_agents == 0 {
            return Err(GraphError::NoAgents);
        }
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= n_agents || v >= n_agents {
                return Err(GraphError::OutOfRange { u, v, n_agents });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !set.insert(normalized(u, v)) {
                return Err(GraphError::DuplicateEdge { u, v });
            }
        }
        let topo = Self::assemble(n_agents, set, 0);
        match topo.first_unreachable() {
            Some(unreachable) => Err(GraphError::Disconnected { unreachable }),
            None => Ok(topo),
        }
    }

    fn assemble(n_agents: usize, edges: BTreeSet<(usize, usize)>, retries: u32) -> Self {
        let mut adjacency = vec![Vec::new(); n_agents];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Topology {
            n_agents,
            edges,
            adjacency,
            retries,
        }
    }

    fn first_unreachable(&self) -> Option<usize> {
        let dist = bfs(&self.adjacency, 0).0;
        dist.iter().position(|d| d.is_none())
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Edges as `(min, max)` pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&normalized(u, v))
    }

    /// Neighbors in ascending order.
    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.adjacency[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.adjacency[agent].len()
    }

    /// Number of rejected (disconnected) draws before this graph was accepted.
    pub fn retries(&self) -> u32 {
        self.retries
    }

    /// Renders the edge-list text format.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# {} agents, {} edges\n", self.n_agents, self.edges.len());
        for (u, v) in self.edges() {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }
}

const MAX_GENERATOR_ATTEMPTS: u32 = 10_000;

/// Builds a connected topology from an explicit edge list or a generator.
/// Generators redraw with the next sub-seed until the graph is connected.
pub fn build_topology(n_agents: usize, spec: &TopologySpec, seed: u64) -> Result<Topology, GraphError> {
    if n_agents == 0 {
        return Err(GraphError::NoAgents);
    }
    match spec {
        TopologySpec::EdgeList(edges) => Topology::from_edges(n_agents, edges),
        TopologySpec::Ring => {
            let edges: BTreeSet<_> = match n_agents {
                1 => BTreeSet::new(),
                2 => [(0, 1)].into_iter().collect(),
                n => (0..n).map(|i| normalized(i, (i + 1) % n)).collect(),
            };
            Ok(Topology::assemble(n_agents, edges, 0))
        }
        TopologySpec::ErdosRenyi { .. } | TopologySpec::RandomGeometric { .. } => {
            for attempt in 0..MAX_GENERATOR_ATTEMPTS {
                let mut rng = seed::rng_for(seed, "topology", u64::from(attempt));
                let edges = match *spec {
                    TopologySpec::ErdosRenyi { p } => {
                        let mut e = BTreeSet::new();
                        for u in 0..n_agents {
                            for v in (u + 1)..n_agents {
                                if rng.gen::<f64>() < p {
                                    e.insert((u, v));
                                }
                            }
                        }
                        e
                    }
                    TopologySpec::RandomGeometric { radius } => {
                        let pts: Vec<(f64, f64)> =
                            (0..n_agents).map(|_| (rng.gen(), rng.gen())).collect();
                        let mut e = BTreeSet::new();
                        for u in 0..n_agents {
                            for v in (u + 1)..n_agents {
                                let (dx, dy) = (pts[u].0 - pts[v].0, pts[u].1 - pts[v].1);
                                if (dx * dx + dy * dy).sqrt() <= radius {
                                    e.insert((u, v));
                                }
                            }
                        }
                        e
                    }
                    _ => unreachable!(),
                };
                let topo = Topology::assemble(n_agents, edges, attempt);
                if topo.first_unreachable().is_none() {
                    return Ok(topo);
                }
            }
            Err(GraphError::GeneratorExhausted {
                generator: spec.to_string(),
                attempts: MAX_GENERATOR_ATTEMPTS,
            })
        }
    }
}

/// BFS from `source`, visiting neighbors in ascending order. Returns hop
/// distances and BFS parents (`None` for the source and unreachable nodes).
fn bfs(adjacency: &[Vec<usize>], source: usize) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = adjacency.len();
    let mut dist = vec![None; n];
    let mut parent = vec![None; n];
    let mut queue = VecDeque::new();
    dist[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for &v in &adjacency[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    (dist, parent)
}

/// Hop counts from `source` to every agent.
pub fn hop_distances(topo: &Topology, source: AgentId) -> Result<Vec<usize>, GraphError> {
    if source.0 >= topo.n_agents {
        return Err(GraphError::AgentOutOfRange(source.0));
    }
    let (dist, _) = bfs(&topo.adjacency, source.0);
    Ok(dist.into_iter().map(|d| d.expect("topology is connected")).collect())
}

/// Minimal union-find used by the Kruskal passes.
struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// A tree over the physical graph connecting `root` to every terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTree {
    root: AgentId,
    terminals: BTreeSet<AgentId>,
    edges: BTreeSet<(usize, usize)>,
    /// BFS parent of each tree node toward the root; the root maps to itself.
    parent: Vec<Option<usize>>,
    depth: Vec<Option<usize>>,
}

impl RoutingTree {
    fn from_edges(n_agents: usize, root: AgentId, terminals: BTreeSet<AgentId>, edges: BTreeSet<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n_agents];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        let (depth, mut parent) = bfs(&adjacency, root.0);
        parent[root.0] = Some(root.0);
        RoutingTree {
            root,
            terminals,
            edges,
            parent,
            depth,
        }
    }

    pub fn root(&self) -> AgentId {
        self.root
    }

    pub fn terminals(&self) -> &BTreeSet<AgentId> {
        &self.terminals
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Number of edges; the Steiner cost under unit edge weights.
    pub fn cost(&self) -> usize {
        self.edges.len()
    }

    /// Agents touched by the tree, including the root.
    pub fn nodes(&self) -> BTreeSet<usize> {
        let mut nodes: BTreeSet<usize> = self.edges.iter().flat_map(|&(u, v)| [u, v]).collect();
        nodes.insert(self.root.0);
        nodes
    }

    /// Edge count of the root-to-`target` path, if `target` is in the tree.
    pub fn depth_of(&self, target: usize) -> Option<usize> {
        self.depth.get(target).copied().flatten()
    }

    /// Agents on the root-to-`target` path, root first.
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        self.depth_of(target)?;
        let mut path = vec![target];
        let mut cur = target;
        while cur != self.root.0 {
            cur = self.parent[cur]?;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

/// KMB Steiner tree: metric closure over `{root} ∪ terminals`, MST of the
/// closure, expansion into shortest paths, MST of the expanded subgraph to
/// break cycles, then pruning of non-terminal leaves. Ties are broken by
/// `(distance, min endpoint, max endpoint)`.
pub fn build_steiner_tree(
    topo: &Topology,
    root: AgentId,
    terminals: &BTreeSet<AgentId>,
) -> Result<RoutingTree, GraphError> {
    let n = topo.n_agents;
    if root.0 >= n {
        return Err(GraphError::AgentOutOfRange(root.0));
    }
    if let Some(bad) = terminals.iter().find(|t| t.0 >= n) {
        return Err(GraphError::AgentOutOfRange(bad.0));
    }
    let mut keep: BTreeSet<usize> = terminals.iter().map(|t| t.0).collect();
    keep.insert(root.0);
    let keep_vec: Vec<usize> = keep.iter().copied().collect();

    // metric closure
    let searches: Vec<(Vec<Option<usize>>, Vec<Option<usize>>)> =
        keep_vec.iter().map(|&s| bfs(&topo.adjacency, s)).collect();
    let mut closure = Vec::new();
    for i in 0..keep_vec.len() {
        for j in (i + 1)..keep_vec.len() {
            let d = searches[i].0[keep_vec[j]].expect("topology is connected");
            closure.push((d, keep_vec[i], keep_vec[j], i));
        }
    }
    closure.sort_unstable_by_key(|&(d, u, v, _)| (d, u, v));

    let mut sets = DisjointSets::new(n);
    let mut expanded = BTreeSet::new();
    for &(_, u, v, ui) in &closure {
        if !sets.union(u, v) {
            continue;
        }
        // shortest path v -> u via BFS parents rooted at u
        let parent = &searches[ui].1;
        let mut cur = v;
        while cur != u {
            let p = parent[cur].expect("path exists");
            expanded.insert(normalized(p, cur));
            cur = p;
        }
    }

    // spanning tree of the expanded subgraph
    let mut sets = DisjointSets::new(n);
    let mut tree: BTreeSet<(usize, usize)> = expanded
        .into_iter()
        .filter(|&(u, v)| sets.union(u, v))
        .collect();

    // prune non-terminal leaves
    loop {
        let mut degree = vec![0usize; n];
        for &(u, v) in &tree {
            degree[u] += 1;
            degree[v] += 1;
        }
        let before = tree.len();
        tree.retain(|&(u, v)| {
            let leaf_u = degree[u] == 1 && !keep.contains(&u);
            let leaf_v = degree[v] == 1 && !keep.contains(&v);
            !(leaf_u || leaf_v)
        });
        if tree.len() == before {
            break;
        }
    }

    Ok(RoutingTree::from_edges(n, root, terminals.clone(), tree))
}

/// One-way hop counts `τ̃[n][m]` along each agent's routing tree and the
/// round-trip delays `τ = 2 τ̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    n_agents: usize,
    one_way: Vec<Option<usize>>,
}

impl DelayTable {
    /// All pairs at zero delay. Only meant for equivalence checks against
    /// the undelayed full-information method.
    pub fn zero(n_agents: usize) -> Self {
        DelayTable {
            n_agents,
            one_way: vec![Some(0); n_agents * n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// `τ̃[from][to]`: hops from `from` to `to` on `from`'s tree.
    pub fn one_way(&self, from: usize, to: usize) -> Option<usize> {
        self.one_way[from * self.n_agents + to]
    }

    /// `τ[from][to] = 2 τ̃[from][to]`.
    pub fn round_trip(&self, from: usize, to: usize) -> Option<usize> {
        self.one_way(from, to).map(|h| 2 * h)
    }
}

/// Derives the delay table from one tree per agent (`trees[n]` rooted at
/// `n`). Every agent listed in `required[n]` must be reachable in `trees[n]`.
pub fn derive_delays(trees: &[RoutingTree], required: &[Vec<usize>]) -> Result<DelayTable, GraphError> {
    let n = trees.len();
    let mut one_way = vec![None; n * n];
    for (i, tree) in trees.iter().enumerate() {
        if tree.root.0 != i {
            return Err(GraphError::MisplacedTree {
                position: i,
                root: tree.root.0,
            });
        }
        for m in 0..n {
            one_way[i * n + m] = tree.depth_of(m);
        }
        if let Some(req) = required.get(i) {
            for &m in req {
                if one_way[i * n + m].is_none() {
                    return Err(GraphError::Unreachable { root: i, target: m });
                }
            }
        }
    }
    Ok(DelayTable { n_agents: n, one_way })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> BTreeSet<AgentId> {
        ids.iter().map(|&i| AgentId(i)).collect()
    }

    #[test]
    fn smallest_connected_graph() {
        let t = build_topology(2, &TopologySpec::EdgeList(vec![(0, 1)]), 0).unwrap();
        assert_eq!(t.n_edges(), 1);
    }

    #[test]
    fn ring_has_degree_two() {
        let t = build_topology(6, &TopologySpec::Ring, 0).unwrap();
        assert_eq!(t.n_edges(), 6);
        assert!((0..6).all(|a| t.degree(a) == 2));
    }

    #[test]
    fn edge_list_errors_name_the_offender() {
        assert_eq!(
            Topology::from_edges(3, &[(0, 1), (1, 1)]),
            Err(GraphError::SelfLoop(1))
        );
        assert_eq!(
            Topology::from_edges(3, &[(0, 5)]),
            Err(GraphError::OutOfRange { u: 0, v: 5, n_agents: 3 })
        );
        assert_eq!(
            Topology::from_edges(3, &[(0, 1), (1, 0), (1, 2)]),
            Err(GraphError::DuplicateEdge { u: 1, v: 0 })
        );
        assert_eq!(
            Topology::from_edges(4, &[(0, 1), (2, 3)]),
            Err(GraphError::Disconnected { unreachable: 2 })
        );
    }

    #[test]
    fn edge_list_text_format() {
        let text = "# header\n0 1\n\n1 2  # trailing\n";
        assert_eq!(parse_edge_list(text).unwrap(), vec![(0, 1), (1, 2)]);
        assert_eq!(
            parse_edge_list("0 1\n2\n"),
            Err(GraphError::Parse { line: 2, content: "2".into() })
        );
    }

    #[test]
    fn generator_descriptors() {
        assert_eq!("ring".parse::<TopologySpec>().unwrap(), TopologySpec::Ring);
        assert_eq!(
            "erdos-renyi:0.2".parse::<TopologySpec>().unwrap(),
            TopologySpec::ErdosRenyi { p: 0.2 }
        );
        assert!("erdos-renyi:1.5".parse::<TopologySpec>().is_err());
        assert!("grid".parse::<TopologySpec>().is_err());
    }

    #[test]
    fn hop_distance_basics() {
        let t = build_topology(6, &TopologySpec::Ring, 0).unwrap();
        let d = hop_distances(&t, AgentId(0)).unwrap();
        assert_eq!(d[0], 0);
        assert_eq!(d[1], 1);
        assert_eq!(d[3], 3);
        assert!(hop_distances(&t, AgentId(6)).is_err());
    }

    #[test]
    fn steiner_degenerate_cases() {
        let t = build_topology(6, &TopologySpec::Ring, 0).unwrap();
        let tree = build_steiner_tree(&t, AgentId(2), &set(&[2])).unwrap();
        assert_eq!(tree.cost(), 0);
        let tree = build_steiner_tree(&t, AgentId(2), &set(&[3])).unwrap();
        assert_eq!(tree.edges().collect::<Vec<_>>(), vec![(2, 3)]);
        assert_eq!(tree.path_to(3), Some(vec![2, 3]));
    }

    #[test]
    fn delays_follow_tree_depth() {
        // path 0-1-2-3
        let t = Topology::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let trees: Vec<_> = (0..4)
            .map(|n| build_steiner_tree(&t, AgentId(n), &set(&[0, 1, 2, 3])).unwrap())
            .collect();
        let req: Vec<Vec<usize>> = (0..4).map(|_| (0..4).collect()).collect();
        let d = derive_delays(&trees, &req).unwrap();
        assert_eq!(d.round_trip(0, 0), Some(0));
        assert_eq!(d.one_way(0, 1), Some(1));
        assert_eq!(d.round_trip(0, 1), Some(2));
        assert_eq!(d.one_way(0, 3), Some(3));
        assert_eq!(d.round_trip(0, 3), Some(6));
    }

    #[test]
    fn delays_reject_unreachable_requirement() {
        let t = Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let trees: Vec<_> = (0..3)
            .map(|n| build_steiner_tree(&t, AgentId(n), &set(&[n])).unwrap())
            .collect();
        let err = derive_delays(&trees, &[vec![0, 2], vec![], vec![]]).unwrap_err();
        assert_eq!(err, GraphError::Unreachable { root: 0, target: 2 });
    }
}
