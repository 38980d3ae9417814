//! Communication graphs between agents.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, Domain};

/// Erdős–Rényi samples are redrawn at most this many times until connected.
pub const ER_MAX_RETRIES: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Complete,
    Ring,
    /// 2D lattice without wraparound.
    Grid { rows: usize, cols: usize },
    /// Node `i` linked to `(i ± 2^k) mod n` for every `2^k < n`.
    Exponential,
    ErdosRenyi { prob: f64, seed: u64 },
}

/// Undirected simple graph on `n` nodes, edges stored as `(i, j)` with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Topology(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange { what: "node", index: a.max(b), limit: n });
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.n
    }

    /// Edge-list text: first line `n`, then one `i j` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        s
    }

    pub fn parse_edge_list(text: &str, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (first_no, first) = lines.next().ok_or_else(|| perr(1, "empty edge list".into()))?;
        let n: usize = first.trim().parse().map_err(|e| perr(first_no + 1, format!("node count: {e}")))?;
        let mut edges = Vec::new();
        for (no, line) in lines {
            let mut it = line.split_whitespace();
            let mut field = |name: &str| -> Result<usize> {
                it.next()
                    .ok_or_else(|| perr(no + 1, format!("missing {name}")))?
                    .parse()
                    .map_err(|e| perr(no + 1, format!("{name}: {e}")))
            };
            let a = field("first endpoint")?;
            let b = field("second endpoint")?;
            if it.next().is_some() {
                return Err(perr(no + 1, "expected exactly two endpoints".into()));
            }
            edges.push((a, b));
        }
        Graph::new(n, edges).map_err(|e| perr(0, e.to_string()))
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list(&text, path)
    }
}

/// Builds one of the named topologies on `n` agents.
pub fn build_graph(kind: &Topology, n: usize) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Topology("agent count must be positive".into()));
    }
    match *kind {
        Topology::Complete => Graph::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))),
        Topology::Ring => {
            let edges = if n <= 1 {
                vec![]
            } else if n == 2 {
                vec![(0, 1)]
            } else {
                (0..n).map(|i| (i, (i + 1) % n)).collect()
            };
            Graph::new(n, edges)
        }
        Topology::Grid { rows, cols } => {
            if rows * cols != n {
                return Err(Error::Topology(format!("grid {rows}x{cols} does not have {n} nodes")));
            }
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    if c + 1 < cols {
                        edges.push((v, v + 1));
                    }
                    if r + 1 < rows {
                        edges.push((v, v + cols));
                    }
                }
            }
            Graph::new(n, edges)
        }
        Topology::Exponential => {
            let mut edges = Vec::new();
            for i in 0..n {
                let mut hop = 1;
                while hop < n {
                    for j in [(i + hop) % n, (i + n - hop) % n] {
                        if j != i {
                            edges.push((i, j));
                        }
                    }
                    hop *= 2;
                }
            }
            Graph::new(n, edges)
        }
        Topology::ErdosRenyi { prob, seed } => {
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(Error::Topology(format!("edge probability {prob} not in (0, 1]")));
            }
            for attempt in 0..ER_MAX_RETRIES {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Domain::Graph, &[attempt]));
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.random::<f64>() < prob {
                            edges.push((i, j));
                        }
                    }
                }
                let g = Graph::new(n, edges)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::Disconnected(format!(
                ": Erdős–Rényi(n={n}, p={prob}) stayed disconnected after {ER_MAX_RETRIES} draws"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_four_has_six_edges() {
        let g = build_graph(&Topology::Complete, 4).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert!(g.is_connected());
    }

    #[test]
    fn ring_four() {
        let g = build_graph(&Topology::Ring, 4).unwrap();
        let e: Vec<_> = g.edges().collect();
        assert_eq!(e, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn exponential_eight_neighbors_of_zero() {
        // 0 ± 1, 0 ± 2, 0 ± 4 (mod 8) = {1, 7, 2, 6, 4}
        let g = build_graph(&Topology::Exponential, 8).unwrap();
        assert_eq!(g.neighbors(0), vec![1, 2, 4, 6, 7]);
        assert!(g.degrees().iter().all(|&d| d == 5));
    }

    #[test]
    fn grid_shape_checked() {
        assert!(matches!(build_graph(&Topology::Grid { rows: 3, cols: 4 }, 15), Err(Error::Topology(_))));
        let g = build_graph(&Topology::Grid { rows: 4, cols: 4 }, 16).unwrap();
        // 2 * 4 * 3 lattice edges, corners have degree 2 and the centre 4
        assert_eq!(g.edge_count(), 24);
        assert_eq!(g.degrees()[0], 2);
        assert_eq!(g.degrees()[5], 4);
    }

    #[test]
    fn erdos_renyi_is_deterministic_and_connected() {
        let kind = Topology::ErdosRenyi { prob: 0.8, seed: 3 };
        let a = build_graph(&kind, 16).unwrap();
        let b = build_graph(&kind, 16).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
    }

    #[test]
    fn erdos_renyi_gives_up() {
        let kind = Topology::ErdosRenyi { prob: 1e-9, seed: 1 };
        assert!(matches!(build_graph(&kind, 10), Err(Error::Disconnected(_))));
        assert!(build_graph(&Topology::ErdosRenyi { prob: 0.0, seed: 1 }, 4).is_err());
    }

    #[test]
    fn self_loops_rejected() {
        assert!(Graph::new(3, [(1, 1)]).is_err());
    }

    #[test]
    fn edge_list_roundtrip() {
        let g = build_graph(&Topology::Exponential, 16).unwrap();
        let back = Graph::parse_edge_list(&g.to_edge_list(), Path::new("mem")).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn edge_list_errors_name_line() {
        let err = Graph::parse_edge_list("3\n0 1\n1 x\n", Path::new("g.txt")).unwrap_err();
        assert!(err.to_string().starts_with("g.txt:3:"), "{err}");
    }
}
