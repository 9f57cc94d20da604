//! Communication graphs: validated undirected topologies and Watts-Strogatz
//! small-world generation with bounded connectivity retries.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const REWIRE_RETRY_BUDGET: u64 = 32;

/// Connected undirected simple graph over nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    node_count: usize,
    /// Sorted `(i, j)` pairs with `i < j`.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from an edge list, rejecting self-loops, duplicate
    /// edges, out-of-range indices, and disconnected graphs.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Parameter("topology needs at least one node".into()));
        }
        let mut normalized: Vec<(usize, usize)> = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Parameter(format!("self-loop at node {a}")));
            }
            if a >= node_count || b >= node_count {
                return Err(Error::Parameter(format!(
                    "edge ({a}, {b}) out of range for {node_count} nodes"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if normalized.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate edge in topology".into()));
        }
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &normalized {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let t = Topology {
            node_count,
            edges: normalized,
            neighbors,
        };
        if !t.is_connected() {
            return Err(Error::Parameter("topology is not connected".into()));
        }
        Ok(t)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    fn is_connected(&self) -> bool {
        if self.node_count == 1 {
            return true;
        }
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reached = 1usize;
        while let Some(i) = stack.pop() {
            for &j in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    stack.push(j);
                }
            }
        }
        reached == self.node_count
    }

    /// Graph Laplacian `L = D - A`.
    pub fn laplacian(&self) -> Array2<f64> {
        let n = self.node_count;
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            l[[i, i]] = self.degree(i) as f64;
        }
        for &(a, b) in &self.edges {
            l[[a, b]] = -1.0;
            l[[b, a]] = -1.0;
        }
        l
    }

    /// One "i j" pair per line, 0-indexed, sorted.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    /// Parses the `to_edge_list` format; node count is the largest index + 1.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_index = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let a = parts.next().and_then(|s| s.parse::<usize>().ok());
            let b = parts.next().and_then(|s| s.parse::<usize>().ok());
            match (a, b, parts.next()) {
                (Some(a), Some(b), None) => {
                    max_index = max_index.max(a).max(b);
                    edges.push((a, b));
                }
                _ => {
                    return Err(Error::Parameter(format!(
                        "edge list line {} is not an \"i j\" pair: {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if edges.is_empty() {
            return Err(Error::Parameter("edge list is empty".into()));
        }
        Topology::new(max_index + 1, edges)
    }
}

/// Watts-Strogatz small-world graph: ring lattice of base degree `k`, each
/// lattice edge rewired with probability `p`. Regenerates with a derived
/// seed when rewiring disconnects the graph, up to a fixed retry budget.
pub fn generate_small_world(n: usize, k: usize, p: f64, seed: u64) -> Result<Topology> {
    if n < 3 {
        return Err(Error::Parameter(format!(
            "small-world graph needs n >= 3, got {n}"
        )));
    }
    if k % 2 != 0 {
        return Err(Error::Parameter(format!(
            "small-world base degree must be even, got {k}"
        )));
    }
    if k >= n {
        return Err(Error::Parameter(format!(
            "small-world base degree {k} must be below node count {n}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!(
            "rewiring probability must lie in [0, 1], got {p}"
        )));
    }

    for attempt in 0..REWIRE_RETRY_BUDGET {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let edges = rewired_lattice(n, k, p, &mut rng);
        match Topology::new(n, edges) {
            Ok(t) => return Ok(t),
            Err(_) => continue,
        }
    }
    Err(Error::Generation(format!(
        "no connected rewiring of (n={n}, k={k}, p={p}) found in {REWIRE_RETRY_BUDGET} attempts from seed {seed}"
    )))
}

/// One rewiring pass. Preserves the lattice edge count `n * k / 2`: each
/// selected edge is replaced, never dropped, unless the endpoint already
/// touches every other node.
fn rewired_lattice(n: usize, k: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut adjacency = vec![vec![false; n]; n];
    let mut degree = vec![0usize; n];
    let add = |adj: &mut Vec<Vec<bool>>, deg: &mut Vec<usize>, a: usize, b: usize| {
        adj[a][b] = true;
        adj[b][a] = true;
        deg[a] += 1;
        deg[b] += 1;
    };
    let remove = |adj: &mut Vec<Vec<bool>>, deg: &mut Vec<usize>, a: usize, b: usize| {
        adj[a][b] = false;
        adj[b][a] = false;
        deg[a] -= 1;
        deg[b] -= 1;
    };

    for j in 1..=(k / 2) {
        for i in 0..n {
            add(&mut adjacency, &mut degree, i, (i + j) % n);
        }
    }
    for j in 1..=(k / 2) {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.gen::<f64>() >= p {
                continue;
            }
            let mut w = rng.gen_range(0..n);
            let mut gave_up = false;
            while w == u || adjacency[u][w] {
                if degree[u] >= n - 1 {
                    gave_up = true;
                    break;
                }
                w = rng.gen_range(0..n);
            }
            if !gave_up {
                remove(&mut adjacency, &mut degree, u, v);
                add(&mut adjacency, &mut degree, u, w);
            }
        }
    }

    let mut edges = Vec::with_capacity(n * k / 2);
    for a in 0..n {
        for b in (a + 1)..n {
            if adjacency[a][b] {
                edges.push((a, b));
            }
        }
    }
    edges
}
