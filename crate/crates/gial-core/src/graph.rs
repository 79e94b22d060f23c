//! Undirected graphs, the symmetric normalization used by graph-convolution
//! layers, and the homogeneous/heterogeneous edge census.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Undirected simple graph. Edges are stored canonically as (u, v) with
/// u < v, sorted and deduplicated; the structure is immutable after
/// construction and safe to read from multiple threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<f64>>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from unordered endpoint pairs. Self-loops, duplicate
    /// edges and out-of-range endpoints are rejected.
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::build(n, edges, None)
    }

    /// As [`Graph::new`] with one strictly positive weight per edge.
    pub fn with_weights(n: usize, edges: Vec<(usize, usize)>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != edges.len() {
            return Err(Error::contract(format!(
                "{} weights for {} edges",
                weights.len(),
                edges.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::contract(format!("edge weight {w} must be positive")));
        }
        Self::build(n, edges, Some(weights))
    }

    fn build(n: usize, edges: Vec<(usize, usize)>, weights: Option<Vec<f64>>) -> Result<Self> {
        let mut pairs: Vec<((usize, usize), f64)> = Vec::with_capacity(edges.len());
        for (k, &(u, v)) in edges.iter().enumerate() {
            if u == v {
                return Err(Error::contract(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::contract(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            let key = (u.min(v), u.max(v));
            let w = weights.as_ref().map(|ws| ws[k]).unwrap_or(1.0);
            pairs.push((key, w));
        }
        pairs.sort_by_key(|(key, _)| *key);
        for pair in pairs.windows(2) {
            if pair[0].0 == pair[1].0 {
                let (u, v) = pair[0].0;
                return Err(Error::contract(format!("duplicate edge ({u}, {v})")));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &((u, v), _) in &pairs {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        let (edges, weights) = if weights.is_some() {
            let (e, w): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            (e, Some(w))
        } else {
            (pairs.into_iter().map(|(key, _)| key).collect(), None)
        };
        Ok(Graph {
            n,
            edges,
            weights,
            adjacency,
        })
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Graph {
        let mut edges = Vec::with_capacity(n * (n - 1) / 2);
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v));
            }
        }
        Graph::new(n, edges).expect("complete graph is always valid")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbors of `u` in ascending order.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if u >= self.n || v >= self.n || u == v {
            return false;
        }
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Symmetrically normalized adjacency with inserted self-loops:
    /// with `M = A + I` and `D` its row-sum degree matrix, returns
    /// `D^{-1/2} M D^{-1/2}` as a dense matrix. The result is exactly
    /// symmetric and an isolated node keeps a diagonal entry of 1.
    pub fn normalized_adjacency(&self) -> Matrix {
        let n = self.n;
        let mut m = Matrix::identity(n);
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            let w = self.weights.as_ref().map(|ws| ws[k]).unwrap_or(1.0);
            m[(u, v)] = w;
            m[(v, u)] = w;
        }
        let mut inv_sqrt_deg = vec![0.0; n];
        for (i, slot) in inv_sqrt_deg.iter_mut().enumerate() {
            let deg: f64 = m.row_slice(i).iter().sum();
            *slot = 1.0 / deg.sqrt();
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = inv_sqrt_deg[i] * m[(i, j)] * inv_sqrt_deg[j];
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Counts edges whose endpoints share a treatment assignment and those
    /// whose endpoints differ, next to the even-split complete-graph null
    /// expectations for the same node count.
    pub fn edge_census(&self, treatment: &[u8]) -> Result<EdgeCensus> {
        if treatment.len() != self.n {
            return Err(Error::contract(format!(
                "treatment vector of length {} for {} nodes",
                treatment.len(),
                self.n
            )));
        }
        if let Some(bad) = treatment.iter().find(|t| **t > 1) {
            return Err(Error::contract(format!(
                "treatment entries must be 0 or 1, found {bad}"
            )));
        }
        let mut homogeneous = 0u64;
        let mut heterogeneous = 0u64;
        for &(u, v) in &self.edges {
            if treatment[u] == treatment[v] {
                homogeneous += 1;
            } else {
                heterogeneous += 1;
            }
        }
        let n = self.n as f64;
        Ok(EdgeCensus {
            homogeneous_count: homogeneous,
            heterogeneous_count: heterogeneous,
            expected_homogeneous: n * n / 4.0 - n / 2.0,
            expected_heterogeneous: n * n / 4.0,
        })
    }

    /// Parses the edge-list text format: one `u<TAB>v` pair per line,
    /// 0-indexed; blank lines and lines starting with `#` are ignored.
    /// `source` names the input in error messages.
    pub fn parse_edge_list(text: &str, source: &str) -> Result<Vec<(usize, usize)>> {
        let mut edges = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parse = |field: Option<&str>| -> Result<usize> {
                field
                    .ok_or(())
                    .and_then(|f| f.parse::<usize>().map_err(|_| ()))
                    .map_err(|_| Error::Parse {
                        path: source.to_string(),
                        line: idx + 1,
                        detail: format!("expected `u<TAB>v`, got `{line}`"),
                    })
            };
            let u = parse(fields.next())?;
            let v = parse(fields.next())?;
            if fields.next().is_some() {
                return Err(Error::Parse {
                    path: source.to_string(),
                    line: idx + 1,
                    detail: format!("trailing fields in `{line}`"),
                });
            }
            edges.push((u, v));
        }
        Ok(edges)
    }

    /// Serializes edges in the `u<TAB>v` text format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(u, v) in &self.edges {
            out.push_str(&format!("{u}\t{v}\n"));
        }
        out
    }
}

/// Edge counts grouped by endpoint treatment agreement, with the even-split
/// complete-graph expectations `n^2/4 - n/2` (homogeneous) and `n^2/4`
/// (heterogeneous) as the null reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCensus {
    pub homogeneous_count: u64,
    pub heterogeneous_count: u64,
    pub expected_homogeneous: f64,
    pub expected_heterogeneous: f64,
}

impl EdgeCensus {
    pub fn total(&self) -> u64 {
        self.homogeneous_count + self.heterogeneous_count
    }

    /// homogeneous / heterogeneous, None when no heterogeneous edges exist.
    pub fn observed_ratio(&self) -> Option<f64> {
        if self.heterogeneous_count == 0 {
            None
        } else {
            Some(self.homogeneous_count as f64 / self.heterogeneous_count as f64)
        }
    }

    pub fn expected_ratio(&self) -> f64 {
        self.expected_homogeneous / self.expected_heterogeneous
    }
}
