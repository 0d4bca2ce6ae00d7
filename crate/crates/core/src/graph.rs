//! Immutable undirected graphs in CSR form and the structural primitives the
//! rest of the crate consumes: degrees, k-hop neighborhoods, local degree
//! profiles, shortest-path distances, and degree-sorted contexts.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge endpoint {endpoint} out of range for {num_nodes} nodes")]
    EndpointOutOfRange { endpoint: usize, num_nodes: usize },
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
}

/// Undirected simple graph. The adjacency is stored symmetrically with
/// sorted neighbor lists, no duplicates, and no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Build from an arbitrary edge list: direction, duplicates, and
    /// self-loops are normalized away.
    pub fn build(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            for endpoint in [u, v] {
                if endpoint >= num_nodes {
                    return Err(GraphError::EndpointOutOfRange {
                        endpoint,
                        num_nodes,
                    });
                }
            }
            if u == v {
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend_from_slice(list);
            offsets.push(neighbors.len());
        }
        Ok(Graph {
            num_nodes,
            offsets,
            neighbors,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Undirected edges as (u, v) with u < v, sorted.
    pub fn edges_undirected(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn check_node(&self, v: usize) -> Result<(), GraphError> {
        if v >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange {
                node: v,
                num_nodes: self.num_nodes,
            });
        }
        Ok(())
    }

    /// Nodes within k hops of v, the ego included, ascending by id.
    pub fn k_hop_neighbors(&self, v: usize, k: usize) -> Result<Vec<usize>, GraphError> {
        self.check_node(v)?;
        let mut dist = vec![usize::MAX; self.num_nodes];
        dist[v] = 0;
        let mut frontier = vec![v];
        let mut members = vec![v];
        for depth in 1..=k {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in self.neighbors(u) {
                    if dist[w] == usize::MAX {
                        dist[w] = depth;
                        next.push(w);
                        members.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        members.sort_unstable();
        Ok(members)
    }

    /// Row v = [deg(v), min, max, mean, std] over the degrees of v's
    /// neighbors. Isolated nodes get an all-zero row.
    pub fn local_degree_profile(&self) -> LdpMatrix {
        let mut rows = Array2::zeros((self.num_nodes, 5));
        for v in 0..self.num_nodes {
            let neigh = self.neighbors(v);
            rows[(v, 0)] = neigh.len() as f64;
            if neigh.is_empty() {
                continue;
            }
            let degs: Vec<f64> = neigh.iter().map(|&u| self.degree(u) as f64).collect();
            let min = degs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = degs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = degs.iter().sum::<f64>() / degs.len() as f64;
            let var = degs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / degs.len() as f64;
            rows[(v, 1)] = min;
            rows[(v, 2)] = max;
            rows[(v, 3)] = mean;
            rows[(v, 4)] = var.sqrt();
        }
        LdpMatrix(rows)
    }

    /// BFS distances from v; unreachable nodes get -1.
    pub fn bfs_distances(&self, v: usize) -> Vec<i64> {
        let mut dist = vec![-1i64; self.num_nodes];
        dist[v] = 0;
        let mut queue = std::collections::VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &w in self.neighbors(u) {
                if dist[w] < 0 {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// All-pairs shortest-path distances by BFS from every node.
    /// Disconnected pairs are -1; with a truncation radius r, finite
    /// distances above r collapse to r + 1.
    pub fn shortest_path_matrix(&self, truncation: Option<usize>) -> SpdMatrix {
        let n = self.num_nodes;
        let mut entries = Array2::from_elem((n, n), -1i64);
        for v in 0..n {
            let dist = self.bfs_distances(v);
            for (u, &d) in dist.iter().enumerate() {
                entries[(v, u)] = match (d, truncation) {
                    (-1, _) => -1,
                    (d, Some(r)) if d as usize > r => r as i64 + 1,
                    (d, _) => d,
                };
            }
        }
        SpdMatrix {
            entries,
            truncation,
        }
    }

    /// Members of the k-hop neighborhood ordered by ascending degree, ties
    /// broken by ascending node id.
    pub fn sorted_context(&self, v: usize, k: usize) -> Result<Vec<usize>, GraphError> {
        let mut members = self.k_hop_neighbors(v, k)?;
        members.sort_by_key(|&u| (self.degree(u), u));
        Ok(members)
    }
}

/// Per-node 5-number degree summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpMatrix(pub Array2<f64>);

impl LdpMatrix {
    pub fn row(&self, v: usize) -> ndarray::ArrayView1<'_, f64> {
        self.0.row(v)
    }

    pub fn inner(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Dense shortest-path distance matrix; -1 marks disconnected pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    pub entries: Array2<i64>,
    pub truncation: Option<usize>,
}

impl SpdMatrix {
    pub fn num_nodes(&self) -> usize {
        self.entries.nrows()
    }

    /// Distances cast to reals, the position signal consumed by the model.
    pub fn to_real(&self) -> Array2<f64> {
        self.entries.mapv(|v| v as f64)
    }
}
