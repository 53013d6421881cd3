//! Undirected graph storage in compressed adjacency form, node sets, dense
//! node features and normalized-adjacency feature propagation.

use std::collections::VecDeque;
use std::io::BufRead;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Sorted, deduplicated set of node ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    pub fn new(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        NodeSet(ids)
    }

    pub fn singleton(id: usize) -> Self {
        NodeSet(vec![id])
    }

    /// All nodes `0..n`.
    pub fn full(n: usize) -> Self {
        NodeSet((0..n).collect())
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &NodeSet) -> bool {
        self.iter().all(|v| other.contains(v))
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let mut ids = self.0.clone();
        ids.extend_from_slice(&other.0);
        NodeSet::new(ids)
    }

    pub fn intersection_len(&self, other: &NodeSet) -> usize {
        let (mut i, mut j, mut count) = (0, 0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].cmp(&other.0[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }

    pub fn max_id(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn check_bounds(&self, n: usize) -> Result<()> {
        match self.max_id() {
            Some(m) if m >= n => Err(Error::domain(format!(
                "node id {m} out of bounds for graph with {n} nodes"
            ))),
            _ => Ok(()),
        }
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl FromIterator<usize> for NodeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        NodeSet::new(iter.into_iter().collect())
    }
}

impl From<Vec<usize>> for NodeSet {
    fn from(ids: Vec<usize>) -> Self {
        NodeSet::new(ids)
    }
}

impl std::fmt::Display for NodeSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Immutable simple undirected graph. Neighbor lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Graph {
    /// Build from an edge list. Self-loops are dropped, duplicates and
    /// reversed pairs collapse to one undirected edge.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::domain(format!(
                    "edge ({u}, {v}) out of bounds for {n} nodes"
                )));
            }
            if u != v {
                pairs.push((u, v));
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Graph { offsets, targets })
    }

    pub fn empty(n: usize) -> Self {
        Graph {
            offsets: vec![0; n + 1],
            targets: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.node_count()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Symmetric-normalized adjacency applied to `x`: row `i` of the result
    /// is `sum_j x[j] / sqrt(deg(i) deg(j))` over neighbors `j`. Isolated
    /// nodes get a zero row.
    pub fn normalized_adjacency_mul(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        let inv_sqrt: Vec<f64> = (0..self.node_count())
            .map(|v| match self.degree(v) {
                0 => 0.0,
                d => 1.0 / (d as f64).sqrt(),
            })
            .collect();
        for i in 0..self.node_count() {
            let mut row = out.row_mut(i);
            for &j in self.neighbors(i) {
                row.scaled_add(inv_sqrt[i] * inv_sqrt[j], &x.row(j));
            }
        }
        out
    }
}

/// Parse a whitespace-separated `u v` edge list. Lines starting with `#` and
/// blank lines are skipped. The node count is `declared_n` when given,
/// otherwise one past the largest id seen.
pub fn load_graph<R: BufRead>(reader: R, declared_n: Option<usize>) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut max_id: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected two node ids, got {:?}", trimmed),
            });
        }
        let u = parse_node_id(fields[0], lineno)?;
        let v = parse_node_id(fields[1], lineno)?;
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        edges.push((u, v));
    }
    let inferred = max_id.map_or(0, |m| m + 1);
    let n = match declared_n {
        Some(n) if n < inferred => {
            return Err(Error::domain(format!(
                "declared node count {n} is smaller than max id + 1 = {inferred}"
            )))
        }
        Some(n) => n,
        None => inferred,
    };
    Graph::from_edges(n, &edges)
}

fn parse_node_id(tok: &str, line: usize) -> Result<usize> {
    match tok.parse::<i64>() {
        Ok(v) if v < 0 => Err(Error::domain(format!(
            "line {line}: negative node id {v}"
        ))),
        Ok(v) => Ok(v as usize),
        Err(_) => Err(Error::Parse {
            line,
            msg: format!("invalid node id {tok:?}"),
        }),
    }
}

/// Dense row-major node feature matrix, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature matrix".into()));
        }
        Ok(FeatureMatrix(data))
    }

    /// One-hot identity features, used when a graph ships without attributes.
    pub fn identity(n: usize) -> Self {
        FeatureMatrix(Array2::eye(n))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, v: usize) -> ArrayView1<'_, f64> {
        self.0.row(v)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    /// Rows `nodes` in order, as a new matrix.
    pub fn select_rows(&self, nodes: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select(ndarray::Axis(0), nodes))
    }

    /// Parse headerless CSV: one row per node in id order.
    pub fn from_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut data = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut count = 0;
            for tok in trimmed.split(',') {
                let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("invalid feature value {tok:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("non-finite feature value {tok:?}"),
                    });
                }
                data.push(v);
                count += 1;
            }
            match cols {
                None => cols = Some(count),
                Some(c) if c != count => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {c} columns, found {count}"),
                    })
                }
                _ => {}
            }
            rows += 1;
        }
        let cols = cols.unwrap_or(0);
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::domain(e.to_string()))?;
        Ok(FeatureMatrix(arr))
    }
}

/// Hop-propagated features: element `k` is `Â^k x`. Element 0 is `x` itself.
pub fn propagate(g: &Graph, x: &FeatureMatrix, k_max: usize) -> Result<Vec<FeatureMatrix>> {
    if x.rows() != g.node_count() {
        return Err(Error::dim(
            format!("{} feature rows", g.node_count()),
            x.rows(),
        ));
    }
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(x.clone());
    for k in 0..k_max {
        let next = g.normalized_adjacency_mul(out[k].as_array());
        out.push(FeatureMatrix(next));
    }
    Ok(out)
}

/// Nodes within shortest-path distance `k` of any seed, seeds included.
pub fn khop_nodes(g: &Graph, seeds: &NodeSet, k: usize) -> Result<NodeSet> {
    if seeds.is_empty() {
        return Err(Error::domain("k-hop expansion needs at least one seed"));
    }
    seeds.check_bounds(g.node_count())?;
    let mut dist = vec![usize::MAX; g.node_count()];
    let mut queue = VecDeque::new();
    for s in seeds.iter() {
        dist[s] = 0;
        queue.push_back(s);
    }
    let mut reached = seeds.ids().to_vec();
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                reached.push(w);
                queue.push_back(w);
            }
        }
    }
    Ok(NodeSet::new(reached))
}

/// Subgraph induced by a node set. Local id `i` corresponds to `nodes[i]`.
#[derive(Clone, Debug)]
pub struct Subgraph {
    pub graph: Graph,
    pub nodes: NodeSet,
}

impl Subgraph {
    /// Local id of an original node, if it belongs to the subgraph.
    pub fn local_id(&self, original: usize) -> Option<usize> {
        self.nodes.ids().binary_search(&original).ok()
    }

    pub fn original_id(&self, local: usize) -> usize {
        self.nodes.ids()[local]
    }
}

pub fn induced_subgraph(g: &Graph, nodes: &NodeSet) -> Result<Subgraph> {
    nodes.check_bounds(g.node_count())?;
    let ids = nodes.ids();
    let mut edges = Vec::new();
    for (local_u, &u) in ids.iter().enumerate() {
        for &w in g.neighbors(u) {
            if w > u {
                if let Ok(local_w) = ids.binary_search(&w) {
                    edges.push((local_u, local_w));
                }
            }
        }
    }
    Ok(Subgraph {
        graph: Graph::from_edges(ids.len(), &edges)?,
        nodes: nodes.clone(),
    })
}

/// Whether the subgraph induced by `nodes` has exactly one component.
pub fn is_connected(g: &Graph, nodes: &NodeSet) -> Result<bool> {
    if nodes.is_empty() {
        return Err(Error::domain("connectivity of an empty node set"));
    }
    nodes.check_bounds(g.node_count())?;
    let ids = nodes.ids();
    let mut seen = vec![false; ids.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &w in g.neighbors(ids[i]) {
            if let Ok(j) = ids.binary_search(&w) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
    }
    Ok(count == ids.len())
}
