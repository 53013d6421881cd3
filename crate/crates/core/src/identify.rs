//! Community identification by expected score gain (ESG).
//!
//! `ESG(C) = (Σ_{v∈C} s_v − mean(S)·|C|) / |C|^τ`: the score mass of `C`
//! above what a random selection of the same size would collect, damped by
//! size. Finding the connected, query-containing maximizer is NP-hard, so
//! two heuristics are provided next to an exhaustive oracle for small graphs:
//!
//! - [`local_search`] grows the query greedily along the boundary while ESG
//!   strictly improves, so its output stays connected.
//! - [`global_search`] binary-searches the prefix length of the
//!   score-descending node order, which is optimal when the prefix ESG
//!   sequence is unimodal but may return a disconnected set.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{is_connected, Graph, NodeSet};
use crate::scoring::ScoreVector;

/// Largest graph [`oracle_search`] will enumerate.
pub const ORACLE_MAX_NODES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SearchMethod {
    #[default]
    Local,
    Global,
    Oracle,
}

impl FromStr for SearchMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(SearchMethod::Local),
            "global" => Ok(SearchMethod::Global),
            "oracle" => Ok(SearchMethod::Oracle),
            other => Err(Error::domain(format!("unknown search method {other:?}"))),
        }
    }
}

impl std::fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMethod::Local => "local",
            SearchMethod::Global => "global",
            SearchMethod::Oracle => "oracle",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EsgConfig {
    pub tau: f64,
    /// `None` means `min(ceil(|V| / 2), 10000)`.
    pub max_size: Option<usize>,
}

impl Default for EsgConfig {
    fn default() -> Self {
        EsgConfig {
            tau: 0.5,
            max_size: None,
        }
    }
}

impl EsgConfig {
    pub fn with_tau(tau: f64) -> Self {
        EsgConfig {
            tau,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::domain(format!("tau {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }

    pub fn size_cap(&self, n: usize) -> usize {
        self.max_size.unwrap_or_else(|| n.div_ceil(2).min(10_000)).max(1)
    }
}

/// A query's community and how it was found.
#[derive(Clone, Debug, PartialEq)]
pub struct Community {
    pub query: NodeSet,
    pub nodes: NodeSet,
    pub esg: f64,
    pub method: SearchMethod,
    pub connected: bool,
}

impl Community {
    fn build(g: &Graph, s: &ScoreVector, query: &NodeSet, nodes: NodeSet, tau: f64, method: SearchMethod) -> Result<Self> {
        let esg = esg(s, &nodes, tau)?;
        let connected = is_connected(g, &nodes)?;
        Ok(Community {
            query: query.clone(),
            nodes,
            esg,
            method,
            connected,
        })
    }

    /// `query_ids | method | esg | connected | member_ids`
    pub fn to_line(&self) -> String {
        format!(
            "{} | {} | {:.6} | {} | {}",
            self.query, self.method, self.esg, self.connected, self.nodes
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(Error::domain(format!("malformed community line {line:?}")));
        }
        let ids = |s: &str| -> Result<NodeSet> {
            s.split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| {
                    t.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::domain(format!("invalid node id {t:?}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(NodeSet::new)
        };
        Ok(Community {
            query: ids(parts[0])?,
            method: parts[1].parse()?,
            esg: parts[2]
                .parse()
                .map_err(|_| Error::domain(format!("invalid esg {:?}", parts[2])))?,
            connected: parts[3]
                .parse()
                .map_err(|_| Error::domain(format!("invalid flag {:?}", parts[3])))?,
            nodes: ids(parts[4])?,
        })
    }
}

#[inline]
fn gain(sum: f64, size: usize, mean: f64, tau: f64) -> f64 {
    let size = size as f64;
    (sum - mean * size) / size.powf(tau)
}

/// Expected score gain of `c`.
pub fn esg(s: &ScoreVector, c: &NodeSet, tau: f64) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::domain("ESG of an empty set"));
    }
    c.check_bounds(s.len())?;
    let sum: f64 = c.iter().map(|v| s.scores()[v]).sum();
    Ok(gain(sum, c.len(), s.mean(), tau))
}

fn check_query(s: &ScoreVector, g: &Graph, query: &NodeSet) -> Result<()> {
    if query.is_empty() {
        return Err(Error::domain("empty query"));
    }
    if s.len() != g.node_count() {
        return Err(Error::dim(format!("{} scores", g.node_count()), s.len()));
    }
    query.check_bounds(g.node_count())
}

/// Max-heap key: higher score first, then lower node id.
#[derive(PartialEq)]
struct Candidate {
    score: f64,
    node: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedy boundary expansion from the query. Each step takes the
/// highest-scoring untraversed neighbor of the traversed set and keeps it only
/// if ESG strictly exceeds the best value seen so far; the first rejection
/// ends the search. The first candidate is always accepted.
pub fn local_search(s: &ScoreVector, g: &Graph, query: &NodeSet, cfg: &EsgConfig) -> Result<Community> {
    check_query(s, g, query)?;
    cfg.validate()?;
    let n = g.node_count();
    let cap = cfg.size_cap(n);
    let scores = s.scores();

    let mut queued = vec![false; n];
    let mut heap = BinaryHeap::new();
    for q in query.iter() {
        queued[q] = true;
    }
    let push_neighbors = |v: usize, heap: &mut BinaryHeap<Candidate>, queued: &mut [bool]| {
        for &w in g.neighbors(v) {
            if !queued[w] {
                queued[w] = true;
                heap.push(Candidate {
                    score: scores[w],
                    node: w,
                });
            }
        }
    };
    for q in query.iter() {
        push_neighbors(q, &mut heap, &mut queued);
    }

    let mut members = query.ids().to_vec();
    let mut sum: f64 = query.iter().map(|v| scores[v]).sum();
    let mut traversed = query.len();
    let mut best = f64::NEG_INFINITY;
    while traversed < n && members.len() < cap {
        let Some(Candidate { node: u, .. }) = heap.pop() else {
            break;
        };
        traversed += 1;
        let candidate = gain(sum + scores[u], members.len() + 1, s.mean(), cfg.tau);
        if candidate > best {
            best = candidate;
            sum += scores[u];
            members.push(u);
            push_neighbors(u, &mut heap, &mut queued);
        } else {
            break;
        }
    }
    Community::build(g, s, query, NodeSet::new(members), cfg.tau, SearchMethod::Local)
}

/// One comparison made by [`global_search`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalStep {
    pub start: usize,
    pub end: usize,
    pub mid: usize,
    pub esg_mid: f64,
    pub esg_left: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalTrace {
    pub steps: Vec<GlobalStep>,
    /// Final prefix length of the score-descending order.
    pub prefix_len: usize,
    /// Node ids sorted by descending score, ties by ascending id.
    pub order: Vec<usize>,
}

impl GlobalTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }
}

/// Node ids by descending score; equal scores keep ascending id order.
pub fn score_order(s: &ScoreVector) -> Vec<usize> {
    let scores = s.scores();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// ESG of every prefix of `order`: element `p - 1` is the ESG of the top `p`
/// nodes.
pub fn prefix_esg(s: &ScoreVector, order: &[usize], tau: f64) -> Vec<f64> {
    let mut sum = 0.0;
    order
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            sum += s.scores()[v];
            gain(sum, i + 1, s.mean(), tau)
        })
        .collect()
}

/// Binary search over prefix lengths `1..=min(|V|, cap)` of the
/// score-descending order. At each step the prefix of length `mid` (upper
/// midpoint) is compared with the prefix one shorter; a strict gain moves the
/// start to `mid`, otherwise the end drops to `mid - 1`. The result is the
/// query plus the final prefix.
pub fn global_search_traced(
    s: &ScoreVector,
    g: &Graph,
    query: &NodeSet,
    cfg: &EsgConfig,
) -> Result<(Community, GlobalTrace)> {
    check_query(s, g, query)?;
    cfg.validate()?;
    let n = g.node_count();
    let order = score_order(s);
    let scores = s.scores();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &v in &order {
        prefix.push(prefix.last().unwrap() + scores[v]);
    }
    let f = |p: usize| gain(prefix[p], p, s.mean(), cfg.tau);

    let mut start = 1;
    let mut end = n.min(cfg.size_cap(n));
    let mut steps = Vec::new();
    while start < end {
        let mid = start + (end - start).div_ceil(2);
        let (esg_mid, esg_left) = (f(mid), f(mid - 1));
        steps.push(GlobalStep {
            start,
            end,
            mid,
            esg_mid,
            esg_left,
        });
        if esg_mid > esg_left {
            start = mid;
        } else {
            end = mid - 1;
        }
    }
    let nodes = query.union(&NodeSet::new(order[..end].to_vec()));
    let community = Community::build(g, s, query, nodes, cfg.tau, SearchMethod::Global)?;
    Ok((
        community,
        GlobalTrace {
            steps,
            prefix_len: end,
            order,
        },
    ))
}

pub fn global_search(s: &ScoreVector, g: &Graph, query: &NodeSet, cfg: &EsgConfig) -> Result<Community> {
    global_search_traced(s, g, query, cfg).map(|(c, _)| c)
}

/// Exhaustive maximizer of ESG over connected sets containing the query.
/// Ties within `1e-12` (relative) go to the smaller set, then the
/// lexicographically smaller sorted id list. Refuses graphs with more than
/// [`ORACLE_MAX_NODES`] nodes.
pub fn oracle_search(s: &ScoreVector, g: &Graph, query: &NodeSet, tau: f64) -> Result<Community> {
    check_query(s, g, query)?;
    EsgConfig::with_tau(tau).validate()?;
    let n = g.node_count();
    if n > ORACLE_MAX_NODES {
        return Err(Error::domain(format!(
            "oracle search enumerates at most {ORACLE_MAX_NODES} nodes, graph has {n}"
        )));
    }
    let adj: Vec<u32> = (0..n)
        .map(|v| g.neighbors(v).iter().fold(0u32, |m, &w| m | (1 << w)))
        .collect();
    let query_mask = query.iter().fold(0u32, |m, v| m | (1 << v));
    let others: Vec<usize> = (0..n).filter(|v| !query.contains(*v)).collect();
    let scores = s.scores();

    let connected = |set: u32| -> bool {
        let first = set.trailing_zeros();
        let mut seen = 1u32 << first;
        let mut frontier = seen;
        while frontier != 0 {
            let v = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let fresh = adj[v] & set & !seen;
            seen |= fresh;
            frontier |= fresh;
        }
        seen == set
    };
    let ids_of = |set: u32| -> Vec<usize> { (0..n).filter(|v| set & (1 << v) != 0).collect() };

    let query_sum: f64 = query.iter().map(|v| scores[v]).sum();
    let mut best: Option<(f64, u32)> = None;
    for bits in 0u32..(1u32 << others.len()) {
        let mut set = query_mask;
        let mut sum = query_sum;
        let mut rest = bits;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            set |= 1 << others[i];
            sum += scores[others[i]];
        }
        if !connected(set) {
            continue;
        }
        let value = gain(sum, set.count_ones() as usize, s.mean(), tau);
        let better = match best {
            None => true,
            Some((b, bset)) => {
                let eps = 1e-12 * b.abs().max(1.0);
                if value > b + eps {
                    true
                } else if value >= b - eps {
                    let (size, bsize) = (set.count_ones(), bset.count_ones());
                    size < bsize || (size == bsize && ids_of(set) < ids_of(bset))
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((value, set));
        }
    }
    let (_, set) = best.ok_or_else(|| Error::domain("no connected node set contains the query"))?;
    Community::build(g, s, query, NodeSet::new(ids_of(set)), tau, SearchMethod::Oracle)
}

/// Set-cover reduction instance: element nodes `0..|M|`, set nodes
/// `|M|..|M|+|N|`, then one apex node joined to every set node.
#[derive(Clone, Debug)]
pub struct SetCoverGadget {
    pub graph: Graph,
    pub scores: ScoreVector,
    pub query: NodeSet,
    pub set_nodes: Vec<usize>,
    pub apex: usize,
}

impl SetCoverGadget {
    /// Indices of the sets whose nodes appear in `c`.
    pub fn chosen_sets(&self, c: &NodeSet) -> Vec<usize> {
        self.set_nodes
            .iter()
            .enumerate()
            .filter(|(_, &v)| c.contains(v))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Element and apex nodes score `1/(|M|+1)`, set nodes `1/(|M||N|)`. The
/// query is every element node plus the apex; use with `τ = 1`.
pub fn gen_setcover_gadget(universe_size: usize, sets: &[Vec<usize>]) -> Result<SetCoverGadget> {
    if universe_size == 0 || sets.is_empty() {
        return Err(Error::domain("set cover needs elements and sets"));
    }
    let mut covered = vec![false; universe_size];
    for set in sets {
        for &e in set {
            if e >= universe_size {
                return Err(Error::domain(format!("element {e} outside universe")));
            }
            covered[e] = true;
        }
    }
    if let Some(e) = covered.iter().position(|c| !c) {
        return Err(Error::domain(format!("element {e} is not covered by any set")));
    }
    let m = universe_size;
    let k = sets.len();
    let apex = m + k;
    let mut edges = Vec::new();
    for (j, set) in sets.iter().enumerate() {
        for &e in set {
            edges.push((e, m + j));
        }
        edges.push((m + j, apex));
    }
    let graph = Graph::from_edges(m + k + 1, &edges)?;
    let mut scores = vec![1.0 / (m + 1) as f64; m + k + 1];
    for s in scores.iter_mut().skip(m).take(k) {
        *s = 1.0 / (m * k) as f64;
    }
    let query = NodeSet::new((0..m).chain(std::iter::once(apex)).collect());
    Ok(SetCoverGadget {
        graph,
        scores: ScoreVector::from_raw(scores, query.clone())?,
        query,
        set_nodes: (m..m + k).collect(),
        apex,
    })
}
