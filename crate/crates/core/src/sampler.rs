//! Conductance and adaptive hop selection for the per-node training context.

use crate::error::{Error, Result};
use crate::graph::{khop_nodes, Graph, NodeSet};

/// Default upper bound on the hop count considered for a node's context.
pub const DEFAULT_MAX_HOPS: usize = 5;

/// Conductance assigned when the smaller side has zero degree volume, and to
/// balls that cover the whole graph.
pub const WORST_CONDUCTANCE: f64 = 1.0;

/// The k-hop ball around `center` with minimal conductance over `1..=k_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSubgraph {
    pub center: usize,
    pub k_star: usize,
    pub nodes: NodeSet,
    pub conductance: f64,
}

/// Cut edges leaving `c` divided by `min(vol(c), vol(V \ c))`.
pub fn conductance(g: &Graph, c: &NodeSet) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::domain("conductance of an empty set"));
    }
    c.check_bounds(g.node_count())?;
    if c.len() == g.node_count() {
        return Err(Error::domain("conductance of the full node set"));
    }
    let mut cut = 0usize;
    let mut vol_in = 0usize;
    for v in c.iter() {
        vol_in += g.degree(v);
        cut += g.neighbors(v).iter().filter(|&&w| !c.contains(w)).count();
    }
    let vol_out = 2 * g.edge_count() - vol_in;
    let denom = vol_in.min(vol_out);
    if denom == 0 {
        return Ok(WORST_CONDUCTANCE);
    }
    Ok(cut as f64 / denom as f64)
}

fn ball_conductance(g: &Graph, ball: &NodeSet) -> Result<f64> {
    if ball.len() == g.node_count() {
        Ok(WORST_CONDUCTANCE)
    } else {
        conductance(g, ball)
    }
}

/// Pick the hop count in `1..=k_max` whose ball around `center` has the
/// lowest conductance. Ties go to the smaller hop count.
pub fn sample_augmented(g: &Graph, center: usize, k_max: usize) -> Result<AugmentedSubgraph> {
    if k_max == 0 {
        return Err(Error::domain("hop cap must be at least 1"));
    }
    if center >= g.node_count() {
        return Err(Error::domain(format!("center {center} out of bounds")));
    }
    let seeds = NodeSet::singleton(center);
    let mut best: Option<AugmentedSubgraph> = None;
    let mut prev_len = 0;
    for k in 1..=k_max {
        let ball = khop_nodes(g, &seeds, k)?;
        // A ball that stopped growing has the same conductance as before.
        if ball.len() == prev_len {
            break;
        }
        prev_len = ball.len();
        let phi = ball_conductance(g, &ball)?;
        if best.as_ref().map_or(true, |b| phi < b.conductance) {
            best = Some(AugmentedSubgraph {
                center,
                k_star: k,
                nodes: ball,
                conductance: phi,
            });
        }
    }
    Ok(best.expect("k_max >= 1 evaluates at least one ball"))
}
