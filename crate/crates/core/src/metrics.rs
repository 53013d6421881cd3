//! Set-overlap quality of predicted communities against ground truth.

use crate::error::{Error, Result};
use crate::graph::NodeSet;

/// Harmonic mean of precision and recall; 0 when `pred` is empty or the
/// sets are disjoint.
pub fn f1(pred: &NodeSet, truth: &NodeSet) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::domain("F1 against an empty ground truth"));
    }
    let hit = pred.intersection_len(truth) as f64;
    if hit == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * hit / (pred.len() + truth.len()) as f64)
}

pub fn jaccard(pred: &NodeSet, truth: &NodeSet) -> f64 {
    let hit = pred.intersection_len(truth);
    let union = pred.len() + truth.len() - hit;
    if union == 0 {
        return 0.0;
    }
    hit as f64 / union as f64
}

/// Normalized mutual information between the in/out partitions `pred` and
/// `truth` induce on `n` nodes, normalized by the geometric mean of the two
/// entropies. Returns 0 when either partition is trivial.
pub fn nmi(pred: &NodeSet, truth: &NodeSet, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("NMI over zero nodes"));
    }
    pred.check_bounds(n)?;
    truth.check_bounds(n)?;
    let both = pred.intersection_len(truth);
    let counts = [
        [n + both - pred.len() - truth.len(), truth.len() - both],
        [pred.len() - both, both],
    ];
    let nf = n as f64;
    let row = [(n - pred.len()) as f64, pred.len() as f64];
    let col = [(n - truth.len()) as f64, truth.len() as f64];
    let entropy = |m: &[f64; 2]| -> f64 {
        m.iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| -(c / nf) * (c / nf).ln())
            .sum()
    };
    let (hp, ht) = (entropy(&row), entropy(&col));
    if hp <= 0.0 || ht <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, r) in counts.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / nf;
                mi += p * (p * nf * nf / (row[i] * col[j])).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryScore {
    pub f1: f64,
    pub nmi: f64,
    pub jaccard: f64,
}

pub fn score(pred: &NodeSet, truth: &NodeSet, n: usize) -> Result<QueryScore> {
    Ok(QueryScore {
        f1: f1(pred, truth)?,
        nmi: nmi(pred, truth, n)?,
        jaccard: jaccard(pred, truth),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_query: Vec<QueryScore>,
}

impl EvalReport {
    pub fn mean(&self) -> QueryScore {
        let k = self.per_query.len().max(1) as f64;
        let sum = |f: fn(&QueryScore) -> f64| self.per_query.iter().map(f).sum::<f64>() / k;
        QueryScore {
            f1: sum(|q| q.f1),
            nmi: sum(|q| q.nmi),
            jaccard: sum(|q| q.jaccard),
        }
    }

    /// One row per query plus a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query,f1,nmi,jac\n");
        for (i, q) in self.per_query.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{:.6}\n", q.f1, q.nmi, q.jaccard));
        }
        let m = self.mean();
        out.push_str(&format!("mean,{:.6},{:.6},{:.6}\n", m.f1, m.nmi, m.jaccard));
        out
    }
}

pub fn evaluate(preds: &[NodeSet], truths: &[NodeSet], n: usize) -> Result<EvalReport> {
    if preds.len() != truths.len() {
        return Err(Error::dim(format!("{} ground-truth sets", preds.len()), truths.len()));
    }
    let per_query = preds
        .iter()
        .zip(truths)
        .map(|(p, t)| score(p, t, n))
        .collect::<Result<_>>()?;
    Ok(EvalReport { per_query })
}
