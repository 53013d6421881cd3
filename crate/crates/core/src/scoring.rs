//! Per-query community scores from node embeddings.

use std::str::FromStr;

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::model::EmbeddingPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Cosine,
    L1,
    L2,
}

impl FromStr for Similarity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Similarity::Cosine),
            "l1" => Ok(Similarity::L1),
            "l2" => Ok(Similarity::L2),
            other => Err(Error::domain(format!("unknown similarity {other:?}"))),
        }
    }
}

impl std::fmt::Display for Similarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Similarity::Cosine => "cosine",
            Similarity::L1 => "l1",
            Similarity::L2 => "l2",
        })
    }
}

/// Which half of an [`EmbeddingPair`] carries similarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Representation {
    #[default]
    Node,
    Community,
}

impl FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "node" => Ok(Representation::Node),
            "community" | "com" => Ok(Representation::Community),
            other => Err(Error::domain(format!("unknown representation {other:?}"))),
        }
    }
}

impl Similarity {
    /// Zero-norm vectors have cosine similarity 0 with everything.
    pub fn eval(self, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        match self {
            Similarity::Cosine => {
                let denom = a.dot(&a).sqrt() * b.dot(&b).sqrt();
                if denom == 0.0 {
                    0.0
                } else {
                    a.dot(&b) / denom
                }
            }
            Similarity::L2 => {
                let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                1.0 / (1.0 + d.sqrt())
            }
            Similarity::L1 => {
                let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum();
                1.0 / (1.0 + d)
            }
        }
    }
}

/// Community score of every node with respect to a query. The mean score
/// is computed once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    scores: Vec<f64>,
    query: NodeSet,
    similarity: Similarity,
    mean: f64,
}

impl ScoreVector {
    pub fn new(scores: Vec<f64>, query: NodeSet, similarity: Similarity) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("score vector".into()));
        }
        query.check_bounds(scores.len())?;
        let mean = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        Ok(ScoreVector {
            scores,
            query,
            similarity,
            mean,
        })
    }

    /// Scores not derived from embeddings, e.g. loaded from a file.
    pub fn from_raw(scores: Vec<f64>, query: NodeSet) -> Result<Self> {
        Self::new(scores, query, Similarity::Cosine)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn query(&self) -> &NodeSet {
        &self.query
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node_id,score\n");
        for (v, s) in self.scores.iter().enumerate() {
            out.push_str(&format!("{v},{s}\n"));
        }
        out
    }

    /// Parse `node_id,score` rows (header optional). Ids must be `0..n` in order.
    pub fn parse_csv(text: &str, query: NodeSet) -> Result<Self> {
        let mut scores = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("node_id") {
                continue;
            }
            let bad = |msg: &str| Error::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let (id, score) = line.split_once(',').ok_or_else(|| bad("expected node_id,score"))?;
            let id: usize = id.trim().parse().map_err(|_| bad("invalid node id"))?;
            if id != scores.len() {
                return Err(bad("node ids must be consecutive from 0"));
            }
            scores.push(score.trim().parse().map_err(|_| bad("invalid score"))?);
        }
        Self::from_raw(scores, query)
    }
}

/// `s_v = (1/|Q|) Σ_{u∈Q} sim(z_v, z_u)` using node-level embeddings.
pub fn compute_scores(embeddings: &[EmbeddingPair], query: &NodeSet, similarity: Similarity) -> Result<ScoreVector> {
    compute_scores_with(embeddings, query, similarity, Representation::Node)
}

pub fn compute_scores_with(
    embeddings: &[EmbeddingPair],
    query: &NodeSet,
    similarity: Similarity,
    repr: Representation,
) -> Result<ScoreVector> {
    if query.is_empty() {
        return Err(Error::domain("empty query"));
    }
    query.check_bounds(embeddings.len())?;
    fn carrier(e: &EmbeddingPair, repr: Representation) -> ArrayView1<'_, f64> {
        match repr {
            Representation::Node => e.z_node.view(),
            Representation::Community => e.z_com.view(),
        }
    }
    let pick = |e| carrier(e, repr);
    let qn = query.len() as f64;
    let scores = embeddings
        .iter()
        .map(|e| {
            let zv = pick(e);
            query
                .iter()
                .map(|u| similarity.eval(zv, pick(&embeddings[u])))
                .sum::<f64>()
                / qn
        })
        .collect();
    ScoreVector::new(scores, query.clone(), similarity)
}
