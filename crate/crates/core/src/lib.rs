//! Label-free community search.
//!
//! A hop-token graph transformer is pre-trained once on the whole graph
//! without any community labels. At query time, every node is scored by the
//! similarity of its embedding to the query nodes' embeddings, and a
//! community is extracted by maximizing the expected score gain.
//!
//! ```no_run
//! use commsearch::prelude::*;
//!
//! let g = read_graph("karate.edges".as_ref()).unwrap();
//! let x = FeatureMatrix::identity(g.node_count());
//! let trained = pretrain(&g, &x, &TrainConfig::default()).unwrap();
//! let all = NodeSet::full(g.node_count());
//! let emb = encode_batch(&trained.params, &g, &x, 5, &all).unwrap();
//! let query = NodeSet::new(vec![1, 9, 19]);
//! let scores = compute_scores(&emb, &query, Similarity::Cosine).unwrap();
//! let found = local_search(&scores, &g, &query, &EsgConfig::default()).unwrap();
//! println!("{}", found.nodes);
//! ```

pub mod error;
pub mod graph;
pub mod identify;
pub mod io;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod scoring;
pub mod tape;
pub mod train;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::error::{Error, Result};
    pub use crate::graph::{load_graph, propagate, FeatureMatrix, Graph, NodeSet};
    pub use crate::identify::{
        esg, global_search, local_search, oracle_search, Community, EsgConfig, SearchMethod,
    };
    pub use crate::io::{read_graph, run_pipeline, RunConfig};
    pub use crate::metrics::{evaluate, f1, jaccard, nmi};
    pub use crate::model::{encode, encode_batch, EmbeddingPair, ModelParams};
    pub use crate::sampler::{conductance, sample_augmented};
    pub use crate::scoring::{compute_scores, ScoreVector, Similarity};
    pub use crate::train::{pretrain, TrainConfig};
}
