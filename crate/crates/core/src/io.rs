//! File formats, query generation, run configuration and the end-to-end
//! pipeline behind the `run` command.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array1;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{load_graph, FeatureMatrix, Graph, NodeSet};
use crate::identify::{global_search, local_search, oracle_search, Community, EsgConfig, SearchMethod};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{encode_batch, EmbeddingPair, ModelParams};
use crate::scoring::{compute_scores, Similarity};
use crate::train::{checkpoint_bytes, pretrain, TrainConfig, TrainLog, TripletConvention};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_graph(path: &Path) -> Result<Graph> {
    load_graph(open(path)?, None).map_err(|e| e.context(path.display()))
}

/// Features from CSV, or one-hot identity features when no path is given.
pub fn read_features(path: Option<&Path>, n: usize) -> Result<FeatureMatrix> {
    let Some(path) = path else {
        return Ok(FeatureMatrix::identity(n));
    };
    let x = FeatureMatrix::from_csv(open(path)?).map_err(|e| e.context(path.display()))?;
    if x.rows() != n {
        return Err(Error::dim(format!("{n} feature rows"), x.rows()).context(path.display()));
    }
    Ok(x)
}

fn parse_ids<'a>(tokens: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<usize>> {
    tokens
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid node id {t:?}"),
            })
        })
        .collect()
}

/// One community per line, whitespace-separated ids. Blank and `#` lines
/// are skipped.
pub fn load_communities<R: BufRead>(reader: R) -> Result<Vec<NodeSet>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<communities>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(NodeSet::new(parse_ids(line.split_whitespace(), idx + 1)?));
    }
    Ok(out)
}

pub fn read_communities(path: &Path) -> Result<Vec<NodeSet>> {
    load_communities(open(path)?).map_err(|e| e.context(path.display()))
}

/// Maps arbitrary node labels to dense ids in order of first appearance.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IdMap {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Edge list whose endpoints are arbitrary whitespace-free labels.
pub fn load_labeled_graph<R: BufRead>(reader: R) -> Result<(Graph, IdMap)> {
    let mut map = IdMap::default();
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<graph>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                msg: "expected two endpoints".into(),
            });
        }
        edges.push((map.intern(tokens[0]), map.intern(tokens[1])));
    }
    Ok((Graph::from_edges(map.len(), &edges)?, map))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuerySetting {
    Inductive,
    #[default]
    Transductive,
    Hybrid,
}

impl FromStr for QuerySetting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inductive" => Ok(QuerySetting::Inductive),
            "transductive" => Ok(QuerySetting::Transductive),
            "hybrid" => Ok(QuerySetting::Hybrid),
            other => Err(Error::domain(format!("unknown query setting {other:?}"))),
        }
    }
}

impl std::fmt::Display for QuerySetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QuerySetting::Inductive => "inductive",
            QuerySetting::Transductive => "transductive",
            QuerySetting::Hybrid => "hybrid",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub queries: Vec<NodeSet>,
    /// Index of the community each query was drawn from.
    pub sources: Option<Vec<usize>>,
    pub setting: QuerySetting,
}

impl QuerySpec {
    /// `# setting <name>` header, then `ids | source` lines (`-` when the
    /// source is unknown).
    pub fn to_text(&self) -> String {
        let mut out = format!("# setting {}\n", self.setting);
        for (i, q) in self.queries.iter().enumerate() {
            let src = self
                .sources
                .as_ref()
                .map_or("-".to_string(), |s| s[i].to_string());
            out.push_str(&format!("{q} | {src}\n"));
        }
        out
    }

    /// Also accepts bare lines of comma- or space-separated ids.
    pub fn parse(text: &str) -> Result<Self> {
        let mut setting = QuerySetting::default();
        let mut queries = Vec::new();
        let mut sources = Vec::new();
        let mut all_sourced = true;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# setting") {
                setting = rest.trim().parse()?;
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (ids, src) = match line.split_once('|') {
                Some((a, b)) => (a, Some(b.trim())),
                None => (line, None),
            };
            let ids = parse_ids(ids.split(|c: char| c == ',' || c.is_whitespace()), idx + 1)?;
            if ids.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "empty query".into(),
                });
            }
            queries.push(NodeSet::new(ids));
            match src.filter(|s| *s != "-") {
                Some(s) => sources.push(s.parse::<usize>().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: format!("invalid community index {s:?}"),
                })?),
                None => all_sourced = false,
            }
        }
        Ok(QuerySpec {
            queries,
            sources: all_sourced.then_some(sources),
            setting,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for QueryCounts {
    fn default() -> Self {
        QueryCounts {
            train: 150,
            val: 100,
            test: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuerySplit {
    pub train: QuerySpec,
    pub val: QuerySpec,
    pub test: QuerySpec,
}

fn draw_queries(
    communities: &[NodeSet],
    pool: &[usize],
    count: usize,
    setting: QuerySetting,
    rng: &mut ChaCha8Rng,
) -> QuerySpec {
    let mut queries = Vec::with_capacity(count);
    let mut sources = Vec::with_capacity(count);
    for _ in 0..count {
        let src = pool[rng.gen_range(0..pool.len())];
        let members = communities[src].ids();
        let size = rng.gen_range(1..=members.len().min(3));
        let picked = members.iter().copied().choose_multiple(rng, size);
        queries.push(NodeSet::new(picked));
        sources.push(src);
    }
    QuerySpec {
        queries,
        sources: Some(sources),
        setting,
    }
}

/// Draw train/validation/test queries of 1–3 nodes from ground-truth
/// communities. Inductive splits the communities about evenly and takes
/// test queries from the half unseen by train/validation; hybrid takes
/// train/validation from the first half and test from all communities.
pub fn generate_queries(
    communities: &[NodeSet],
    setting: QuerySetting,
    counts: QueryCounts,
    seed: u64,
) -> Result<QuerySplit> {
    let usable: Vec<usize> = (0..communities.len())
        .filter(|&i| !communities[i].is_empty())
        .collect();
    let needed = if setting == QuerySetting::Transductive { 1 } else { 2 };
    if usable.len() < needed {
        return Err(Error::domain(format!(
            "{setting} queries need at least {needed} non-empty communities, found {}",
            usable.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (first, second) = match setting {
        QuerySetting::Transductive => (usable.clone(), usable.clone()),
        _ => {
            let mut shuffled = usable.clone();
            shuffled.shuffle(&mut rng);
            let half = shuffled.len().div_ceil(2);
            let (a, b) = shuffled.split_at(half);
            let mut a = a.to_vec();
            a.sort_unstable();
            let mut b = b.to_vec();
            b.sort_unstable();
            match setting {
                QuerySetting::Inductive => (a, b),
                _ => (a, usable.clone()),
            }
        }
    };
    Ok(QuerySplit {
        train: draw_queries(communities, &first, counts.train, setting, &mut rng),
        val: draw_queries(communities, &first, counts.val, setting, &mut rng),
        test: draw_queries(communities, &second, counts.test, setting, &mut rng),
    })
}

/// Ground truth for a query: the first community containing every query
/// node, else the one with the largest overlap (first on ties).
pub fn truth_for(query: &NodeSet, communities: &[NodeSet]) -> Option<usize> {
    if let Some(i) = communities.iter().position(|c| query.is_subset(c)) {
        return Some(i);
    }
    communities
        .iter()
        .enumerate()
        .map(|(i, c)| (c.intersection_len(query), i))
        .filter(|(k, _)| *k > 0)
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, i)| i)
}

/// `node_id,z_node_0..,z_com_0..`, one row per node.
pub fn embeddings_to_csv(emb: &[EmbeddingPair]) -> String {
    let dn = emb.first().map_or(0, |e| e.z_node.len());
    let dc = emb.first().map_or(0, |e| e.z_com.len());
    let mut out = String::from("node_id");
    for i in 0..dn {
        out.push_str(&format!(",z_node_{i}"));
    }
    for i in 0..dc {
        out.push_str(&format!(",z_com_{i}"));
    }
    out.push('\n');
    for (v, e) in emb.iter().enumerate() {
        out.push_str(&v.to_string());
        for x in e.z_node.iter().chain(e.z_com.iter()) {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

pub fn embeddings_from_csv(text: &str) -> Result<Vec<EmbeddingPair>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::domain("empty embeddings file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let dn = cols.iter().filter(|c| c.starts_with("z_node_")).count();
    let dc = cols.iter().filter(|c| c.starts_with("z_com_")).count();
    if cols.first() != Some(&"node_id") || cols.len() != 1 + dn + dc {
        return Err(Error::Parse {
            line: 1,
            msg: "expected header node_id,z_node_*,z_com_*".into(),
        });
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(bad(format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        if fields[0].trim().parse::<usize>().ok() != Some(out.len()) {
            return Err(bad("node ids must be consecutive from 0".into()));
        }
        let vals = fields[1..]
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(format!("invalid value {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingPair {
            z_node: Array1::from(vals[..dn].to_vec()),
            z_com: Array1::from(vals[dn..].to_vec()),
        });
    }
    Ok(out)
}

const EMBEDDINGS_MAGIC: &[u8; 4] = b"EMBD";

/// Binary cache: `EMBD`, node count and width as u64, then each node's
/// `z_node` and `z_com` as little-endian f64.
pub fn embeddings_to_bytes(emb: &[EmbeddingPair]) -> Vec<u8> {
    let width = emb.first().map_or(0, |e| e.z_node.len());
    let mut out = EMBEDDINGS_MAGIC.to_vec();
    out.extend_from_slice(&(emb.len() as u64).to_le_bytes());
    out.extend_from_slice(&(width as u64).to_le_bytes());
    for e in emb {
        for x in e.z_node.iter().chain(e.z_com.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<Vec<EmbeddingPair>> {
    let word = |i: usize| -> Result<u64> {
        bytes
            .get(4 + 8 * i..12 + 8 * i)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Format("truncated embeddings header".into()))
    };
    if bytes.get(..4) != Some(EMBEDDINGS_MAGIC.as_slice()) {
        return Err(Error::Format("not an embeddings cache".into()));
    }
    let (n, w) = (word(0)? as usize, word(1)? as usize);
    let body = &bytes[20..];
    if body.len() != n * 2 * w * 8 {
        return Err(Error::Format("embeddings cache size mismatch".into()));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok((0..n)
        .map(|_| EmbeddingPair {
            z_node: vals.by_ref().take(w).collect(),
            z_com: vals.by_ref().take(w).collect(),
        })
        .collect())
}

/// Everything `run` needs. Any field can be set from `key=value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub graph: PathBuf,
    pub features: Option<PathBuf>,
    pub communities: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Explicit query; overrides `queries` and generated queries.
    pub query: Option<NodeSet>,
    pub queries: Option<PathBuf>,
    pub setting: QuerySetting,
    pub counts: QueryCounts,
    pub train: TrainConfig,
    pub esg: EsgConfig,
    pub similarity: Similarity,
    pub method: SearchMethod,
    pub seed: u64,
    /// Reuse a persisted model and embeddings instead of recomputing them.
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: PathBuf::new(),
            features: None,
            communities: None,
            model: None,
            out_dir: PathBuf::from("out"),
            query: None,
            queries: None,
            setting: QuerySetting::default(),
            counts: QueryCounts::default(),
            train: TrainConfig::default(),
            esg: EsgConfig::default(),
            similarity: Similarity::default(),
            method: SearchMethod::default(),
            seed: 0,
            resume: false,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::domain(format!("invalid value {value:?} for {key}")))
}

pub fn parse_node_list(s: &str) -> Result<NodeSet> {
    let ids = parse_ids(s.split(|c: char| c == ',' || c.is_whitespace()), 1)?;
    if ids.is_empty() {
        return Err(Error::domain("empty node list"));
    }
    Ok(NodeSet::new(ids))
}

/// Parse `key=value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            msg: "expected key=value".into(),
        })?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let t = &mut self.train;
        match key.as_str() {
            "graph" => self.graph = value.into(),
            "features" => self.features = Some(value.into()),
            "communities" => self.communities = Some(value.into()),
            "model" => self.model = Some(value.into()),
            "out" | "out_dir" => self.out_dir = value.into(),
            "query" => self.query = Some(parse_node_list(value)?),
            "queries" => self.queries = Some(value.into()),
            "setting" => self.setting = value.parse()?,
            "train_queries" => self.counts.train = parse_value(&key, value)?,
            "val_queries" => self.counts.val = parse_value(&key, value)?,
            "test_queries" => self.counts.test = parse_value(&key, value)?,
            "epochs" => t.epochs = parse_value(&key, value)?,
            "batch_size" => t.batch_size = Some(parse_value(&key, value)?),
            "lr" | "learning_rate" => t.learning_rate = parse_value(&key, value)?,
            "alpha" => t.alpha = parse_value(&key, value)?,
            "margin" => t.margin = parse_value(&key, value)?,
            "dropout" => t.dropout = parse_value(&key, value)?,
            "max_hops" => t.max_hops = parse_value(&key, value)?,
            "patience" => t.patience = parse_value(&key, value)?,
            "min_delta" => t.min_delta = parse_value(&key, value)?,
            "model_dim" => t.model_dim = parse_value(&key, value)?,
            "heads" => t.heads = parse_value(&key, value)?,
            "layers" => t.layers = parse_value(&key, value)?,
            "attention_scale" => t.attention_scale = parse_value(&key, value)?,
            "triplet_convention" => {
                t.triplet = match value.to_ascii_lowercase().as_str() {
                    "reversed" => TripletConvention::Reversed,
                    "standard" => TripletConvention::Standard,
                    _ => return Err(Error::domain(format!("unknown triplet convention {value:?}"))),
                }
            }
            "frozen" => {
                t.frozen = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "tau" => self.esg.tau = parse_value(&key, value)?,
            "max_size" => self.esg.max_size = Some(parse_value(&key, value)?),
            "similarity" => self.similarity = value.parse()?,
            "method" => self.method = value.parse()?,
            "seed" => {
                self.seed = parse_value(&key, value)?;
                t.seed = self.seed;
            }
            "resume" => self.resume = parse_value(&key, value)?,
            other => return Err(Error::domain(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_config_text(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("model.bin"))
    }
}

/// Score and search one query.
pub fn search_query(
    emb: &[EmbeddingPair],
    g: &Graph,
    query: &NodeSet,
    similarity: Similarity,
    method: SearchMethod,
    esg: &EsgConfig,
) -> Result<Community> {
    let scores = compute_scores(emb, query, similarity)?;
    match method {
        SearchMethod::Local => local_search(&scores, g, query, esg),
        SearchMethod::Global => global_search(&scores, g, query, esg),
        SearchMethod::Oracle => oracle_search(&scores, g, query, esg.tau),
    }
}

pub fn communities_to_text(found: &[Community]) -> String {
    found.iter().map(|c| c.to_line() + "\n").collect()
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// `None` when a persisted model was reused.
    pub log: Option<TrainLog>,
    pub queries: Vec<NodeSet>,
    pub found: Vec<Community>,
    pub report: Option<EvalReport>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(format!("stage {name}")))
}

/// Pretrain, persist, embed every node, then score and search each test
/// query. Artifacts in `out_dir`: `model.bin`, `model.ckpt`,
/// `train_log.csv`, `embeddings.csv`, `embeddings.bin`, generated query
/// files, `communities.txt` and, with ground truth, `report.csv`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let out = &cfg.out_dir;
    let g = stage("load", read_graph(&cfg.graph))?;
    let x = stage("load", read_features(cfg.features.as_deref(), g.node_count()))?;
    let truth = match &cfg.communities {
        Some(p) => Some(stage("load", read_communities(p))?),
        None => None,
    };

    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    let model_path = cfg.model_path();
    let (params, log) = if cfg.resume && model_path.exists() {
        (stage("pretrain", ModelParams::load(&model_path))?, None)
    } else {
        let trained = stage("pretrain", pretrain(&g, &x, &train_cfg))?;
        stage("pretrain", write_file(&model_path, trained.params.to_bytes()))?;
        stage(
            "pretrain",
            write_file(&out.join("model.ckpt"), checkpoint_bytes(&trained.params, &trained.optimizer)),
        )?;
        stage("pretrain", write_file(&out.join("train_log.csv"), trained.log.to_csv()))?;
        (trained.params, Some(trained.log))
    };

    let cache = out.join("embeddings.bin");
    let cached = if cfg.resume && log.is_none() && cache.exists() {
        let bytes = fs::read(&cache).map_err(|e| Error::io(&cache, e))?;
        embeddings_from_bytes(&bytes)
            .ok()
            .filter(|e| e.len() == g.node_count())
    } else {
        None
    };
    let emb = match cached {
        Some(e) => e,
        None => {
            let e = stage(
                "embed",
                encode_batch(&params, &g, &x, train_cfg.max_hops, &NodeSet::full(g.node_count())),
            )?;
            stage("embed", write_file(&out.join("embeddings.csv"), embeddings_to_csv(&e)))?;
            stage("embed", write_file(&cache, embeddings_to_bytes(&e)))?;
            e
        }
    };

    let queries = if let Some(q) = &cfg.query {
        vec![q.clone()]
    } else if let Some(p) = &cfg.queries {
        stage("queries", read_text(p).and_then(|t| QuerySpec::parse(&t)))?.queries
    } else {
        let communities = truth
            .as_ref()
            .ok_or_else(|| Error::domain("stage queries: no query, query file or communities given"))?;
        let split = stage(
            "queries",
            generate_queries(communities, cfg.setting, cfg.counts, cfg.seed),
        )?;
        for (name, spec) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
            stage("queries", write_file(&out.join(format!("queries_{name}.txt")), spec.to_text()))?;
        }
        split.test.queries
    };

    let found = stage(
        "search",
        queries
            .par_iter()
            .map(|q| search_query(&emb, &g, q, cfg.similarity, cfg.method, &cfg.esg))
            .collect::<Result<Vec<_>>>(),
    )?;
    stage("search", write_file(&out.join("communities.txt"), communities_to_text(&found)))?;

    // Queries without any ground-truth community are left out of the report.
    let report = match &truth {
        Some(communities) => {
            let (mut preds, mut truths) = (Vec::new(), Vec::new());
            for (q, c) in queries.iter().zip(&found) {
                if let Some(i) = truth_for(q, communities) {
                    preds.push(c.nodes.clone());
                    truths.push(communities[i].clone());
                }
            }
            let report = stage("eval", evaluate(&preds, &truths, g.node_count()))?;
            stage("eval", write_file(&out.join("report.csv"), report.to_csv()))?;
            Some(report)
        }
        None => None,
    };

    Ok(PipelineOutput {
        log,
        queries,
        found,
        report,
    })
}
