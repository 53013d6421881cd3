use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commsearch::graph::NodeSet;
use commsearch::identify::{Community, SearchMethod};
use commsearch::io::{
    communities_to_text, embeddings_from_bytes, embeddings_from_csv, embeddings_to_bytes, embeddings_to_csv,
    generate_queries, read_communities, read_features, read_graph, read_text, run_pipeline, truth_for, write_file, RunConfig,
};
use commsearch::identify::{global_search, local_search, oracle_search};
use commsearch::metrics::evaluate;
use commsearch::model::{encode_batch, EmbeddingPair, ModelParams};
use commsearch::sampler::sample_augmented;
use commsearch::scoring::{compute_scores, ScoreVector};
use commsearch::train::{checkpoint_bytes, pretrain};
use commsearch::Error;

#[derive(Parser)]
#[command(name = "commsearch", version, about = "Label-free community search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

/// Settings shared by every command. Each one can also come from the
/// `--config` file; flags given on the command line win.
#[derive(Args, Default)]
struct Opts {
    /// key=value file setting any of the flags below
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    graph: Option<String>,
    #[arg(long, global = true)]
    features: Option<String>,
    #[arg(long, global = true)]
    communities: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<String>,
    /// Comma-separated query node ids
    #[arg(long, global = true)]
    query: Option<String>,
    /// Query file, one query per line
    #[arg(long, global = true)]
    queries: Option<String>,
    /// inductive, transductive or hybrid
    #[arg(long, global = true)]
    setting: Option<String>,
    #[arg(long, global = true)]
    train_queries: Option<String>,
    #[arg(long, global = true)]
    val_queries: Option<String>,
    #[arg(long, global = true)]
    test_queries: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    margin: Option<String>,
    #[arg(long, global = true)]
    dropout: Option<String>,
    #[arg(long, global = true)]
    max_hops: Option<String>,
    #[arg(long, global = true)]
    patience: Option<String>,
    #[arg(long, global = true)]
    min_delta: Option<String>,
    #[arg(long, global = true)]
    model_dim: Option<String>,
    #[arg(long, global = true)]
    heads: Option<String>,
    #[arg(long, global = true)]
    layers: Option<String>,
    /// per_head or model_width
    #[arg(long, global = true)]
    attention_scale: Option<String>,
    /// reversed (default) or standard
    #[arg(long, global = true)]
    triplet_convention: Option<String>,
    /// Comma-separated tensor-name prefixes to keep fixed
    #[arg(long, global = true)]
    frozen: Option<String>,
    #[arg(long, global = true)]
    tau: Option<String>,
    #[arg(long, global = true)]
    max_size: Option<String>,
    /// cosine, l1 or l2
    #[arg(long, global = true)]
    similarity: Option<String>,
    /// local, global or oracle
    #[arg(long, global = true)]
    method: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Reuse the persisted model and embeddings
    #[arg(long, global = true)]
    resume: bool,
}

impl Opts {
    fn pairs(&self) -> Vec<(&'static str, &str)> {
        let fields: [(&'static str, &Option<String>); 31] = [
            ("graph", &self.graph),
            ("features", &self.features),
            ("communities", &self.communities),
            ("model", &self.model),
            ("out", &self.out),
            ("query", &self.query),
            ("queries", &self.queries),
            ("setting", &self.setting),
            ("train_queries", &self.train_queries),
            ("val_queries", &self.val_queries),
            ("test_queries", &self.test_queries),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("alpha", &self.alpha),
            ("margin", &self.margin),
            ("dropout", &self.dropout),
            ("max_hops", &self.max_hops),
            ("patience", &self.patience),
            ("min_delta", &self.min_delta),
            ("model_dim", &self.model_dim),
            ("heads", &self.heads),
            ("layers", &self.layers),
            ("attention_scale", &self.attention_scale),
            ("triplet_convention", &self.triplet_convention),
            ("frozen", &self.frozen),
            ("tau", &self.tau),
            ("max_size", &self.max_size),
            ("similarity", &self.similarity),
            ("method", &self.method),
            ("seed", &self.seed),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    fn run_config(&self) -> Result<RunConfig, Failure> {
        let usage = |e: Error| Failure::Usage(e.to_string());
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&read_text(path)?).map_err(usage)?;
        }
        for (k, v) in self.pairs() {
            cfg.set(k, v).map_err(usage)?;
        }
        cfg.resume |= self.resume;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the encoder and write model.bin, model.ckpt and train_log.csv
    Pretrain,
    /// Encode every node with a trained model
    Embed,
    /// Score every node against the query
    Score {
        /// Embeddings as CSV or binary cache
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Find the query's community with local or global search
    Search {
        #[command(flatten)]
        input: ScoreInput,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exhaustive search on graphs of at most 20 nodes
    Oracle {
        #[command(flatten)]
        input: ScoreInput,
    },
    /// F1, NMI and Jaccard of found communities against ground truth
    Eval {
        /// communities.txt as written by search or run
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Draw train, validation and test queries from ground truth
    GenQueries,
    /// Pre-train, embed, search every query and evaluate
    Run,
    /// Print the augmented subgraph chosen for a node
    Sample {
        #[arg(long)]
        center: usize,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScoreInput {
    /// Scores CSV (node_id,score)
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Embeddings to score against the query
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Error> {
    match output {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingPair>, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"EMBD") {
        embeddings_from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::domain("embeddings file is not UTF-8"))?;
        embeddings_from_csv(&text)
    }
    .map_err(|e| e.context(path.display()))
}

fn need_query(cfg: &RunConfig) -> Result<NodeSet, Failure> {
    cfg.query
        .clone()
        .ok_or_else(|| Failure::Usage("--query is required".into()))
}

fn need_graph(cfg: &RunConfig) -> Result<(), Failure> {
    if cfg.graph.as_os_str().is_empty() {
        return Err(Failure::Usage("--graph is required".into()));
    }
    Ok(())
}

fn scores_for(input: &ScoreInput, cfg: &RunConfig, query: &NodeSet) -> Result<ScoreVector, Error> {
    match (&input.scores, &input.embeddings) {
        (Some(p), _) => ScoreVector::parse_csv(&read_text(p)?, query.clone()).map_err(|e| e.context(p.display())),
        (None, Some(p)) => compute_scores(&load_embeddings(p)?, query, cfg.similarity),
        (None, None) => unreachable!("clap enforces one score source"),
    }
}

fn execute(command: &Command, cfg: &RunConfig) -> Result<(), Failure> {
    let out = &cfg.out_dir;
    match command {
        Command::Pretrain => {
            need_graph(cfg)?;
            let g = read_graph(&cfg.graph)?;
            let x = read_features(cfg.features.as_deref(), g.node_count())?;
            let trained = pretrain(&g, &x, &cfg.train)?;
            write_file(&cfg.model_path(), trained.params.to_bytes())?;
            write_file(&out.join("model.ckpt"), checkpoint_bytes(&trained.params, &trained.optimizer))?;
            write_file(&out.join("train_log.csv"), trained.log.to_csv())?;
            if let (Some(first), Some(last)) = (trained.log.epochs.first(), trained.log.epochs.last()) {
                eprintln!(
                    "trained {} epochs, loss {:.6} -> {:.6}",
                    trained.log.epochs.len(),
                    first.total,
                    last.total
                );
            }
        }
        Command::Embed => {
            need_graph(cfg)?;
            let g = read_graph(&cfg.graph)?;
            let x = read_features(cfg.features.as_deref(), g.node_count())?;
            let params = ModelParams::load(&cfg.model_path())?;
            let emb = encode_batch(&params, &g, &x, params.dims.max_hops, &NodeSet::full(g.node_count()))?;
            write_file(&out.join("embeddings.csv"), embeddings_to_csv(&emb))?;
            write_file(&out.join("embeddings.bin"), embeddings_to_bytes(&emb))?;
        }
        Command::Score { embeddings, output } => {
            let query = need_query(cfg)?;
            let scores = compute_scores(&load_embeddings(embeddings)?, &query, cfg.similarity)?;
            emit(output.as_deref(), &scores.to_csv())?;
        }
        Command::Search { input, output } => {
            need_graph(cfg)?;
            let query = need_query(cfg)?;
            let g = read_graph(&cfg.graph)?;
            let scores = scores_for(input, cfg, &query)?;
            let found = match cfg.method {
                SearchMethod::Local => local_search(&scores, &g, &query, &cfg.esg)?,
                SearchMethod::Global => global_search(&scores, &g, &query, &cfg.esg)?,
                SearchMethod::Oracle => oracle_search(&scores, &g, &query, cfg.esg.tau)?,
            };
            emit(output.as_deref(), &(found.to_line() + "\n"))?;
        }
        Command::Oracle { input } => {
            need_graph(cfg)?;
            let query = need_query(cfg)?;
            let g = read_graph(&cfg.graph)?;
            let scores = scores_for(input, cfg, &query)?;
            println!("{}", oracle_search(&scores, &g, &query, cfg.esg.tau)?.to_line());
        }
        Command::Eval { pred, output } => {
            need_graph(cfg)?;
            let truth_path = cfg
                .communities
                .as_ref()
                .ok_or_else(|| Failure::Usage("--communities is required".into()))?;
            let g = read_graph(&cfg.graph)?;
            let truth = read_communities(truth_path)?;
            let found = read_text(pred)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(Community::parse_line)
                .collect::<Result<Vec<_>, _>>()?;
            let (mut preds, mut truths) = (Vec::new(), Vec::new());
            for c in found {
                if let Some(i) = truth_for(&c.query, &truth) {
                    truths.push(truth[i].clone());
                    preds.push(c.nodes);
                }
            }
            emit(output.as_deref(), &evaluate(&preds, &truths, g.node_count())?.to_csv())?;
        }
        Command::GenQueries => {
            let path = cfg
                .communities
                .as_ref()
                .ok_or_else(|| Failure::Usage("--communities is required".into()))?;
            let split = generate_queries(&read_communities(path)?, cfg.setting, cfg.counts, cfg.seed)?;
            for (name, spec) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                write_file(&out.join(format!("queries_{name}.txt")), spec.to_text())?;
            }
        }
        Command::Run => {
            need_graph(cfg)?;
            let result = run_pipeline(cfg)?;
            if let Some(report) = &result.report {
                let m = report.mean();
                eprintln!(
                    "{} queries: f1 {:.4} nmi {:.4} jac {:.4}",
                    result.found.len(),
                    m.f1,
                    m.nmi,
                    m.jaccard
                );
            }
            if cfg.query.is_some() {
                print!("{}", communities_to_text(&result.found));
            }
        }
        Command::Sample { center } => {
            need_graph(cfg)?;
            let g = read_graph(&cfg.graph)?;
            let sub = sample_augmented(&g, *center, cfg.train.max_hops)?;
            println!("center {}", sub.center);
            println!("k_star {}", sub.k_star);
            println!("conductance {}", sub.conductance);
            println!("nodes {}", sub.nodes);
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("COMMSEARCH_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| Failure::Usage(format!("COMMSEARCH_THREADS={value:?} is not a number")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads()
        .and_then(|_| cli.opts.run_config())
        .and_then(|cfg| execute(&cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
