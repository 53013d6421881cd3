//! Self-supervised pre-training: the personalization and link losses, their
//! gradients through the encoder, and the batched training loop.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, NodeSet};
use crate::model::{
    context_tokens, forward, AttentionScale, ByteReader, Dropout, EmbeddingPair, HopTokenSequence,
    ModelDims, ModelParams, ParamVars,
};
use crate::sampler::DEFAULT_MAX_HOPS;
use crate::tape::{sigmoid, Mat, Tape};

/// Sign convention of the personalization term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TripletConvention {
    /// `-max(σ(pos) - σ(neg) + ε, 0)`, summed over the batch.
    #[default]
    Reversed,
    /// `max(σ(neg) - σ(pos) + ε, 0)`.
    Standard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` means `min(|V|, 4000)`.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub alpha: f64,
    pub margin: f64,
    pub dropout: f64,
    pub max_hops: usize,
    pub seed: u64,
    pub patience: usize,
    pub min_delta: f64,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub attention_scale: AttentionScale,
    pub triplet: TripletConvention,
    /// Tensor-name prefixes excluded from gradient updates.
    pub frozen: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: None,
            learning_rate: 1e-3,
            alpha: 0.1,
            margin: 0.5,
            dropout: 0.1,
            max_hops: DEFAULT_MAX_HOPS,
            seed: 0,
            patience: 10,
            min_delta: 1e-4,
            model_dim: 64,
            heads: 8,
            layers: 1,
            attention_scale: AttentionScale::PerHead,
            triplet: TripletConvention::Reversed,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::domain(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.margin > 0.0) {
            return Err(Error::domain("margin must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::domain("dropout must lie in [0, 1)"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::domain("batch size must be positive"));
        }
        if self.max_hops == 0 {
            return Err(Error::domain("max hops must be at least 1"));
        }
        Ok(())
    }

    pub fn model_dims(&self, input_dim: usize) -> ModelDims {
        let mut dims = ModelDims::new(input_dim, self.model_dim, self.layers, self.heads, self.max_hops);
        dims.attention_scale = self.attention_scale;
        dims
    }

    pub fn effective_batch_size(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(n.min(4000)).max(1)
    }

    fn trainable_mask(&self, params: &ModelParams) -> Vec<bool> {
        params
            .tensor_names()
            .iter()
            .map(|name| !self.frozen.iter().any(|p| name.starts_with(p.as_str())))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_k: f64,
    pub total: f64,
    pub batch_size: usize,
}

/// Gradient of the loss with respect to each learnable tensor, aligned with
/// [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}

/// Batch personalization loss, evaluated directly from embeddings.
pub fn personalization_loss(pairs: &[EmbeddingPair], margin: f64, convention: TripletConvention) -> f64 {
    let b = pairs.len() as f64;
    let mut total = 0.0;
    for v in pairs {
        let pos = sigmoid(v.z_node.dot(&v.z_com));
        for u in pairs {
            let neg = sigmoid(v.z_node.dot(&u.z_com));
            total += match convention {
                TripletConvention::Reversed => -(pos - neg + margin).max(0.0),
                TripletConvention::Standard => (neg - pos + margin).max(0.0),
            };
        }
    }
    total / (b * b)
}

/// Batch link loss: adjacent pairs contribute `-z_u·z_v`, all other pairs
/// (including `u = v`) contribute `+z_u·z_v`.
pub fn link_loss(pairs: &[EmbeddingPair], batch: &[usize], g: &Graph) -> f64 {
    let b = pairs.len() as f64;
    let mut total = 0.0;
    for (i, zv) in pairs.iter().enumerate() {
        for (j, zu) in pairs.iter().enumerate() {
            let dot = zu.z_node.dot(&zv.z_node);
            total += if g.has_edge(batch[j], batch[i]) { -dot } else { dot };
        }
    }
    total / (b * b)
}

struct BatchOutput {
    loss: LossBreakdown,
    grads: Gradients,
}

fn batch_loss(
    params: &ModelParams,
    tokens: &[&HopTokenSequence],
    g: &Graph,
    cfg: &TrainConfig,
    trainable: &[bool],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<BatchOutput> {
    let b = tokens.len();
    if b == 0 {
        return Err(Error::domain("empty batch"));
    }
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, Some(trainable));
    let mut nodes = Vec::with_capacity(b);
    let mut coms = Vec::with_capacity(b);
    for seq in tokens {
        let out = forward(&mut tape, params, &vars, seq, dropout.as_deref_mut())
            .map_err(|e| e.context(format!("node {}", seq.center)))?;
        nodes.push(out.z_node);
        coms.push(out.z_com);
    }
    let z_node = tape.concat_rows(&nodes);
    let z_com = tape.concat_rows(&coms);
    let norm = 1.0 / (b * b) as f64;

    // scores[v, u] = z_v^node · z_u^com
    let com_t = tape.transpose(z_com);
    let scores = tape.matmul(z_node, com_t);
    let sig = tape.sigmoid(scores);
    let pos = tape.diag(sig);
    let hinge = match cfg.triplet {
        TripletConvention::Reversed => {
            let neg = tape.scale(sig, -1.0);
            tape.add_broadcast(neg, pos)
        }
        TripletConvention::Standard => {
            let neg_pos = tape.scale(pos, -1.0);
            tape.add_broadcast(sig, neg_pos)
        }
    };
    let hinge = tape.add_scalar(hinge, cfg.margin);
    let hinge = tape.relu(hinge);
    let hinge_sum = tape.sum(hinge);
    let l_p = match cfg.triplet {
        TripletConvention::Reversed => tape.scale(hinge_sum, -norm),
        TripletConvention::Standard => tape.scale(hinge_sum, norm),
    };

    let node_t = tape.transpose(z_node);
    let gram = tape.matmul(z_node, node_t);
    let signs = Array2::from_shape_fn((b, b), |(i, j)| {
        if g.has_edge(tokens[i].center, tokens[j].center) {
            -1.0
        } else {
            1.0
        }
    });
    let link = tape.mul_const(gram, signs);
    let link = tape.sum(link);
    let l_k = tape.scale(link, norm);

    let weighted = tape.scale(l_k, cfg.alpha);
    let total = tape.add(l_p, weighted);

    let loss = LossBreakdown {
        l_p: tape.scalar(l_p),
        l_k: tape.scalar(l_k),
        total: tape.scalar(total),
        batch_size: b,
    };
    if !loss.total.is_finite() {
        return Err(Error::Numeric("loss".into()));
    }

    let mut adj = tape.backward(total);
    let tensors = params
        .tensors()
        .iter()
        .zip(&vars.0)
        .map(|(t, v)| adj.take(*v).unwrap_or_else(|| Array2::zeros(t.raw_dim())))
        .collect();
    Ok(BatchOutput {
        loss,
        grads: Gradients {
            names: params.tensor_names(),
            tensors,
        },
    })
}

/// Loss over `batch` and its exact gradient with respect to every learnable
/// tensor. Dropout is not applied. Tensors matching `cfg.frozen` get zero
/// gradient.
pub fn loss_and_grad(
    params: &ModelParams,
    g: &Graph,
    x: &FeatureMatrix,
    batch: &NodeSet,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    batch.check_bounds(g.node_count())?;
    let tokens = batch
        .iter()
        .map(|v| context_tokens(g, x, v, cfg.max_hops))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&HopTokenSequence> = tokens.iter().collect();
    let mask = cfg.trainable_mask(params);
    let out = batch_loss(params, &refs, g, cfg, &mask, None)?;
    Ok((out.loss, out.grads))
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Mat>,
    pub second: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64) -> Self {
        let zeros: Vec<Mat> = params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients, trainable: &[bool]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let g = &grads.tensors[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_p: f64,
    pub l_k: f64,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_p,l_k,total,seconds\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                r.epoch, r.l_p, r.l_k, r.total, r.seconds
            ));
        }
        out
    }
}

/// Parameters, optimizer state and log after pre-training.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub log: TrainLog,
}

/// Split `0..n` into disjoint batches after a seeded shuffle.
pub fn partition_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run the full pre-training loop.
pub fn pretrain(g: &Graph, x: &FeatureMatrix, cfg: &TrainConfig) -> Result<Pretrained> {
    cfg.validate()?;
    if x.rows() != g.node_count() {
        return Err(Error::dim(format!("{} feature rows", g.node_count()), x.rows()));
    }
    let mut init_rng = rng_stream(cfg.seed, 0);
    let mut params = ModelParams::init(cfg.model_dims(x.cols()), &mut init_rng)?;
    let mut optimizer = Adam::new(&params, cfg.learning_rate);
    let mut log = TrainLog::default();
    if cfg.epochs == 0 || g.node_count() == 0 {
        return Ok(Pretrained {
            params,
            optimizer,
            log,
        });
    }

    let mut batch_rng = rng_stream(cfg.seed, 1);
    let batches = partition_batches(g.node_count(), cfg.effective_batch_size(g.node_count()), &mut batch_rng);
    let tokens = (0..g.node_count())
        .map(|v| context_tokens(g, x, v, cfg.max_hops))
        .collect::<Result<Vec<_>>>()?;
    let trainable = cfg.trainable_mask(&params);
    let mut dropout_rng = rng_stream(cfg.seed, 2);

    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (mut l_p, mut l_k, mut total) = (0.0, 0.0, 0.0);
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<&HopTokenSequence> = batch.iter().map(|&v| &tokens[v]).collect();
            let mut drop = Dropout {
                rng: &mut dropout_rng,
                rate: cfg.dropout,
            };
            let out = batch_loss(&params, &refs, g, cfg, &trainable, Some(&mut drop))
                .map_err(|e| e.context(format!("epoch {epoch} batch {bi}")))?;
            optimizer.update(&mut params, &out.grads, &trainable);
            l_p += out.loss.l_p;
            l_k += out.loss.l_k;
            total += out.loss.total;
        }
        let nb = batches.len() as f64;
        let record = EpochRecord {
            epoch,
            l_p: l_p / nb,
            l_k: l_k / nb,
            total: total / nb,
            seconds: start.elapsed().as_secs_f64(),
        };
        log.epochs.push(record);

        if record.total < best - cfg.min_delta {
            best = record.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(Pretrained {
        params,
        optimizer,
        log,
    })
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ADAM";

/// Model bytes followed by the optimizer state: magic `ADAM`, step count,
/// then the first and second moment tensors in canonical order.
pub fn checkpoint_bytes(params: &ModelParams, optimizer: &Adam) -> Vec<u8> {
    let mut out = params.to_bytes();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&optimizer.step.to_le_bytes());
    for h in [
        optimizer.learning_rate,
        optimizer.beta1,
        optimizer.beta2,
        optimizer.eps,
    ] {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for t in optimizer.first.iter().chain(&optimizer.second) {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(ModelParams, Adam)> {
    let (params, used) = ModelParams::from_bytes_prefix(bytes)?;
    let mut r = ByteReader { bytes, pos: used };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("missing optimizer state".into()));
    }
    let step = r.u64()?;
    let mut hyper = [0f64; 4];
    for h in &mut hyper {
        *h = f64::from_bits(r.u64()?);
    }
    let mut adam = Adam::new(&params, hyper[0]);
    adam.beta1 = hyper[1];
    adam.beta2 = hyper[2];
    adam.eps = hyper[3];
    adam.step = step;
    for t in adam.first.iter_mut().chain(adam.second.iter_mut()) {
        r.fill(t)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after optimizer state".into()));
    }
    Ok((params, adam))
}
