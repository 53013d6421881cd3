//! Hop-token transformer encoder.
//!
//! A node's input is the sequence of its propagated features
//! `[x_v, (Âx)_v, ..., (Â^K x)_v]` computed on its augmented subgraph. The
//! sequence is projected to the model width and passed through pre-norm
//! transformer layers (a fixed sinusoidal hop encoding is added at the start
//! of every layer). Row 0 of the output is the node-level representation; an
//! attention readout over rows `1..=K`, conditioned on row 0, gives the
//! community-level representation.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, propagate, FeatureMatrix, Graph, NodeSet};
use crate::sampler::sample_augmented;
use crate::tape::{Mat, Tape, Var};

const MAGIC: &[u8; 4] = b"CSGP";
pub const FORMAT_VERSION: u32 = 1;

/// Divisor applied to query-key products inside each attention head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionScale {
    /// `sqrt(model_dim / heads)`
    #[default]
    PerHead,
    /// `sqrt(model_dim)`
    ModelWidth,
}

impl std::str::FromStr for AttentionScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "per_head" | "per-head" | "head" => Ok(AttentionScale::PerHead),
            "model_width" | "model-width" | "model" => Ok(AttentionScale::ModelWidth),
            other => Err(Error::domain(format!("unknown attention scale {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_hops: usize,
    pub attention_scale: AttentionScale,
}

impl ModelDims {
    /// Feed-forward width defaults to twice the model width.
    pub fn new(input_dim: usize, model_dim: usize, layers: usize, heads: usize, max_hops: usize) -> Self {
        ModelDims {
            input_dim,
            model_dim,
            ffn_dim: 2 * model_dim,
            layers,
            heads,
            max_hops,
            attention_scale: AttentionScale::PerHead,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::domain("model dimensions must be positive"));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::domain(format!(
                "model width {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.max_hops == 0 {
            return Err(Error::domain("max hops must be at least 1"));
        }
        Ok(())
    }

    fn attention_divisor(&self) -> f64 {
        match self.attention_scale {
            AttentionScale::PerHead => (self.head_dim() as f64).sqrt(),
            AttentionScale::ModelWidth => (self.model_dim as f64).sqrt(),
        }
    }

    fn tensors_per_layer(&self) -> usize {
        3 * self.heads + 9
    }

    /// Shapes of the learnable tensors in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let (d, m, f, dh) = (self.input_dim, self.model_dim, self.ffn_dim, self.head_dim());
        let mut shapes = vec![(d, m)];
        for _ in 0..self.layers {
            for _ in 0..self.heads {
                shapes.extend([(m, dh), (m, dh), (m, dh)]);
            }
            shapes.extend([
                (self.heads * dh, m),
                (1, m),
                (1, m),
                (m, f),
                (1, f),
                (f, m),
                (1, m),
                (1, m),
                (1, m),
            ]);
        }
        shapes.push((2 * m, 1));
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    pub query: Mat,
    pub key: Mat,
    pub value: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub heads: Vec<HeadWeights>,
    pub output: Mat,
    pub attn_norm_scale: Mat,
    pub attn_norm_shift: Mat,
    pub ffn_in: Mat,
    pub ffn_in_bias: Mat,
    pub ffn_out: Mat,
    pub ffn_out_bias: Mat,
    pub ffn_norm_scale: Mat,
    pub ffn_norm_shift: Mat,
}

/// All encoder tensors. `pos_enc` is a fixed table and is not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub projection: Mat,
    pub layers: Vec<EncoderLayer>,
    pub readout: Mat,
    pub pos_enc: Mat,
}

/// Standard transformer sinusoid over hop index.
pub fn sinusoidal_table(positions: usize, width: usize) -> Mat {
    Array2::from_shape_fn((positions, width), |(pos, i)| {
        let exponent = (2 * (i / 2)) as f64 / width as f64;
        let angle = pos as f64 / 10_000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm scales.
    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        dims.validate()?;
        let (d, m, f, dh) = (dims.input_dim, dims.model_dim, dims.ffn_dim, dims.head_dim());
        let projection = glorot(rng, d, m);
        let layers = (0..dims.layers)
            .map(|_| EncoderLayer {
                heads: (0..dims.heads)
                    .map(|_| HeadWeights {
                        query: glorot(rng, m, dh),
                        key: glorot(rng, m, dh),
                        value: glorot(rng, m, dh),
                    })
                    .collect(),
                output: glorot(rng, dims.heads * dh, m),
                attn_norm_scale: Array2::ones((1, m)),
                attn_norm_shift: Array2::zeros((1, m)),
                ffn_in: glorot(rng, m, f),
                ffn_in_bias: Array2::zeros((1, f)),
                ffn_out: glorot(rng, f, m),
                ffn_out_bias: Array2::zeros((1, m)),
                ffn_norm_scale: Array2::ones((1, m)),
                ffn_norm_shift: Array2::zeros((1, m)),
            })
            .collect();
        let readout = glorot(rng, 2 * m, 1);
        Ok(ModelParams {
            dims,
            projection,
            layers,
            readout,
            pos_enc: sinusoidal_table(dims.max_hops + 1, m),
        })
    }

    /// Learnable tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut out = vec![&self.projection];
        for layer in &self.layers {
            for h in &layer.heads {
                out.extend([&h.query, &h.key, &h.value]);
            }
            out.extend([
                &layer.output,
                &layer.attn_norm_scale,
                &layer.attn_norm_shift,
                &layer.ffn_in,
                &layer.ffn_in_bias,
                &layer.ffn_out,
                &layer.ffn_out_bias,
                &layer.ffn_norm_scale,
                &layer.ffn_norm_shift,
            ]);
        }
        out.push(&self.readout);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.projection];
        for layer in &mut self.layers {
            for h in &mut layer.heads {
                out.extend([&mut h.query, &mut h.key, &mut h.value]);
            }
            out.extend([
                &mut layer.output,
                &mut layer.attn_norm_scale,
                &mut layer.attn_norm_shift,
                &mut layer.ffn_in,
                &mut layer.ffn_in_bias,
                &mut layer.ffn_out,
                &mut layer.ffn_out_bias,
                &mut layer.ffn_norm_scale,
                &mut layer.ffn_norm_shift,
            ]);
        }
        out.push(&mut self.readout);
        out
    }

    /// Names matching [`ModelParams::tensors`], e.g. `layer0.head1.key`.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["projection".to_string()];
        for l in 0..self.dims.layers {
            for h in 0..self.dims.heads {
                for part in ["query", "key", "value"] {
                    out.push(format!("layer{l}.head{h}.{part}"));
                }
            }
            for part in [
                "output",
                "attn_norm.scale",
                "attn_norm.shift",
                "ffn.in",
                "ffn.in_bias",
                "ffn.out",
                "ffn.out_bias",
                "ffn_norm.scale",
                "ffn_norm.shift",
            ] {
                out.push(format!("layer{l}.{part}"));
            }
        }
        out.push("readout".to_string());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Versioned little-endian encoding: magic, version, seven `u32` header
    /// words (input, model, ffn widths, layers, heads, max hops, attention
    /// scale flag), then every learnable tensor followed by the hop-encoding
    /// table, each as row-major `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.dims;
        let mut out = Vec::with_capacity(8 + 28 + 8 * (self.parameter_count() + self.pos_enc.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let scale_flag = match d.attention_scale {
            AttentionScale::PerHead => 0u32,
            AttentionScale::ModelWidth => 1u32,
        };
        for word in [
            d.input_dim as u32,
            d.model_dim as u32,
            d.ffn_dim as u32,
            d.layers as u32,
            d.heads as u32,
            d.max_hops as u32,
            scale_flag,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for t in self.tensors().into_iter().chain(std::iter::once(&self.pos_enc)) {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`ModelParams::to_bytes`]; returns the model and the number
    /// of bytes consumed.
    pub fn from_bytes_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut words = [0usize; 7];
        for w in &mut words {
            *w = r.u32()? as usize;
        }
        let attention_scale = match words[6] {
            0 => AttentionScale::PerHead,
            1 => AttentionScale::ModelWidth,
            other => return Err(Error::Format(format!("unknown attention scale flag {other}"))),
        };
        let dims = ModelDims {
            input_dim: words[0],
            model_dim: words[1],
            ffn_dim: words[2],
            layers: words[3],
            heads: words[4],
            max_hops: words[5],
            attention_scale,
        };
        dims.validate().map_err(|e| Error::Format(e.to_string()))?;
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let mut params = ModelParams::init(dims, &mut rng)?;
        for t in params.tensors_mut() {
            r.fill(t)?;
        }
        r.fill(&mut params.pos_enc)?;
        Ok((params, r.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, used) = Self::from_bytes_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - used)));
        }
        Ok(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated input".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn fill(&mut self, t: &mut Mat) -> Result<()> {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        }
        Ok(())
    }
}

/// Propagated-feature sequence of one node: row `k` is `(Â^k x)_center`.
#[derive(Clone, Debug, PartialEq)]
pub struct HopTokenSequence {
    pub center: usize,
    pub tokens: Mat,
}

impl HopTokenSequence {
    pub fn hops(&self) -> usize {
        self.tokens.nrows() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingPair {
    pub z_node: Array1<f64>,
    pub z_com: Array1<f64>,
}

pub fn build_tokens(g: &Graph, x: &FeatureMatrix, center: usize, k: usize) -> Result<HopTokenSequence> {
    if k == 0 {
        return Err(Error::domain("hop tokens need at least one hop"));
    }
    if center >= g.node_count() {
        return Err(Error::domain(format!("center {center} out of bounds")));
    }
    let hops = propagate(g, x, k)?;
    let mut tokens = Array2::zeros((k + 1, x.cols()));
    for (j, h) in hops.iter().enumerate() {
        tokens.row_mut(j).assign(&h.row(center));
    }
    Ok(HopTokenSequence { center, tokens })
}

/// Tokens of `center` computed on its augmented subgraph.
pub fn context_tokens(g: &Graph, x: &FeatureMatrix, center: usize, k_max: usize) -> Result<HopTokenSequence> {
    let aug = sample_augmented(g, center, k_max)?;
    let sub = induced_subgraph(g, &aug.nodes)?;
    let local_x = x.select_rows(sub.nodes.ids());
    let local_center = sub.local_id(center).expect("ball contains its center");
    let mut seq = build_tokens(&sub.graph, &local_x, local_center, aug.k_star)?;
    seq.center = center;
    Ok(seq)
}

pub(crate) struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub rate: f64,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, v: Var) -> Var {
        if self.rate <= 0.0 {
            return v;
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(v).raw_dim();
        let mask = Array2::from_shape_simple_fn(shape, || {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        tape.mul_const(v, mask)
    }
}

/// Tape handles for every learnable tensor, in canonical order.
pub(crate) struct ParamVars(pub Vec<Var>);

impl ParamVars {
    /// Register `params` on the tape; tensors with `trainable[i] == false`
    /// become constants.
    pub fn register(tape: &mut Tape, params: &ModelParams, trainable: Option<&[bool]>) -> Self {
        let vars = params
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(i, t)| tape.leaf(t.clone(), trainable.map_or(true, |m| m[i])))
            .collect();
        ParamVars(vars)
    }

    fn layer_base(dims: &ModelDims, layer: usize) -> usize {
        1 + layer * dims.tensors_per_layer()
    }
}

pub(crate) struct ForwardOut {
    #[cfg_attr(not(test), allow(dead_code))]
    pub hidden: Var,
    pub z_node: Var,
    pub z_com: Var,
    pub alpha: Var,
}

/// Record the encoder on `tape` for one token sequence.
pub(crate) fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &ParamVars,
    seq: &HopTokenSequence,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<ForwardOut> {
    let dims = &params.dims;
    let (rows, width) = seq.tokens.dim();
    if width != dims.input_dim {
        return Err(Error::dim(format!("{} token columns", dims.input_dim), width));
    }
    if rows < 2 || rows > dims.max_hops + 1 {
        return Err(Error::domain(format!(
            "token sequence of {rows} rows outside 2..={}",
            dims.max_hops + 1
        )));
    }
    let v = &vars.0;
    let hops = rows - 1;
    let m = dims.model_dim;

    let x = tape.constant(seq.tokens.clone());
    let mut h = tape.matmul(x, v[0]);
    if let Some(d) = dropout.as_deref_mut() {
        h = d.apply(tape, h);
    }
    let pos = tape.constant(params.pos_enc.slice(ndarray::s![..rows, ..]).to_owned());
    let inv_scale = 1.0 / dims.attention_divisor();

    for l in 0..dims.layers {
        let base = ParamVars::layer_base(dims, l);
        let after = base + 3 * dims.heads;
        h = tape.add(h, pos);

        let normed = tape.layer_norm(h, v[after + 1], v[after + 2]);
        let mut heads = Vec::with_capacity(dims.heads);
        for i in 0..dims.heads {
            let q = tape.matmul(normed, v[base + 3 * i]);
            let k = tape.matmul(normed, v[base + 3 * i + 1]);
            let val = tape.matmul(normed, v[base + 3 * i + 2]);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scores = tape.scale(scores, inv_scale);
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, val));
        }
        let cat = tape.concat_cols(&heads);
        let mha = tape.matmul(cat, v[after]);
        h = tape.add(mha, h);

        let normed = tape.layer_norm(h, v[after + 7], v[after + 8]);
        let f = tape.matmul(normed, v[after + 3]);
        let f = tape.add_broadcast(f, v[after + 4]);
        let mut f = tape.gelu(f);
        if let Some(d) = dropout.as_deref_mut() {
            f = d.apply(tape, f);
        }
        let f = tape.matmul(f, v[after + 5]);
        let f = tape.add_broadcast(f, v[after + 6]);
        h = tape.add(f, h);

        if tape.value(h).iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("encoder layer {l}")));
        }
    }

    let readout = v[v.len() - 1];
    let center = tape.rows(h, 0, 1);
    let neighborhood = tape.rows(h, 1, hops);
    let w_center = tape.rows(readout, 0, m);
    let w_hop = tape.rows(readout, m, m);
    let hop_logits = tape.matmul(neighborhood, w_hop);
    let center_logit = tape.matmul(center, w_center);
    let logits = tape.add_broadcast(hop_logits, center_logit);
    let logits = tape.transpose(logits);
    let alpha = tape.softmax_rows(logits);
    let z_com = tape.matmul(alpha, neighborhood);
    if tape.value(z_com).iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("readout".into()));
    }
    Ok(ForwardOut {
        hidden: h,
        z_node: center,
        z_com,
        alpha,
    })
}

/// Inference-mode encoding; also returns the readout weights over hops `1..=K`.
pub fn encode_with_readout(params: &ModelParams, seq: &HopTokenSequence) -> Result<(EmbeddingPair, Vec<f64>)> {
    let mut tape = Tape::new();
    let mask = vec![false; params.tensors().len()];
    let vars = ParamVars::register(&mut tape, params, Some(&mask));
    let out = forward(&mut tape, params, &vars, seq, None)?;
    let pair = EmbeddingPair {
        z_node: tape.value(out.z_node).row(0).to_owned(),
        z_com: tape.value(out.z_com).row(0).to_owned(),
    };
    let alpha = tape.value(out.alpha).iter().copied().collect();
    Ok((pair, alpha))
}

pub fn encode(params: &ModelParams, seq: &HopTokenSequence) -> Result<EmbeddingPair> {
    encode_with_readout(params, seq).map(|(pair, _)| pair)
}

/// Encode each center on its own augmented subgraph. Output order matches
/// `centers`.
pub fn encode_batch(
    params: &ModelParams,
    g: &Graph,
    x: &FeatureMatrix,
    k_max: usize,
    centers: &NodeSet,
) -> Result<Vec<EmbeddingPair>> {
    centers.check_bounds(g.node_count())?;
    centers
        .ids()
        .par_iter()
        .map(|&c| {
            let seq = context_tokens(g, x, c, k_max)?;
            encode(params, &seq).map_err(|e| e.context(format!("node {c}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_graph;
    use rand::SeedableRng;

    fn small_params(seed: u64, d: usize, hops: usize) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(ModelDims::new(d, 8, 2, 2, hops), &mut rng).unwrap()
    }

    fn random_seq(seed: u64, rows: usize, d: usize) -> HopTokenSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HopTokenSequence {
            center: 0,
            tokens: Array2::from_shape_fn((rows, d), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn isolated_node_tokens_are_zero_past_hop_zero() {
        let g = Graph::empty(3);
        let x = FeatureMatrix::new(Array2::from_elem((3, 2), 1.5)).unwrap();
        let seq = build_tokens(&g, &x, 1, 3).unwrap();
        assert_eq!(seq.tokens.row(0).to_vec(), vec![1.5, 1.5]);
        assert!(seq.tokens.rows().into_iter().skip(1).all(|r| r.iter().all(|&v| v == 0.0)));
        assert!(build_tokens(&g, &x, 1, 0).is_err());
    }

    #[test]
    fn single_edge_token_is_neighbor_feature() {
        let g = load_graph("0 1".as_bytes(), None).unwrap();
        let x = FeatureMatrix::new(ndarray::array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let seq = build_tokens(&g, &x, 0, 1).unwrap();
        assert_eq!(seq.tokens.row(1).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn readout_weights_are_a_distribution() {
        let params = small_params(3, 3, 5);
        for hops in 1..=5 {
            let (pair, alpha) = encode_with_readout(&params, &random_seq(hops as u64, hops + 1, 3)).unwrap();
            assert_eq!(alpha.len(), hops);
            assert!(alpha.iter().all(|&a| a >= 0.0));
            assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(pair.z_node.len(), 8);
            assert_eq!(pair.z_com.len(), 8);
        }
    }

    #[test]
    fn single_hop_community_is_hop_row() {
        let params = small_params(5, 3, 5);
        let seq = random_seq(9, 2, 3);
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &params, None);
        let out = forward(&mut tape, &params, &vars, &seq, None).unwrap();
        let hidden = tape.value(out.hidden).clone();
        let (pair, alpha) = encode_with_readout(&params, &seq).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(pair.z_com, hidden.row(1).to_owned());
        assert_eq!(pair.z_node, hidden.row(0).to_owned());
    }

    #[test]
    fn rejects_bad_shapes() {
        let params = small_params(1, 3, 2);
        assert!(matches!(encode(&params, &random_seq(1, 3, 4)), Err(Error::Dimension { .. })));
        assert!(encode(&params, &random_seq(1, 1, 3)).is_err());
        assert!(encode(&params, &random_seq(1, 4, 3)).is_err());
    }

    #[test]
    fn bad_head_count_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ModelParams::init(ModelDims::new(3, 10, 1, 4, 5), &mut rng).is_err());
    }

    #[test]
    fn inference_is_deterministic() {
        let params = small_params(7, 3, 5);
        let seq = random_seq(2, 4, 3);
        assert_eq!(encode(&params, &seq).unwrap(), encode(&params, &seq).unwrap());
    }

    #[test]
    fn hop_permutation_with_matching_positions_is_invariant() {
        let params = small_params(11, 3, 5);
        let seq = random_seq(4, 5, 3);
        let base = encode(&params, &seq).unwrap();
        let perm = [0usize, 3, 1, 4, 2];
        let mut permuted = params.clone();
        let mut tokens = seq.tokens.clone();
        for (new, &old) in perm.iter().enumerate() {
            tokens.row_mut(new).assign(&seq.tokens.row(old));
            permuted.pos_enc.row_mut(new).assign(&params.pos_enc.row(old));
        }
        let out = encode(&permuted, &HopTokenSequence { center: 0, tokens }).unwrap();
        for (a, b) in base.z_node.iter().zip(out.z_node.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in base.z_com.iter().zip(out.z_com.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let mut params = small_params(13, 4, 3);
        params.dims.attention_scale = AttentionScale::ModelWidth;
        let bytes = params.to_bytes();
        assert_eq!(&bytes[..4], b"CSGP");
        let back = ModelParams::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, params);
        assert!(ModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
    }

    #[test]
    fn tensor_names_align_with_shapes() {
        let params = small_params(1, 3, 5);
        let shapes: Vec<_> = params.tensors().iter().map(|t| t.dim()).collect();
        assert_eq!(shapes, params.dims.tensor_shapes());
        assert_eq!(params.tensor_names().len(), shapes.len());
    }
}
