//! C ABI over `commsearch`.
//!
//! Every object crosses the boundary as an opaque handle that must be
//! released with its `_free` function. Every fallible call returns a
//! [`CsStatus`]; on failure [`cs_last_error`] describes what went wrong on the
//! calling thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use commsearch::graph::{FeatureMatrix, Graph, NodeSet};
use commsearch::identify::{global_search, local_search, oracle_search, Community, EsgConfig};
use commsearch::io::read_graph;
use commsearch::model::{encode_batch, EmbeddingPair, ModelParams};
use commsearch::scoring::{compute_scores, ScoreVector, Similarity};
use commsearch::train::{pretrain, TrainConfig};
use commsearch::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numeric = 5,
    Format = 6,
    Dimension = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsSimilarity {
    Cosine = 0,
    L1 = 1,
    L2 = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsMethod {
    Local = 0,
    Global = 1,
    Oracle = 2,
}

/// Pre-training knobs exposed to C. Start from [`cs_train_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CsTrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_hops: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub dropout: f64,
}

pub struct CsGraph(Graph);
pub struct CsModel(ModelParams);
pub struct CsEmbeddings(Vec<EmbeddingPair>);
pub struct CsScores(ScoreVector);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: CsStatus, msg: impl Into<String>) -> CsStatus {
    set_error(msg.into());
    status
}

fn status_of(e: Error) -> CsStatus {
    let status = match e.kind() {
        Error::Parse { .. } => CsStatus::Parse,
        Error::Domain(_) => CsStatus::InvalidArgument,
        Error::Dimension { .. } => CsStatus::Dimension,
        Error::Numeric(_) => CsStatus::Numeric,
        Error::Io { .. } => CsStatus::Io,
        Error::Format(_) | Error::Context { .. } => CsStatus::Format,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), CsStatus>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(CsStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: commsearch::Result<T>) -> Result<T, CsStatus> {
    r.map_err(status_of)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, CsStatus> {
    p.as_ref().ok_or_else(|| fail(CsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], CsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, CsStatus> {
    if p.is_null() {
        return Err(fail(CsStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(CsStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), CsStatus> {
    if out.is_null() {
        return Err(fail(CsStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null. Free with
/// [`cs_string_free`].
#[no_mangle]
pub extern "C" fn cs_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static version string; do not free.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_graph_load(path: *const c_char, out: *mut *mut CsGraph) -> CsStatus {
    guard(|| {
        let g = lift(read_graph(path_arg(path)?))?;
        put(out, CsGraph(g))
    })
}

/// Build a graph on `n` nodes from `m` edges `(us[i], vs[i])`.
///
/// # Safety
/// `us` and `vs` must each point to `m` readable values.
#[no_mangle]
pub unsafe extern "C" fn cs_graph_from_edges(
    n: usize,
    us: *const usize,
    vs: *const usize,
    m: usize,
    out: *mut *mut CsGraph,
) -> CsStatus {
    guard(|| {
        let us = slice(us, m, "us")?;
        let vs = slice(vs, m, "vs")?;
        let edges: Vec<(usize, usize)> = us.iter().copied().zip(vs.iter().copied()).collect();
        let g = lift(Graph::from_edges(n, &edges))?;
        put(out, CsGraph(g))
    })
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `g` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cs_graph_node_count(g: *const CsGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.node_count())
}

/// # Safety
/// `g` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_graph_free(g: *mut CsGraph) {
    release(g)
}

#[no_mangle]
pub extern "C" fn cs_train_options_default() -> CsTrainOptions {
    let d = TrainConfig::default();
    CsTrainOptions {
        epochs: d.epochs,
        seed: d.seed,
        model_dim: d.model_dim,
        heads: d.heads,
        layers: d.layers,
        max_hops: d.max_hops,
        learning_rate: d.learning_rate,
        alpha: d.alpha,
        dropout: d.dropout,
    }
}

/// Pre-train on `g` with one-hot node features.
///
/// # Safety
/// `g` must be a live handle and `out` writable. `opts` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn cs_model_pretrain(
    g: *const CsGraph,
    opts: *const CsTrainOptions,
    out: *mut *mut CsModel,
) -> CsStatus {
    guard(|| {
        let g = &handle(g, "graph")?.0;
        let o = opts.as_ref().copied().unwrap_or_else(|| cs_train_options_default());
        let cfg = TrainConfig {
            epochs: o.epochs,
            seed: o.seed,
            model_dim: o.model_dim,
            heads: o.heads,
            layers: o.layers,
            max_hops: o.max_hops,
            learning_rate: o.learning_rate,
            alpha: o.alpha,
            dropout: o.dropout,
            ..TrainConfig::default()
        };
        let x = FeatureMatrix::identity(g.node_count());
        let trained = lift(pretrain(g, &x, &cfg))?;
        put(out, CsModel(trained.params))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_load(path: *const c_char, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        let m = lift(ModelParams::load(path_arg(path)?))?;
        put(out, CsModel(m))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cs_model_save(model: *const CsModel, path: *const c_char) -> CsStatus {
    guard(|| lift(handle(model, "model")?.0.save(path_arg(path)?)))
}

/// # Safety
/// `m` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(m: *mut CsModel) {
    release(m)
}

/// Encode every node of `g` (one-hot features).
///
/// # Safety
/// `model` and `g` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_embed(
    model: *const CsModel,
    g: *const CsGraph,
    out: *mut *mut CsEmbeddings,
) -> CsStatus {
    guard(|| {
        let params = &handle(model, "model")?.0;
        let g = &handle(g, "graph")?.0;
        let x = FeatureMatrix::identity(g.node_count());
        let emb = lift(encode_batch(params, g, &x, params.dims.max_hops, &NodeSet::full(g.node_count())))?;
        put(out, CsEmbeddings(emb))
    })
}

/// # Safety
/// `e` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_embeddings_free(e: *mut CsEmbeddings) {
    release(e)
}

unsafe fn query_arg(query: *const usize, len: usize) -> Result<NodeSet, CsStatus> {
    Ok(NodeSet::new(slice(query, len, "query")?.to_vec()))
}

/// Average similarity of every node to the `query_len` query nodes.
///
/// # Safety
/// `emb` must be a live handle, `query` must point to `query_len` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scores_compute(
    emb: *const CsEmbeddings,
    query: *const usize,
    query_len: usize,
    similarity: CsSimilarity,
    out: *mut *mut CsScores,
) -> CsStatus {
    guard(|| {
        let emb = &handle(emb, "embeddings")?.0;
        let sim = match similarity {
            CsSimilarity::Cosine => Similarity::Cosine,
            CsSimilarity::L1 => Similarity::L1,
            CsSimilarity::L2 => Similarity::L2,
        };
        let s = lift(compute_scores(emb, &query_arg(query, query_len)?, sim))?;
        put(out, CsScores(s))
    })
}

/// Wrap caller-provided scores.
///
/// # Safety
/// `values` must point to `n` values, `query` to `query_len` values.
#[no_mangle]
pub unsafe extern "C" fn cs_scores_from_values(
    values: *const f64,
    n: usize,
    query: *const usize,
    query_len: usize,
    out: *mut *mut CsScores,
) -> CsStatus {
    guard(|| {
        let values = slice(values, n, "values")?.to_vec();
        let s = lift(ScoreVector::from_raw(values, query_arg(query, query_len)?))?;
        put(out, CsScores(s))
    })
}

/// # Safety
/// `s` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn cs_scores_len(s: *const CsScores) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Copy the scores into `buf`, which must hold [`cs_scores_len`] values.
///
/// # Safety
/// `buf` must point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn cs_scores_copy(s: *const CsScores, buf: *mut f64, cap: usize) -> CsStatus {
    guard(|| {
        let s = handle(s, "scores")?.0.scores();
        if cap < s.len() {
            return Err(fail(CsStatus::BufferTooSmall, format!("need {} values", s.len())));
        }
        if !s.is_empty() {
            if buf.is_null() {
                return Err(fail(CsStatus::NullPointer, "buffer is null"));
            }
            ptr::copy_nonoverlapping(s.as_ptr(), buf, s.len());
        }
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_scores_free(s: *mut CsScores) {
    release(s)
}

/// Search the community of the query attached to `scores`. Member ids are
/// written to `members` (capacity `cap`); `*len` always receives the member
/// count, so a call with `cap = 0` sizes the buffer. `max_size = 0` selects
/// the default cap. `esg` and `connected` may be null.
///
/// # Safety
/// Handles must be live, `members` must hold `cap` values, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_search(
    scores: *const CsScores,
    g: *const CsGraph,
    method: CsMethod,
    tau: f64,
    max_size: usize,
    members: *mut usize,
    cap: usize,
    len: *mut usize,
    esg: *mut f64,
    connected: *mut bool,
) -> CsStatus {
    guard(|| {
        let s = &handle(scores, "scores")?.0;
        let g = &handle(g, "graph")?.0;
        if len.is_null() {
            return Err(fail(CsStatus::NullPointer, "len is null"));
        }
        let cfg = EsgConfig {
            tau,
            max_size: (max_size > 0).then_some(max_size),
        };
        let found: Community = lift(match method {
            CsMethod::Local => local_search(s, g, s.query(), &cfg),
            CsMethod::Global => global_search(s, g, s.query(), &cfg),
            CsMethod::Oracle => oracle_search(s, g, s.query(), tau),
        })?;
        let ids = found.nodes.ids();
        *len = ids.len();
        if let Some(e) = esg.as_mut() {
            *e = found.esg;
        }
        if let Some(c) = connected.as_mut() {
            *c = found.connected;
        }
        if cap < ids.len() {
            return Err(fail(CsStatus::BufferTooSmall, format!("need {} members", ids.len())));
        }
        if members.is_null() {
            return Err(fail(CsStatus::NullPointer, "members is null"));
        }
        ptr::copy_nonoverlapping(ids.as_ptr(), members, ids.len());
        Ok(())
    })
}
