//! Attention forecaster over triplet tokens.
//!
//! Each token `(t_rel, var, v_norm)` is embedded as
//! `cve_value(v_norm) + cve_time(t_rel) + type_table[var]`, passed through
//! pre-norm transformer blocks, pooled by a fusion attention layer and
//! concatenated with an encoding of the static profile before a sigmoid head.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainedModel, CHECKPOINT_FORMAT_VERSION};
pub use train::{train, train_with, EpochLoss, Trainer};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{Token, WindowSample};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("window has no tokens")]
    EmptyWindow,
    #[error("variable id {id} outside the type table of {n_vars} rows")]
    UnknownVariable { id: usize, n_vars: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(
        "non-finite values at epoch {epoch}, step {step} (lr {lr}): {detail}; \
         try a lower learning rate or check inputs for overflow"
    )]
    Diverged {
        epoch: usize,
        step: usize,
        lr: f64,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    /// Hidden width of each CVE; `ceil(sqrt(d_model))` when unset.
    pub cve_hidden: Option<usize>,
    /// Hidden width of the static encoder; `d_model` when unset.
    pub static_hidden: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight of the positive-class term of the loss.
    pub pos_weight: f64,
    /// Half-width of the uniform weight initialisation.
    pub init_scale: f64,
    /// Worker threads for per-sample gradients. Results do not depend on it.
    pub threads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 50,
            n_blocks: 2,
            n_heads: 4,
            ffn_mult: 2,
            dropout: 0.2,
            cve_hidden: None,
            static_hidden: None,
            batch_size: 128,
            epochs: 80,
            lr: 5e-4,
            seed: 7,
            pos_weight: 1.0,
            init_scale: 0.05,
            threads: 1,
        }
    }
}

impl ModelConfig {
    pub fn cve_hidden(&self) -> usize {
        self.cve_hidden
            .unwrap_or_else(|| (self.d_model as f64).sqrt().ceil() as usize)
    }

    pub fn static_hidden(&self) -> usize {
        self.static_hidden.unwrap_or(self.d_model)
    }

    /// `floor(d_model / n_heads)`; heads are concatenated and projected back
    /// to `d_model`.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = self.d_model > 0
            && self.n_heads > 0
            && self.ffn_mult > 0
            && self.batch_size > 0
            && self.cve_hidden() > 0
            && self.static_hidden() > 0
            && self.lr > 0.0
            && self.pos_weight > 0.0
            && self.init_scale >= 0.0;
        if !positive || self.head_dim() == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

const LN_EPS: f64 = 1e-6;
pub const N_STATIC: usize = 3;

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Ids {
    cve_v: [ParamId; 3],
    cve_t: [ParamId; 3],
    type_table: ParamId,
    blocks: Vec<BlockIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    fuse_w: ParamId,
    fuse_b: ParamId,
    fuse_u: ParamId,
    static_w1: ParamId,
    static_b1: ParamId,
    static_w2: ParamId,
    static_b2: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

/// Parameter name and shape in canonical order.
fn layout(cfg: &ModelConfig, n_vars: usize) -> Vec<(String, usize, usize)> {
    let d = cfg.d_model;
    let k = cfg.cve_hidden();
    let hd = cfg.head_dim() * cfg.n_heads;
    let f = cfg.ffn_mult * d;
    let sh = cfg.static_hidden();
    let mut v: Vec<(String, usize, usize)> = Vec::new();
    for p in ["cve_value", "cve_time"] {
        v.push((format!("{p}.w1"), 1, k));
        v.push((format!("{p}.b1"), 1, k));
        v.push((format!("{p}.w2"), k, d));
    }
    v.push(("type_table".into(), n_vars, d));
    for b in 0..cfg.n_blocks {
        let p = format!("block{b}");
        v.push((format!("{p}.ln1.gamma"), 1, d));
        v.push((format!("{p}.ln1.beta"), 1, d));
        v.push((format!("{p}.attn.wq"), d, hd));
        v.push((format!("{p}.attn.wk"), d, hd));
        v.push((format!("{p}.attn.wv"), d, hd));
        v.push((format!("{p}.attn.wo"), hd, d));
        v.push((format!("{p}.attn.bo"), 1, d));
        v.push((format!("{p}.ln2.gamma"), 1, d));
        v.push((format!("{p}.ln2.beta"), 1, d));
        v.push((format!("{p}.ffn.w1"), d, f));
        v.push((format!("{p}.ffn.b1"), 1, f));
        v.push((format!("{p}.ffn.w2"), f, d));
        v.push((format!("{p}.ffn.b2"), 1, d));
    }
    v.push(("final_ln.gamma".into(), 1, d));
    v.push(("final_ln.beta".into(), 1, d));
    v.push(("fusion.w".into(), d, d));
    v.push(("fusion.b".into(), 1, d));
    v.push(("fusion.u".into(), d, 1));
    v.push(("static.w1".into(), N_STATIC, sh));
    v.push(("static.b1".into(), 1, sh));
    v.push(("static.w2".into(), sh, d));
    v.push(("static.b2".into(), 1, d));
    v.push(("head.w".into(), 2 * d, 1));
    v.push(("head.b".into(), 1, 1));
    v
}

fn resolve_ids(cfg: &ModelConfig, p: &ParamStore) -> Result<Ids, TensorError> {
    let blocks = (0..cfg.n_blocks)
        .map(|b| {
            let id = |s: &str| p.id(&format!("block{b}.{s}"));
            Ok(BlockIds {
                ln1_g: id("ln1.gamma")?,
                ln1_b: id("ln1.beta")?,
                wq: id("attn.wq")?,
                wk: id("attn.wk")?,
                wv: id("attn.wv")?,
                wo: id("attn.wo")?,
                bo: id("attn.bo")?,
                ln2_g: id("ln2.gamma")?,
                ln2_b: id("ln2.beta")?,
                w1: id("ffn.w1")?,
                b1: id("ffn.b1")?,
                w2: id("ffn.w2")?,
                b2: id("ffn.b2")?,
            })
        })
        .collect::<Result<Vec<_>, TensorError>>()?;
    Ok(Ids {
        cve_v: [p.id("cve_value.w1")?, p.id("cve_value.b1")?, p.id("cve_value.w2")?],
        cve_t: [p.id("cve_time.w1")?, p.id("cve_time.b1")?, p.id("cve_time.w2")?],
        type_table: p.id("type_table")?,
        blocks,
        lnf_g: p.id("final_ln.gamma")?,
        lnf_b: p.id("final_ln.beta")?,
        fuse_w: p.id("fusion.w")?,
        fuse_b: p.id("fusion.b")?,
        fuse_u: p.id("fusion.u")?,
        static_w1: p.id("static.w1")?,
        static_b1: p.id("static.b1")?,
        static_w2: p.id("static.w2")?,
        static_b2: p.id("static.b2")?,
        head_w: p.id("head.w")?,
        head_b: p.id("head.b")?,
    })
}

/// Model output for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub risk: f64,
    /// Fusion attention weight per input token, in input order.
    pub fusion_weights: Vec<f64>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub risk: Var,
    pub fusion_weights: Var,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub params: ParamStore,
    n_vars: usize,
    ids: Ids,
}

impl PartialEq for Forecaster {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.n_vars == other.n_vars && self.params == other.params
    }
}

impl Forecaster {
    /// Seeded initialisation: weights uniform in `±init_scale`, biases zero,
    /// layer-norm gains one. Values are rounded to `f32`.
    pub fn new(config: ModelConfig, n_vars: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if n_vars == 0 {
            return Err(ModelError::InvalidConfig("empty variable catalog".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let a = config.init_scale;
        let mut params = ParamStore::new();
        for (name, r, c) in layout(&config, n_vars) {
            let t = if name.ends_with(".gamma") {
                Tensor::filled(r, c, 1.0)
            } else if name.ends_with(".beta") || is_bias(&name) {
                Tensor::zeros(r, c)
            } else {
                let data = (0..r * c).map(|_| rng.random_range(-a..=a)).collect();
                Tensor::from_vec(r, c, data)?
            };
            params.add(name, t);
        }
        params.round_to_f32();
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, n_vars, ids })
    }

    /// Wraps an existing parameter store, checking names and shapes against
    /// the layout implied by `config`.
    pub fn from_params(config: ModelConfig, n_vars: usize, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config, n_vars);
        if expected.len() != params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, r, c) in &expected {
            let id = params.id(name)?;
            let shape = params.get(id).shape();
            if shape != (*r, *c) {
                return Err(ModelError::Checkpoint(format!("{name}: shape {shape:?}, expected ({r}, {c})")));
            }
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(Self { config, params, n_vars, ids })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Sets the output head to zero, making every risk exactly 0.5.
    pub fn zero_head(&mut self) {
        for id in [self.ids.head_w, self.ids.head_b] {
            let t = self.params.get_mut(id);
            *t = Tensor::zeros(t.rows(), t.cols());
        }
    }

    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(&self.params, id)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var, TensorError> {
        let wv = self.p(tape, w);
        let y = tape.matmul(x, wv)?;
        match b {
            Some(b) => {
                let bv = self.p(tape, b);
                tape.add_row(y, bv)
            }
            None => Ok(y),
        }
    }

    fn cve(&self, tape: &mut Tape, x: Var, ids: [ParamId; 3]) -> Result<Var, TensorError> {
        let h = self.linear(tape, x, ids[0], Some(ids[1]))?;
        let h = tape.tanh(h)?;
        self.linear(tape, h, ids[2], None)
    }

    /// Token embeddings (`pad_to.max(n) x d`) and the key mask (true for real
    /// tokens). Padding rows are filled with a neutral token and masked.
    pub fn embed_tokens(&self, tape: &mut Tape, tokens: &[Token], pad_to: usize) -> Result<(Var, Vec<bool>), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyWindow);
        }
        let len = tokens.len().max(pad_to);
        let mut values = Vec::with_capacity(len);
        let mut times = Vec::with_capacity(len);
        let mut vars = Vec::with_capacity(len);
        for tok in tokens {
            let id = tok.var.index();
            if id >= self.n_vars {
                return Err(ModelError::UnknownVariable { id, n_vars: self.n_vars });
            }
            values.push(tok.v_norm);
            times.push(tok.t_rel);
            vars.push(id);
        }
        values.resize(len, 0.0);
        times.resize(len, 0.0);
        vars.resize(len, 0);
        let mut mask = vec![true; tokens.len()];
        mask.resize(len, false);

        let v = tape.input(Tensor::column_vector(values));
        let t = tape.input(Tensor::column_vector(times));
        let ev = self.cve(tape, v, self.ids.cve_v)?;
        let et = self.cve(tape, t, self.ids.cve_t)?;
        let table = self.p(tape, self.ids.type_table);
        let ey = tape.embedding(table, &vars)?;
        let e = tape.add(ev, et)?;
        Ok((tape.add(e, ey)?, mask))
    }

    fn attention(&self, tape: &mut Tape, x: Var, mask: &[bool], b: &BlockIds) -> Result<Var, TensorError> {
        let hd = self.config.head_dim();
        let q = self.linear(tape, x, b.wq, None)?;
        let k = self.linear(tape, x, b.wk, None)?;
        let v = self.linear(tape, x, b.wv, None)?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let vh = tape.slice_cols(v, h * hd, hd)?;
            let s = tape.matmul_t(qh, kh)?;
            let s = tape.scale(s, scale)?;
            let a = tape.softmax_masked(s, mask)?;
            heads.push(tape.matmul(a, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        self.linear(tape, cat, b.wo, Some(b.bo))
    }

    /// Pre-norm transformer blocks followed by a final layer norm.
    pub fn encode(&self, tape: &mut Tape, x: Var, mask: &[bool], train: bool) -> Result<Var, ModelError> {
        let p = self.config.dropout;
        let mut x = x;
        for b in &self.ids.blocks {
            let (g, be) = (self.p(tape, b.ln1_g), self.p(tape, b.ln1_b));
            let h = tape.layer_norm(x, g, be, LN_EPS)?;
            let h = self.attention(tape, h, mask, b)?;
            let h = tape.dropout(h, p, train)?;
            x = tape.add(x, h)?;

            let (g, be) = (self.p(tape, b.ln2_g), self.p(tape, b.ln2_b));
            let h = tape.layer_norm(x, g, be, LN_EPS)?;
            let h = self.linear(tape, h, b.w1, Some(b.b1))?;
            let h = tape.relu(h)?;
            let h = self.linear(tape, h, b.w2, Some(b.b2))?;
            let h = tape.dropout(h, p, train)?;
            x = tape.add(x, h)?;
        }
        let (g, be) = (self.p(tape, self.ids.lnf_g), self.p(tape, self.ids.lnf_b));
        Ok(tape.layer_norm(x, g, be, LN_EPS)?)
    }

    /// Fusion attention pooling, static encoder and sigmoid head.
    pub fn fuse_and_predict(
        &self,
        tape: &mut Tape,
        contextual: Var,
        mask: &[bool],
        static_vec: [f64; N_STATIC],
    ) -> Result<ForwardVars, ModelError> {
        let h = self.linear(tape, contextual, self.ids.fuse_w, Some(self.ids.fuse_b))?;
        let h = tape.tanh(h)?;
        let scores = self.linear(tape, h, self.ids.fuse_u, None)?;
        let scores = tape.transpose(scores)?;
        let alpha = tape.softmax_masked(scores, mask)?;
        let pooled = tape.matmul(alpha, contextual)?;

        let s = tape.input(Tensor::row_vector(static_vec.to_vec()));
        let s = self.linear(tape, s, self.ids.static_w1, Some(self.ids.static_b1))?;
        let s = tape.tanh(s)?;
        let s = self.linear(tape, s, self.ids.static_w2, Some(self.ids.static_b2))?;

        let z = tape.concat_cols(&[pooled, s])?;
        let logit = self.linear(tape, z, self.ids.head_w, Some(self.ids.head_b))?;
        let risk = tape.sigmoid(logit)?;
        Ok(ForwardVars { risk, fusion_weights: alpha })
    }

    /// Full forward pass for one window, padded to at least `pad_to` rows.
    pub fn forward(&self, tape: &mut Tape, sample: &WindowSample, pad_to: usize, train: bool) -> Result<ForwardVars, ModelError> {
        let (x, mask) = self.embed_tokens(tape, &sample.tokens, pad_to)?;
        let c = self.encode(tape, x, &mask, train)?;
        self.fuse_and_predict(tape, c, &mask, sample.static_vec)
    }

    /// Eval-mode prediction.
    pub fn predict(&self, sample: &WindowSample) -> Result<Prediction, ModelError> {
        self.predict_padded(sample, 0)
    }

    /// Eval-mode prediction with the sequence padded to `pad_to` rows. The
    /// result does not depend on padding.
    pub fn predict_padded(&self, sample: &WindowSample, pad_to: usize) -> Result<Prediction, ModelError> {
        let mut tape = Tape::new(0);
        let out = self.forward(&mut tape, sample, pad_to, false)?;
        let n = sample.tokens.len();
        Ok(Prediction {
            risk: tape.value(out.risk).item(),
            fusion_weights: tape.value(out.fusion_weights).data()[..n].to_vec(),
        })
    }

    /// Predictions for many windows, in input order.
    pub fn predict_all(&self, samples: &[WindowSample], threads: usize) -> Result<Vec<Prediction>, ModelError> {
        run_parallel(threads, || samples.par_iter().map(|s| self.predict(s)).collect())
    }

    /// Mean BCE of one window, for gradient checking and training.
    pub fn sample_loss(&self, tape: &mut Tape, sample: &WindowSample, train: bool) -> Result<Var, ModelError> {
        let out = self.forward(tape, sample, 0, train)?;
        Ok(tape.bce_loss(out.risk, f64::from(sample.label), self.config.pos_weight)?)
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with(".bo") || name.ends_with(".b")
}

/// Runs `f` on a pool of `threads` workers, or inline for one thread.
pub(crate) fn run_parallel<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running on the current thread");
            f()
        }
    }
}
