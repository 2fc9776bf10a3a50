//! Multimodal encoder–decoder with bottleneck adapters.
//!
//! Two pathways share one decoder:
//!
//! * speech → text: frame projection, speech encoder layers
//!   (self-attention, depthwise convolution, feed-forward, adapter), decoder;
//! * text → text: token embedding, text encoder layers (self-attention,
//!   feed-forward), the same decoder.
//!
//! Every sublayer sits behind pre-normalization with a residual connection;
//! adapters carry their own residual and start as exact identities (their
//! up-projection is zero-initialized). A [`Session`] traces one forward pass
//! onto a [`Tape`], binding each parameter at most once, so a joint loss over
//! both pathways accumulates decoder gradients through a single leaf per
//! parameter.

pub mod checkpoint;
pub mod config;
pub mod params;

use std::cell::RefCell;
use std::collections::HashMap;

pub use config::{ModelConfig, ParamKind, Scope};
pub use params::{Param, ParamId, ParamStore};

use crate::error::{AmpsError, Result};
use crate::tensor::{Reduce, Tape, Tensor};

/// Token-id conventions shared across the crate.
pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

/// Additive mask value for blocked attention positions. Large-negative and
/// finite: softmax underflows it to exactly zero weight without NaN hazards.
const MASK_NEG: f64 = -1e30;

#[derive(Clone)]
pub struct MultimodalModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Sinusoidal position table, `[max_seq_len × d_model]`, row-major.
    pos_table: Vec<f64>,
}

impl MultimodalModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = config.plan();
        let params = ParamStore::build(&plan, seed);
        let pos_table = sinusoidal_table(config.max_seq_len, config.d_model);
        Ok(MultimodalModel {
            config,
            params,
            pos_table,
        })
    }

    /// Begin tracing one forward computation on `tape`.
    pub fn session<'m, 't>(&'m self, tape: &'t Tape) -> Session<'m, 't> {
        Session {
            model: self,
            tape,
            bound: RefCell::new(HashMap::new()),
        }
    }

    /// Ids of parameters to optimize. `adapter_only` restricts to adapter
    /// blocks; `update_text_encoder = false` removes text-encoder-scope
    /// parameters from the set.
    pub fn trainable_ids(&self, adapter_only: bool, update_text_encoder: bool) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, p)| !adapter_only || p.kind == ParamKind::Adapter)
            .filter(|(_, p)| update_text_encoder || p.scope != Scope::Text)
            .map(|(id, _)| id)
            .collect()
    }

    /// Number of trainable scalars under the same partition rules.
    pub fn trainable_count(&self, adapter_only: bool, update_text_encoder: bool) -> usize {
        self.trainable_ids(adapter_only, update_text_encoder)
            .iter()
            .map(|&id| self.params.get(id).numel())
            .sum()
    }

    fn pos_rows(&self, n: usize) -> &[f64] {
        &self.pos_table[..n * self.config.d_model]
    }
}

/// Decoder teacher-forcing input: BOS followed by all targets but the last.
pub fn teacher_input(targets: &[u32]) -> Vec<u32> {
    let mut y_in = Vec::with_capacity(targets.len());
    y_in.push(BOS);
    y_in.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
    y_in
}

/// One traced forward computation over a tape.
pub struct Session<'m, 't> {
    model: &'m MultimodalModel,
    tape: &'t Tape,
    bound: RefCell<HashMap<ParamId, Tensor<'t>>>,
}

impl<'m, 't> Session<'m, 't> {
    /// Bind a parameter leaf (at most once per session).
    fn p(&self, name: &str) -> Result<Tensor<'t>> {
        let id = self
            .model
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(t) = self.bound.borrow().get(&id) {
            return Ok(*t);
        }
        let param = self.model.params.get(id);
        let t = self.tape.leaf(&param.shape, param.values.clone())?;
        self.bound.borrow_mut().insert(id, t);
        Ok(t)
    }

    fn check_len(&self, n: usize, what: &'static str) -> Result<()> {
        if n == 0 {
            return Err(AmpsError::EmptyInput {
                op: "forward",
                what,
            });
        }
        if n > self.model.config.max_seq_len {
            return Err(AmpsError::data(format!(
                "{what} length {n} exceeds max_seq_len {}",
                self.model.config.max_seq_len
            )));
        }
        Ok(())
    }

    /// Speech-to-text logits `[|y_in| × V]`. `frames` is row-major
    /// `[L × frame_dim]`; `y_in` must begin with BOS.
    pub fn forward_s2t(&self, frames: &[f64], y_in: &[u32]) -> Result<Tensor<'t>> {
        let enc = self.encode_speech(frames)?;
        self.decode(enc, y_in)
    }

    /// Text-to-text logits `[|y_in| × V]` over the same decoder.
    pub fn forward_t2t(&self, y_src: &[u32], y_in: &[u32]) -> Result<Tensor<'t>> {
        let enc = self.encode_text(y_src)?;
        self.decode(enc, y_in)
    }

    /// Speech encoder output `h^ℓ` `[L × D1]`.
    pub fn encode_speech(&self, frames: &[f64]) -> Result<Tensor<'t>> {
        let d_in = self.model.config.frame_dim;
        if frames.is_empty() || frames.len() % d_in != 0 {
            return Err(AmpsError::ShapeMismatch {
                op: "encode_speech",
                lhs: vec![frames.len()],
                rhs: vec![d_in],
            });
        }
        let l = frames.len() / d_in;
        self.check_len(l, "frames")?;

        let x = self.tape.constant(&[l, d_in], frames.to_vec())?;
        let mut h = x
            .matmul(self.p("speech.proj_w")?)?
            .add_bias(self.p("speech.proj_b")?)?;
        h = h.add(self.positions(l)?)?;

        for i in 0..self.model.config.n_speech_layers {
            let pfx = format!("speech.layer{i}");
            // Self-attention sublayer (bidirectional).
            let a = self.ln(&format!("{pfx}.ln_attn"), h)?;
            h = h.add(self.mha(&format!("{pfx}.attn"), a, a, None)?)?;
            // Depthwise convolution sublayer.
            let c = self.ln(&format!("{pfx}.ln_conv"), h)?;
            let conv = c
                .depthwise_conv1d(self.p(&format!("{pfx}.conv_k"))?)?
                .add_bias(self.p(&format!("{pfx}.conv_b"))?)?;
            h = h.add(conv)?;
            // Feed-forward sublayer.
            let f = self.ln(&format!("{pfx}.ln_ffn"), h)?;
            h = h.add(self.ffn(&format!("{pfx}.ffn"), f)?)?;
            // Adapter (residual built in).
            h = self.adapter(&format!("{pfx}.adapter"), h)?;
        }
        self.ln("speech.ln_final", h)
    }

    /// Text encoder output `[N × D1]`.
    pub fn encode_text(&self, y_src: &[u32]) -> Result<Tensor<'t>> {
        self.check_len(y_src.len(), "encoder tokens")?;
        let mut h = self
            .tape
            .embed(self.p("text.embed")?, y_src)?
            .add(self.positions(y_src.len())?)?;
        for i in 0..self.model.config.n_text_layers {
            let pfx = format!("text.layer{i}");
            let a = self.ln(&format!("{pfx}.ln_attn"), h)?;
            h = h.add(self.mha(&format!("{pfx}.attn"), a, a, None)?)?;
            let f = self.ln(&format!("{pfx}.ln_ffn"), h)?;
            h = h.add(self.ffn(&format!("{pfx}.ffn"), f)?)?;
        }
        self.ln("text.ln_final", h)
    }

    /// Shared decoder over any encoder output; returns logits `[N × V]`.
    pub fn decode(&self, enc_out: Tensor<'t>, y_in: &[u32]) -> Result<Tensor<'t>> {
        self.check_len(y_in.len(), "decoder tokens")?;
        if y_in[0] != BOS {
            return Err(AmpsError::data(format!(
                "decoder input must begin with BOS, got token {}",
                y_in[0]
            )));
        }
        let n = y_in.len();
        let mut d = self
            .tape
            .embed(self.p("decoder.embed")?, y_in)?
            .add(self.positions(n)?)?;
        let mask = self.causal_mask(n)?;

        for i in 0..self.model.config.n_decoder_layers {
            let pfx = format!("decoder.layer{i}");
            // Masked self-attention over the prefix.
            let a = self.ln(&format!("{pfx}.ln_self"), d)?;
            d = d.add(self.mha(&format!("{pfx}.self_attn"), a, a, Some(mask))?)?;
            // Cross-attention over the encoder output.
            let c = self.ln(&format!("{pfx}.ln_cross"), d)?;
            d = d.add(self.mha(&format!("{pfx}.cross_attn"), c, enc_out, None)?)?;
            // Feed-forward, then adapter.
            let f = self.ln(&format!("{pfx}.ln_ffn"), d)?;
            d = d.add(self.ffn(&format!("{pfx}.ffn"), f)?)?;
            d = self.adapter(&format!("{pfx}.adapter"), d)?;
        }
        let out = self.ln("decoder.ln_final", d)?;
        out.matmul(self.p("decoder.out_w")?)?
            .add_bias(self.p("decoder.out_b")?)
    }

    /// Multi-head attention. Queries from `q_in`, keys/values from `kv_in`,
    /// optional additive mask `[Nq × Nk]`.
    pub fn mha(
        &self,
        prefix: &str,
        q_in: Tensor<'t>,
        kv_in: Tensor<'t>,
        mask: Option<Tensor<'t>>,
    ) -> Result<Tensor<'t>> {
        let heads = self.model.config.n_heads;
        let d = self.model.config.d_model;
        let dh = d / heads;
        let q = q_in
            .matmul(self.p(&format!("{prefix}.wq"))?)?
            .add_bias(self.p(&format!("{prefix}.bq"))?)?;
        let k = kv_in
            .matmul(self.p(&format!("{prefix}.wk"))?)?
            .add_bias(self.p(&format!("{prefix}.bk"))?)?;
        let v = kv_in
            .matmul(self.p(&format!("{prefix}.wv"))?)?
            .add_bias(self.p(&format!("{prefix}.bv"))?)?;

        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let mut scores = qh.matmul(kh.transpose()?)?.scale(scale);
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            let att = scores.softmax(1)?;
            outs.push(att.matmul(vh)?);
        }
        self.tape
            .concat_cols(&outs)?
            .matmul(self.p(&format!("{prefix}.wo"))?)?
            .add_bias(self.p(&format!("{prefix}.bo"))?)
    }

    fn ffn(&self, prefix: &str, x: Tensor<'t>) -> Result<Tensor<'t>> {
        x.matmul(self.p(&format!("{prefix}.w1"))?)?
            .add_bias(self.p(&format!("{prefix}.b1"))?)?
            .gelu()
            .matmul(self.p(&format!("{prefix}.w2"))?)?
            .add_bias(self.p(&format!("{prefix}.b2"))?)
    }

    /// Bottleneck adapter: `x + up(gelu(down(x)))`. With a zero-initialized
    /// up-projection this is exactly the identity.
    fn adapter(&self, prefix: &str, x: Tensor<'t>) -> Result<Tensor<'t>> {
        let mid = x
            .matmul(self.p(&format!("{prefix}.down_w"))?)?
            .add_bias(self.p(&format!("{prefix}.down_b"))?)?
            .gelu()
            .matmul(self.p(&format!("{prefix}.up_w"))?)?
            .add_bias(self.p(&format!("{prefix}.up_b"))?)?;
        x.add(mid)
    }

    fn ln(&self, prefix: &str, x: Tensor<'t>) -> Result<Tensor<'t>> {
        x.layernorm(
            self.p(&format!("{prefix}.gain"))?,
            self.p(&format!("{prefix}.bias"))?,
            1e-5,
        )
    }

    fn positions(&self, n: usize) -> Result<Tensor<'t>> {
        self.tape
            .constant(&[n, self.model.config.d_model], self.model.pos_rows(n).to_vec())
    }

    fn causal_mask(&self, n: usize) -> Result<Tensor<'t>> {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                m[i * n + j] = MASK_NEG;
            }
        }
        self.tape.constant(&[n, n], m)
    }

    /// Harvested gradients after `tape.backward(...)`, ascending by id.
    pub fn grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out: Vec<(ParamId, Vec<f64>)> = self
            .bound
            .borrow()
            .iter()
            .filter_map(|(&id, t)| t.grad().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Parameters bound by this session so far, ascending by id.
    pub fn used_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.bound.borrow().keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}

fn sinusoidal_table(max_len: usize, d: usize) -> Vec<f64> {
    let mut t = vec![0.0; max_len * d];
    for p in 0..max_len {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let angle = p as f64 / f64::powf(10000.0, 2.0 * pair / d as f64);
            t[p * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

// ── Finite-difference verification over whole models ───────────────────────

/// Joint-loss scalar used for whole-model gradient verification: mean-NLL of
/// the speech→text pathway plus mean-NLL of the text→text pathway, so every
/// parameter in the model participates.
pub fn joint_loss_value(
    model: &MultimodalModel,
    frames: &[f64],
    y: &[u32],
    y_par: &[u32],
) -> Result<f64> {
    let tape = Tape::new();
    let s = model.session(&tape);
    let asr = s
        .forward_s2t(frames, &teacher_input(y))?
        .cross_entropy_nll(y, Reduce::Mean)?;
    let par = s
        .forward_t2t(y, &teacher_input(y_par))?
        .cross_entropy_nll(y_par, Reduce::Mean)?;
    Ok(asr.add(par)?.value())
}

pub struct FdReport {
    pub coords_checked: usize,
    pub worst_rel_err: f64,
    pub params_covered: usize,
}

/// Compare analytic gradients of the joint loss against central finite
/// differences on `per_param` sampled coordinates of every parameter tensor.
pub fn fd_check_model(
    model: &mut MultimodalModel,
    frames: &[f64],
    y: &[u32],
    y_par: &[u32],
    per_param: usize,
    seed: u64,
    h: f64,
) -> Result<FdReport> {
    use rand::Rng;
    use rand::SeedableRng;

    // Analytic pass.
    let analytic: HashMap<ParamId, Vec<f64>> = {
        let tape = Tape::new();
        let s = model.session(&tape);
        let asr = s
            .forward_s2t(frames, &teacher_input(y))?
            .cross_entropy_nll(y, Reduce::Mean)?;
        let par = s
            .forward_t2t(y, &teacher_input(y_par))?
            .cross_entropy_nll(y_par, Reduce::Mean)?;
        let loss = asr.add(par)?;
        tape.backward(loss)?;
        s.grads().into_iter().collect()
    };

    let n_params = model.params.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for id in 0..n_params {
        let n = model.params.get(id).numel();
        for _ in 0..per_param.min(n) {
            let ci = rng.gen_range(0..n);
            let old = model.params.get(id).values[ci];
            model.params.get_mut(id).values[ci] = old + h;
            let plus = joint_loss_value(model, frames, y, y_par)?;
            model.params.get_mut(id).values[ci] = old - h;
            let minus = joint_loss_value(model, frames, y, y_par)?;
            model.params.get_mut(id).values[ci] = old;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(&id).map(|g| g[ci]).unwrap_or(0.0);
            worst = worst.max(crate::tensor::gradcheck::rel_err(a, numeric));
            checked += 1;
        }
    }
    Ok(FdReport {
        coords_checked: checked,
        worst_rel_err: worst,
        params_covered: n_params,
    })
}

// ─────────────────────────────────────────────────────────────────────────────
