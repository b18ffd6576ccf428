//! Attention primitives and the pre-norm causal transformer stack.
//!
//! Activations are laid out `[batch, sequence, hidden]`. Weight matrices
//! are stored `[in, out]` so that projections are `x · W`.

use rand::Rng;

use crate::error::{CgmError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Boolean attention pattern for a batch: `allowed[b][i][j]` says whether
/// query `i` of batch entry `b` may attend to key `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    batch: usize,
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(
        batch: usize,
        queries: usize,
        keys: usize,
        f: impl Fn(usize, usize, usize) -> bool,
    ) -> Self {
        let mut allowed = Vec::with_capacity(batch * queries * keys);
        for b in 0..batch {
            for i in 0..queries {
                for j in 0..keys {
                    allowed.push(f(b, i, j));
                }
            }
        }
        AttentionMask {
            batch,
            queries,
            keys,
            allowed,
        }
    }

    /// Plain lower-triangular mask: query `i` sees keys `j <= i`.
    pub fn causal(len: usize) -> Self {
        Self::from_fn(1, len, len, |_, i, j| j <= i)
    }

    /// Causal mask with per-position key exclusions. An excluded position is
    /// never visible to other queries but still sees itself, so its own row
    /// stays well defined and is simply passed through.
    pub fn causal_with_keys(key_ok: &[Vec<bool>]) -> Self {
        let len = key_ok.first().map_or(0, |k| k.len());
        Self::from_fn(key_ok.len(), len, len, |b, i, j| {
            j <= i && (key_ok[b][j] || j == i)
        })
    }

    /// Output-head mask over `[start, R_0, .., R_{l-1}]`: query `i` sees the
    /// start row and every permitted key at a strictly earlier position.
    pub fn strict_prefix(key_ok: &[Vec<bool>]) -> Self {
        let len = key_ok.first().map_or(0, |k| k.len());
        Self::from_fn(key_ok.len(), len, len + 1, |b, i, j| {
            j == 0 || (j - 1 < i && key_ok[b][j - 1])
        })
    }

    pub fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        self.allowed[(b * self.queries + i) * self.keys + j]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.batch, self.queries, self.keys)
    }

    /// Additive form: `0` where allowed, `-inf` elsewhere.
    pub fn additive(&self) -> Result<Tensor> {
        for row in self.allowed.chunks(self.keys) {
            if !row.iter().any(|&a| a) {
                return Err(CgmError::EmptyAttentionSupport);
            }
        }
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::new(&[self.batch, self.queries, self.keys], data)
    }
}

/// `softmax(Q Kᵀ / √d_k + mask) V` for rank-2 or batched rank-3 inputs.
pub fn attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let sq = tape.shape(q).to_vec();
    if sq.len() == 2 {
        let q3 = tape.reshape(q, &[1, sq[0], sq[1]])?;
        let sk = tape.shape(k).to_vec();
        let sv = tape.shape(v).to_vec();
        if sk.len() != 2 || sv.len() != 2 {
            return Err(CgmError::shape("attention", &sq, &sk));
        }
        let k3 = tape.reshape(k, &[1, sk[0], sk[1]])?;
        let v3 = tape.reshape(v, &[1, sv[0], sv[1]])?;
        let out = attention(tape, q3, k3, v3, mask)?;
        return tape.reshape(out, &[sq[0], sv[1]]);
    }
    let dk = *sq.last().unwrap();
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    if tape.value(scores).data().iter().any(|s| !s.is_finite()) {
        return Err(CgmError::NonFinite("attention scores".into()));
    }
    if let Some(m) = mask {
        let sm = tape.shape(m);
        let ss = tape.shape(scores);
        if sm != ss {
            return Err(CgmError::shape("attention mask", ss, sm));
        }
        scores = tape.add(scores, m)?;
    }
    let weights = tape.softmax(scores)?;
    tape.matmul(weights, v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights {
    pub n_heads: usize,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub n_heads: usize,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

impl AttentionWeights {
    pub fn init<R: Rng + ?Sized>(hidden: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        check_heads(hidden, n_heads)?;
        Ok(AttentionWeights {
            n_heads,
            wq: Tensor::randn(&[hidden, hidden], INIT_STD, rng),
            wk: Tensor::randn(&[hidden, hidden], INIT_STD, rng),
            wv: Tensor::randn(&[hidden, hidden], INIT_STD, rng),
            wo: Tensor::randn(&[hidden, hidden], INIT_STD, rng),
        })
    }

    pub fn hidden(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.hidden() / self.n_heads
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.wq"), &self.wq),
            (format!("{prefix}.wk"), &self.wk),
            (format!("{prefix}.wv"), &self.wv),
            (format!("{prefix}.wo"), &self.wo),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            n_heads: self.n_heads,
            wq: tape.param(self.wq.clone()),
            wk: tape.param(self.wk.clone()),
            wv: tape.param(self.wv.clone()),
            wo: tape.param(self.wo.clone()),
        }
    }
}

impl AttentionVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.wq, self.wk, self.wv, self.wo]
    }
}

fn check_heads(hidden: usize, n_heads: usize) -> Result<()> {
    if n_heads == 0 || !hidden.is_multiple_of(n_heads) {
        return Err(CgmError::contract(format!(
            "hidden size {hidden} is not divisible by {n_heads} heads"
        )));
    }
    Ok(())
}

/// Multi-head attention of `queries` over `keys_values`, both `[b, l, h]`.
pub fn multi_head_attention(
    tape: &mut Tape,
    queries: Var,
    keys_values: Var,
    w: &AttentionVars,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let h = *tape.shape(queries).last().unwrap();
    check_heads(h, w.n_heads)?;
    let dk = h / w.n_heads;
    let mask = match mask {
        Some(m) => Some(tape.constant(m.additive()?)),
        None => None,
    };
    let q = tape.matmul(queries, w.wq)?;
    let k = tape.matmul(keys_values, w.wk)?;
    let v = tape.matmul(keys_values, w.wv)?;
    let mut heads = Vec::with_capacity(w.n_heads);
    for head in 0..w.n_heads {
        let qh = tape.slice_last(q, head * dk, dk)?;
        let kh = tape.slice_last(k, head * dk, dk)?;
        let vh = tape.slice_last(v, head * dk, dk)?;
        heads.push(attention(tape, qh, kh, vh, mask)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_last(&heads)?
    };
    tape.matmul(merged, w.wo)
}

pub fn causal_self_attention(
    tape: &mut Tape,
    x: Var,
    w: &AttentionVars,
    mask: &AttentionMask,
) -> Result<Var> {
    multi_head_attention(tape, x, x, w, Some(mask))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormWeights {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormVars {
    pub gain: Var,
    pub bias: Var,
}

impl LayerNormWeights {
    pub fn new(hidden: usize) -> Self {
        LayerNormWeights {
            gain: Tensor::full(&[hidden], 1.0),
            bias: Tensor::zeros(&[hidden]),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.gain"), &self.gain),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gain, &mut self.bias]
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerNormVars {
        LayerNormVars {
            gain: tape.param(self.gain.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

impl LayerNormVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gain, self.bias)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.gain, self.bias]
    }
}

/// One GPT-2 style block: `x += attn(ln1(x)); x += ffn(ln2(x))` with a
/// 4× feedforward expansion.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlockWeights {
    pub attn: AttentionWeights,
    pub ln1: LayerNormWeights,
    pub ln2: LayerNormWeights,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    pub attn: AttentionVars,
    pub ln1: LayerNormVars,
    pub ln2: LayerNormVars,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl TransformerBlockWeights {
    pub fn init<R: Rng + ?Sized>(hidden: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        Ok(TransformerBlockWeights {
            attn: AttentionWeights::init(hidden, n_heads, rng)?,
            ln1: LayerNormWeights::new(hidden),
            ln2: LayerNormWeights::new(hidden),
            w1: Tensor::randn(&[hidden, 4 * hidden], INIT_STD, rng),
            b1: Tensor::zeros(&[4 * hidden]),
            w2: Tensor::randn(&[4 * hidden, hidden], INIT_STD, rng),
            b2: Tensor::zeros(&[hidden]),
        })
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.attn.named(&format!("{prefix}.attn"));
        out.extend(self.ln1.named(&format!("{prefix}.ln1")));
        out.extend(self.ln2.named(&format!("{prefix}.ln2")));
        out.push((format!("{prefix}.ffn.w1"), &self.w1));
        out.push((format!("{prefix}.ffn.b1"), &self.b1));
        out.push((format!("{prefix}.ffn.w2"), &self.w2));
        out.push((format!("{prefix}.ffn.b2"), &self.b2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.attn.tensors_mut();
        out.extend(self.ln1.tensors_mut());
        out.extend(self.ln2.tensors_mut());
        out.extend([&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]);
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> BlockVars {
        BlockVars {
            attn: self.attn.bind(tape),
            ln1: self.ln1.bind(tape),
            ln2: self.ln2.bind(tape),
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }
}

impl BlockVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.attn.vars();
        out.extend(self.ln1.vars());
        out.extend(self.ln2.vars());
        out.extend([self.w1, self.b1, self.w2, self.b2]);
        out
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mask: &AttentionMask) -> Result<Var> {
        let n1 = self.ln1.apply(tape, x)?;
        let a = causal_self_attention(tape, n1, &self.attn, mask)?;
        let x = tape.add(x, a)?;
        let n2 = self.ln2.apply(tape, x)?;
        let f = feedforward(tape, n2, self.w1, self.b1, self.w2, self.b2)?;
        tape.add(x, f)
    }
}

/// `gelu(x·W1 + b1)·W2 + b2`.
pub fn feedforward(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let z = tape.matmul(x, w1)?;
    let z = tape.add_bias(z, b1)?;
    let z = tape.gelu(z);
    let z = tape.matmul(z, w2)?;
    tape.add_bias(z, b2)
}

/// The block stack plus its final layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights {
    pub blocks: Vec<TransformerBlockWeights>,
    pub ln_f: LayerNormWeights,
}

#[derive(Clone, Debug)]
pub struct TransformerVars {
    pub blocks: Vec<BlockVars>,
    pub ln_f: LayerNormVars,
}

impl TransformerWeights {
    pub fn init<R: Rng + ?Sized>(
        hidden: usize,
        n_blocks: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..n_blocks)
            .map(|_| TransformerBlockWeights::init(hidden, n_heads, rng))
            .collect::<Result<_>>()?;
        Ok(TransformerWeights {
            blocks,
            ln_f: LayerNormWeights::new(hidden),
        })
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("{prefix}.block{i}")));
        }
        out.extend(self.ln_f.named(&format!("{prefix}.ln_f")));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.extend(self.ln_f.tensors_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> TransformerVars {
        TransformerVars {
            blocks: self.blocks.iter().map(|b| b.bind(tape)).collect(),
            ln_f: self.ln_f.bind(tape),
        }
    }
}

impl TransformerVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.blocks.iter().flat_map(|b| b.vars()).collect();
        out.extend(self.ln_f.vars());
        out
    }
}

/// Run the causal stack over `h: [b, l, hidden]`.
///
/// `key_ok[b][j] == false` marks position `j` of entry `b` as padding: it is
/// hidden from every other query and its own output is never consumed.
pub fn causal_transformer(
    tape: &mut Tape,
    h: Var,
    stack: &TransformerVars,
    key_ok: &[Vec<bool>],
) -> Result<Var> {
    let s = tape.shape(h).to_vec();
    if s.len() != 3 || s[0] != key_ok.len() || key_ok.iter().any(|k| k.len() != s[1]) {
        return Err(CgmError::shape(
            "causal_transformer",
            &s,
            &[key_ok.len(), key_ok.first().map_or(0, |k| k.len())],
        ));
    }
    let mask = AttentionMask::causal_with_keys(key_ok);
    let mut x = h;
    for block in &stack.blocks {
        x = block.forward(tape, x, &mask)?;
    }
    stack.ln_f.apply(tape, x)
}

/// Output cross-attention: column-embedding queries attend over the start
/// row and the transformer outputs, followed by a residual from the query
/// and a layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputHeadWeights {
    pub start: Tensor,
    pub attn: AttentionWeights,
    pub ln: LayerNormWeights,
}

#[derive(Clone, Debug)]
pub struct OutputHeadVars {
    pub start: Var,
    pub attn: AttentionVars,
    pub ln: LayerNormVars,
}

impl OutputHeadWeights {
    pub fn init<R: Rng + ?Sized>(hidden: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        Ok(OutputHeadWeights {
            start: Tensor::randn(&[hidden], INIT_STD, rng),
            attn: AttentionWeights::init(hidden, n_heads, rng)?,
            ln: LayerNormWeights::new(hidden),
        })
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.start"), &self.start)];
        out.extend(self.attn.named(&format!("{prefix}.attn")));
        out.extend(self.ln.named(&format!("{prefix}.ln")));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.start];
        out.extend(self.attn.tensors_mut());
        out.extend(self.ln.tensors_mut());
        out
    }

    pub fn bind(&self, tape: &mut Tape) -> OutputHeadVars {
        OutputHeadVars {
            start: tape.param(self.start.clone()),
            attn: self.attn.bind(tape),
            ln: self.ln.bind(tape),
        }
    }
}

impl OutputHeadVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.start];
        out.extend(self.attn.vars());
        out.extend(self.ln.vars());
        out
    }
}

/// `y_i = LN(q_i + MHA(q_i, [start; R]))` where query `i` only sees the
/// start row and permitted rows of `r` at positions `< i`.
///
/// `queries` and `r` are `[b, l, hidden]`; the result has the same shape.
pub fn cross_attention_head(
    tape: &mut Tape,
    queries: Var,
    r: Var,
    head: &OutputHeadVars,
    key_ok: &[Vec<bool>],
) -> Result<Var> {
    let sq = tape.shape(queries).to_vec();
    if tape.shape(r) != sq.as_slice() {
        return Err(CgmError::shape("cross_attention_head", &sq, tape.shape(r)));
    }
    let r_aug = tape.prepend_row(r, head.start)?;
    let mask = AttentionMask::strict_prefix(key_ok);
    let attended = multi_head_attention(tape, queries, r_aug, &head.attn, Some(&mask))?;
    let resid = tape.add(queries, attended)?;
    head.ln.apply(tape, resid)
}
