//! The composable generative model.
//!
//! A row is presented as a sequence of its present features in some order.
//! Each element is the feature's encoded value plus its column embedding.
//! The causal transformer turns the sequence into representations `R`; the
//! output head then lets the column embedding of the feature at position
//! `k` attend over a learned start row and `R` at positions `< k`, yielding
//! `y_k`, from which the feature's codec defines `P(f_k | y_k)`.
//!
//! Training draws a fresh feature order per example per epoch, so the model
//! learns every conditional it may later be asked for. Generation samples
//! one feature at a time along a random order.

use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{sample_index, Codec, Dequantization, FeatureCodec, FeatureSchema};
use crate::data::{batches, encode_row, PermutedExample, TableDataset, Table};
use crate::error::{CgmError, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::rng::{substream, Stream};
use crate::tape::{Tape, TiedTarget, Var};
use crate::tensor::{log_softmax_at, softmax_vec, Tensor};
use crate::transformer::{
    causal_transformer, cross_attention_head, OutputHeadVars, OutputHeadWeights,
    TransformerVars, TransformerWeights, INIT_STD,
};
use crate::value::{Column, Value};

/// Rows handled by one forward pass during generation and scoring.
const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            n_blocks: 2,
            n_heads: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Randomly hide features from the conditioning context while still
    /// predicting them.
    pub prefix_subsampling: bool,
    pub drop_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let a = AdamConfig::default();
        TrainConfig {
            hidden: m.hidden,
            n_blocks: m.n_blocks,
            n_heads: m.n_heads,
            epochs: 15,
            batch_size: 128,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            seed: 0,
            prefix_subsampling: true,
            drop_prob: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.n_heads == 0 || !self.hidden.is_multiple_of(self.n_heads) {
            return Err(CgmError::contract(format!(
                "hidden {} must be a positive multiple of n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if self.batch_size == 0 {
            return Err(CgmError::contract("batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(CgmError::contract("drop_prob must be in [0, 1)"));
        }
        if !(self.lr > 0.0) {
            return Err(CgmError::contract("learning rate must be positive"));
        }
        Ok(())
    }

    fn effective_drop(&self) -> f64 {
        if self.prefix_subsampling {
            self.drop_prob
        } else {
            0.0
        }
    }
}

/// All learned weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// One codec per feature; each owns its embedding matrix.
    pub codecs: Vec<Codec>,
    /// Column embeddings, `[n_features, hidden]`.
    pub columns: Tensor,
    pub transformer: TransformerWeights,
    pub head: OutputHeadWeights,
}

struct Bound {
    embeddings: Vec<Var>,
    columns: Var,
    transformer: TransformerVars,
    head: OutputHeadVars,
    zero: Var,
}

impl Bound {
    fn vars(&self) -> Vec<Var> {
        let mut out = self.embeddings.clone();
        out.push(self.columns);
        out.extend(self.transformer.vars());
        out.extend(self.head.vars());
        out
    }
}

/// One position of an input sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub feature: usize,
    pub class: Option<usize>,
    /// Visible as context to later positions (requires a class).
    pub key: bool,
    /// Contributes `-log P(class | y)` to the loss (requires a class).
    pub target: bool,
}

impl Slot {
    pub fn observed(feature: usize, class: usize) -> Self {
        Slot {
            feature,
            class: Some(class),
            key: true,
            target: true,
        }
    }

    pub fn query(feature: usize) -> Self {
        Slot {
            feature,
            class: None,
            key: false,
            target: false,
        }
    }
}

impl From<&PermutedExample> for Vec<Slot> {
    fn from(ex: &PermutedExample) -> Self {
        ex.order
            .iter()
            .zip(&ex.classes)
            .zip(&ex.keys)
            .map(|((&f, &c), &k)| Slot {
                feature: f,
                class: Some(c),
                key: k,
                target: true,
            })
            .collect()
    }
}

struct Forward {
    y: Var,
    loss: Option<Var>,
}

impl ModelParams {
    pub fn init(schemas: Vec<FeatureSchema>, config: ModelConfig, seed: u64) -> Result<Self> {
        if schemas.is_empty() {
            return Err(CgmError::Schema("model needs at least one feature".into()));
        }
        let mut rng = substream(seed, Stream::Init, 0, 0);
        let h = config.hidden;
        let codecs = schemas
            .into_iter()
            .map(|s| {
                let e = Tensor::randn(&[s.classes(), h], INIT_STD, &mut rng);
                Codec::from_schema(s, e)
            })
            .collect::<Result<Vec<_>>>()?;
        let columns = Tensor::randn(&[codecs.len(), h], INIT_STD, &mut rng);
        let transformer = TransformerWeights::init(h, config.n_blocks, config.n_heads, &mut rng)?;
        let head = OutputHeadWeights::init(h, config.n_heads, &mut rng)?;
        Ok(ModelParams {
            config,
            codecs,
            columns,
            transformer,
            head,
        })
    }

    pub fn n_features(&self) -> usize {
        self.codecs.len()
    }

    pub fn schemas(&self) -> Vec<FeatureSchema> {
        self.codecs.iter().map(|c| c.schema().clone()).collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.codecs.iter().map(|c| c.schema().name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.codecs
            .iter()
            .position(|c| c.schema().name == name)
            .ok_or_else(|| CgmError::UnknownColumn(name.to_string()))
    }

    pub fn set_dequantization(&mut self, mode: Dequantization) {
        self.codecs.iter_mut().for_each(|c| c.set_dequantization(mode));
    }

    pub fn dequantization(&self) -> Dequantization {
        self.codecs
            .iter()
            .find_map(|c| match c {
                Codec::Numerical(n) => Some(n.dequantization),
                Codec::Categorical(_) => None,
            })
            .unwrap_or_default()
    }

    /// Every weight with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .codecs
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("codec{i}.embedding"), c.embedding()))
            .collect();
        out.push(("columns".into(), &self.columns));
        out.extend(self.transformer.named("transformer"));
        out.extend(self.head.named("head"));
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.codecs.iter_mut().map(|c| c.embedding_mut()).collect();
        out.push(&mut self.columns);
        out.extend(self.transformer.tensors_mut());
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            embeddings: self
                .codecs
                .iter()
                .map(|c| tape.param(c.embedding().clone()))
                .collect(),
            columns: tape.param(self.columns.clone()),
            transformer: self.transformer.bind(tape),
            head: self.head.bind(tape),
            zero: tape.constant(Tensor::zeros(&[1, self.config.hidden])),
        }
    }

    fn check_seqs(&self, seqs: &[Vec<Slot>]) -> Result<usize> {
        let l = seqs.first().map_or(0, Vec::len);
        if l == 0 {
            return Err(CgmError::contract("empty sequence batch"));
        }
        for s in seqs {
            if s.len() != l {
                return Err(CgmError::contract("sequences in a batch must share a length"));
            }
            for slot in s {
                if slot.feature >= self.n_features() {
                    return Err(CgmError::contract(format!("feature {} out of range", slot.feature)));
                }
                if (slot.key || slot.target) && slot.class.is_none() {
                    return Err(CgmError::contract("key or target slot without a class"));
                }
                if let Some(c) = slot.class {
                    if c >= self.codecs[slot.feature].classes() {
                        return Err(CgmError::contract(format!(
                            "class {c} out of range for feature {}",
                            slot.feature
                        )));
                    }
                }
            }
        }
        Ok(l)
    }

    fn forward_slots(&self, tape: &mut Tape, bound: &Bound, seqs: &[Vec<Slot>]) -> Result<Forward> {
        let l = self.check_seqs(seqs)?;
        let b = seqs.len();
        let h = self.config.hidden;
        let mut col_rows = Vec::with_capacity(b * l);
        let mut val_rows = Vec::with_capacity(b * l);
        let mut targets = Vec::new();
        let mut key_ok = Vec::with_capacity(b);
        for (bi, seq) in seqs.iter().enumerate() {
            key_ok.push(seq.iter().map(|s| s.key).collect::<Vec<_>>());
            for (pos, s) in seq.iter().enumerate() {
                col_rows.push((bound.columns, s.feature));
                match (s.key, s.class) {
                    (true, Some(c)) => val_rows.push((bound.embeddings[s.feature], c)),
                    _ => val_rows.push((bound.zero, 0)),
                }
                if s.target {
                    targets.push(TiedTarget {
                        row: bi * l + pos,
                        embedding: bound.embeddings[s.feature],
                        class: s.class.expect("checked"),
                    });
                }
            }
        }
        let cols = tape.gather_rows(&col_rows)?;
        let vals = tape.gather_rows(&val_rows)?;
        let inputs = tape.add(vals, cols)?;
        let inputs = tape.reshape(inputs, &[b, l, h])?;
        let r = causal_transformer(tape, inputs, &bound.transformer, &key_ok)?;
        let queries = tape.reshape(cols, &[b, l, h])?;
        let y = cross_attention_head(tape, queries, r, &bound.head, &key_ok)?;
        let loss = if targets.is_empty() {
            None
        } else {
            let flat = tape.reshape(y, &[b * l, h])?;
            Some(tape.tied_cross_entropy(flat, targets)?)
        };
        Ok(Forward { y, loss })
    }

    /// Output representations `[batch, len, hidden]` for explicit slot
    /// sequences, without recording gradients.
    pub fn representations(&self, seqs: &[Vec<Slot>]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let fwd = self.forward_slots(&mut tape, &bound, seqs)?;
        Ok(tape.value(fwd.y).clone())
    }

    /// Output representations and mean per-example loss for a batch of
    /// permuted training examples.
    pub fn forward(&self, batch: &[PermutedExample]) -> Result<(Tensor, f64)> {
        let seqs: Vec<Vec<Slot>> = batch.iter().map(Vec::<Slot>::from).collect();
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let fwd = self.forward_slots(&mut tape, &bound, &seqs)?;
        let loss = match fwd.loss {
            Some(l) => tape.value(l).item()? / batch.len() as f64,
            None => 0.0,
        };
        Ok((tape.value(fwd.y).clone(), loss))
    }

    /// Mean loss over `seqs` and its gradient for every tensor, in
    /// [`tensors_mut`](Self::tensors_mut) order.
    pub fn loss_and_grads(&self, seqs: &[Vec<Slot>]) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let fwd = self.forward_slots(&mut tape, &bound, seqs)?;
        let total = fwd
            .loss
            .ok_or_else(|| CgmError::contract("batch has no targets"))?;
        let loss = tape.scale(total, 1.0 / seqs.len() as f64);
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(CgmError::Numeric(format!(
                "loss became {value}; lower the learning rate or check inputs for overflow"
            )));
        }
        let mut grads = tape.backward(loss)?;
        let g = bound.vars().into_iter().map(|v| grads.take(v)).collect();
        Ok((value, g))
    }

    /// Per-position `log P(f_k | y_k)` of fully observed sequences.
    pub fn sequence_log_probs(&self, seqs: &[Vec<Slot>]) -> Result<Vec<Vec<f64>>> {
        let y = self.representations(seqs)?;
        let l = seqs[0].len();
        Ok(seqs
            .iter()
            .enumerate()
            .map(|(bi, seq)| {
                seq.iter()
                    .enumerate()
                    .map(|(pos, s)| {
                        let logits = self.codecs[s.feature].conditional_logits(y.row(bi * l + pos));
                        log_softmax_at(&logits, s.class.expect("scored slot has a class"))
                    })
                    .collect()
            })
            .collect())
    }

    /// `P(feature | prefix)` where `prefix` lists `(feature, class)` pairs in
    /// sequence order.
    pub fn conditional_probs(&self, prefix: &[(usize, usize)], feature: usize) -> Result<Vec<f64>> {
        let mut seq: Vec<Slot> = prefix.iter().map(|&(f, c)| Slot::observed(f, c)).collect();
        seq.push(Slot::query(feature));
        let l = seq.len();
        let y = self.representations(&[seq])?;
        softmax_vec(&self.codecs[feature].conditional_logits(y.row(l - 1)))
    }

    /// `Σ_k log P(f_k | f_<k)` of one row under the given feature order.
    pub fn log_likelihood(&self, row: &[Option<usize>], order: &[usize]) -> Result<f64> {
        Ok(self.log_likelihoods(&[(row.to_vec(), order.to_vec())])?[0])
    }

    /// Batched [`log_likelihood`](Self::log_likelihood); rows are scored in
    /// parallel.
    pub fn log_likelihoods(&self, items: &[(Vec<Option<usize>>, Vec<usize>)]) -> Result<Vec<f64>> {
        let mut seqs = Vec::with_capacity(items.len());
        for (row, order) in items {
            if row.len() != self.n_features() {
                return Err(CgmError::contract(format!(
                    "row has {} features, model has {}",
                    row.len(),
                    self.n_features()
                )));
            }
            if order.is_empty() {
                return Err(CgmError::contract("empty feature order"));
            }
            let mut seen = vec![false; row.len()];
            let mut seq = Vec::with_capacity(order.len());
            for &f in order {
                if f >= row.len() || std::mem::replace(&mut seen[f], true) {
                    return Err(CgmError::contract(format!("invalid feature order {order:?}")));
                }
                let c = row[f].ok_or_else(|| {
                    CgmError::contract(format!("feature {f} is missing from the row"))
                })?;
                seq.push(Slot::observed(f, c));
            }
            seqs.push(seq);
        }
        // Group equal lengths so each forward pass has one shape.
        let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, s) in seqs.iter().enumerate() {
            by_len.entry(s.len()).or_default().push(i);
        }
        let jobs: Vec<Vec<usize>> = by_len
            .values()
            .flat_map(|ids| ids.chunks(INFERENCE_CHUNK).map(<[usize]>::to_vec))
            .collect();
        let scored: Vec<(Vec<usize>, Vec<f64>)> = jobs
            .into_par_iter()
            .map(|ids| {
                let batch: Vec<Vec<Slot>> = ids.iter().map(|&i| seqs[i].clone()).collect();
                let lp = self.sequence_log_probs(&batch)?;
                Ok((ids, lp.into_iter().map(|v| v.iter().sum()).collect()))
            })
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; seqs.len()];
        for (ids, vals) in scored {
            for (i, v) in ids.into_iter().zip(vals) {
                out[i] = v;
            }
        }
        Ok(out)
    }

    /// Check that `columns` matches this model's features exactly.
    pub fn check_columns(&self, columns: &[String]) -> Result<()> {
        let names = self.column_names();
        if names != columns {
            return Err(CgmError::SchemaMismatch(crate::data::column_diff(&names, columns)));
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-example loss of each epoch.
    pub history: Vec<f64>,
}

pub fn train(ds: &TableDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(ds, cfg, |_, _| {})
}

/// Shuffled-order training; `on_epoch(epoch, mean_loss)` runs after each
/// epoch.
pub fn train_with(
    ds: &TableDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let rows = ds.encode()?;
    let mut params = ModelParams::init(ds.schemas.clone(), cfg.model(), cfg.seed)?;
    let mut state = {
        let named = params.named_tensors();
        AdamState::new(&named.iter().map(|(_, t)| *t).collect::<Vec<_>>())
    };
    let adam = cfg.adam();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_batches = batches(&rows, cfg.batch_size, cfg.seed, epoch as u64, cfg.effective_drop());
        let (mut total, mut count) = (0.0, 0usize);
        for batch in &epoch_batches {
            let seqs: Vec<Vec<Slot>> = batch.iter().map(Vec::<Slot>::from).collect();
            let (loss, grads) = params.loss_and_grads(&seqs).map_err(|e| match e {
                CgmError::NonFinite(what) | CgmError::Numeric(what) => CgmError::Numeric(format!(
                    "epoch {}, step {}: {what} (lr = {:e})",
                    epoch + 1,
                    state.step() + 1,
                    cfg.lr
                )),
                e => e,
            })?;
            total += loss * batch.len() as f64;
            count += batch.len();
            let grad_refs: Vec<Option<&Tensor>> = grads.iter().map(Option::as_ref).collect();
            adam_step(&mut params.tensors_mut(), &grad_refs, &mut state, &adam)?;
        }
        if count == 0 {
            return Err(CgmError::Schema("no row has any present feature".into()));
        }
        let mean = total / count as f64;
        log::info!("epoch {}: mean loss {mean:.6}", epoch + 1);
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(TrainOutcome { params, history })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    /// Logits are divided by this before sampling.
    pub temperature: f64,
    /// Use this feature order for every row instead of a random one.
    pub fixed_order: Option<Vec<usize>>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            temperature: 1.0,
            fixed_order: None,
        }
    }
}

/// Sample `count` complete rows.
pub fn generate(params: &ModelParams, count: usize, seed: u64, opts: &GenerateOptions) -> Result<Table> {
    conditional_generate(params, &[], count, seed, opts)
}

/// Sample `count` rows with the given `(column, value)` pairs held fixed.
/// Fixed features come first in every sequence and are echoed verbatim.
pub fn conditional_generate(
    params: &ModelParams,
    fixed: &[(String, Value)],
    count: usize,
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Table> {
    if !(opts.temperature > 0.0) {
        return Err(CgmError::contract("temperature must be positive"));
    }
    let n = params.n_features();
    let mut fixed_cells = Vec::with_capacity(fixed.len());
    for (name, v) in fixed {
        let f = params.feature_index(name)?;
        if fixed_cells.iter().any(|(g, _, _): &(usize, usize, Value)| *g == f) {
            return Err(CgmError::contract(format!("column {name:?} fixed twice")));
        }
        let class = params.codecs[f].schema().class_of(v)?;
        fixed_cells.push((f, class, v.clone()));
    }
    if let Some(order) = &opts.fixed_order {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(CgmError::contract(format!("{order:?} is not a feature permutation")));
        }
    }
    let row_ids: Vec<usize> = (0..count).collect();
    let chunks: Vec<Vec<Vec<Value>>> = row_ids
        .par_chunks(INFERENCE_CHUNK)
        .map(|ids| generate_chunk(params, ids, &fixed_cells, seed, opts))
        .collect::<Result<_>>()?;
    let header = params.column_names();
    let mut columns: Vec<Column> = params
        .codecs
        .iter()
        .map(|c| Column::empty(c.schema().kind))
        .collect();
    for row in chunks.into_iter().flatten() {
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v).map_err(|v| CgmError::contract(format!("generated {v:?} of wrong kind")))?;
        }
    }
    Table::new(header, columns)
}

fn row_order(
    n: usize,
    row: usize,
    fixed: &[(usize, usize, Value)],
    seed: u64,
    opts: &GenerateOptions,
) -> Vec<usize> {
    let mut order: Vec<usize> = fixed.iter().map(|(f, _, _)| *f).collect();
    let rest: Vec<usize> = match &opts.fixed_order {
        Some(o) => o.iter().copied().filter(|f| !order.contains(f)).collect(),
        None => {
            let mut r: Vec<usize> = (0..n).filter(|f| !order.contains(f)).collect();
            r.shuffle(&mut substream(seed, Stream::GenerateOrder, row as u64, 0));
            r
        }
    };
    order.extend(rest);
    order
}

fn generate_chunk(
    params: &ModelParams,
    rows: &[usize],
    fixed: &[(usize, usize, Value)],
    seed: u64,
    opts: &GenerateOptions,
) -> Result<Vec<Vec<Value>>> {
    let n = params.n_features();
    let orders: Vec<Vec<usize>> = rows.iter().map(|&r| row_order(n, r, fixed, seed, opts)).collect();
    let mut classes: Vec<Vec<usize>> = vec![fixed.iter().map(|(_, c, _)| *c).collect(); rows.len()];
    let mut values: Vec<Vec<Value>> = vec![vec![Value::Missing; n]; rows.len()];
    for row in values.iter_mut() {
        for (f, _, v) in fixed {
            row[*f] = v.clone();
        }
    }
    for k in fixed.len()..n {
        let seqs: Vec<Vec<Slot>> = orders
            .iter()
            .zip(&classes)
            .map(|(order, cls)| {
                let mut s: Vec<Slot> = (0..k).map(|p| Slot::observed(order[p], cls[p])).collect();
                s.push(Slot::query(order[k]));
                s
            })
            .collect();
        let y = params.representations(&seqs)?;
        let l = k + 1;
        for (bi, &r) in rows.iter().enumerate() {
            let f = orders[bi][k];
            let codec = &params.codecs[f];
            let mut rng = substream(seed, Stream::GenerateSample, r as u64, f as u64);
            let class = sample_class(codec, y.row(bi * l + k), opts.temperature, &mut rng)?;
            classes[bi].push(class);
            values[bi][f] = codec.value_of(class, &mut rng);
        }
    }
    Ok(values)
}

fn sample_class(codec: &Codec, y: &[f64], temperature: f64, rng: &mut dyn RngCore) -> Result<usize> {
    let mut logits = codec.conditional_logits(y);
    if temperature != 1.0 {
        logits.iter_mut().for_each(|v| *v /= temperature);
    }
    let probs = softmax_vec(&logits)?;
    Ok(sample_index(&probs, rng))
}

/// Encode `table` against the model's schemas; fails on unknown categories
/// or mismatched columns.
pub fn encode_table(params: &ModelParams, table: &Table) -> Result<Vec<Vec<Option<usize>>>> {
    params.check_columns(table.header())?;
    let schemas = params.schemas();
    (0..table.n_rows())
        .map(|i| encode_row(&schemas, &table.row(i)))
        .collect()
}
