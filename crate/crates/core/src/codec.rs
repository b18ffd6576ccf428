//! Feature codecs: how a column type plugs into the model.
//!
//! A codec provides three things: an encoder from a cell value to a latent
//! vector, a decoder that samples a value given an output representation,
//! and the training loss for a true value under that representation.
//!
//! Two codecs are built in. [`CategoricalCodec`] owns an embedding matrix
//! `E` of shape `[classes, hidden]`; encoding is a row lookup and the
//! conditional distribution is `softmax(E · y)`, so the same storage drives
//! both directions. [`QuantileNumericalCodec`] wraps a categorical codec
//! over quantile bins and adds quantization/dequantization around it.

use std::collections::HashMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{CgmError, Result};
use crate::tape::tied_logits;
use crate::tensor::{log_softmax_at, softmax_vec, Tensor};
use crate::value::{Column, Kind, Value};

pub const DEFAULT_BINS: usize = 100;

/// Fitted description of one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<f64>,
    pub bin_count: usize,
    #[serde(default)]
    pub missing_allowed: bool,
}

impl FeatureSchema {
    /// Number of classes seen by the model (categories or bins).
    pub fn classes(&self) -> usize {
        self.bin_count
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CgmError::Schema(format!("column {:?}: {m}", self.name)));
        if self.bin_count == 0 {
            return bad("no classes".into());
        }
        match self.kind {
            Kind::Categorical => {
                if self.categories.len() != self.bin_count {
                    return bad(format!(
                        "{} categories but bin_count {}",
                        self.categories.len(),
                        self.bin_count
                    ));
                }
            }
            Kind::Numerical => {
                if self.edges.is_empty() || self.edges.iter().any(|e| !e.is_finite()) {
                    return bad("edges must be finite and non-empty".into());
                }
                if self.edges.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("edges must be strictly increasing".into());
                }
                if self.bin_count != (self.edges.len() - 1).max(1) {
                    return bad(format!(
                        "{} edges but bin_count {}",
                        self.edges.len(),
                        self.bin_count
                    ));
                }
            }
        }
        Ok(())
    }

    /// Class index of a present value.
    pub fn class_of(&self, v: &Value) -> Result<usize> {
        match (self.kind, v) {
            (Kind::Categorical, Value::Cat(s)) => self
                .categories
                .iter()
                .position(|c| c == s)
                .ok_or_else(|| CgmError::UnknownCategory {
                    column: self.name.clone(),
                    value: s.clone(),
                }),
            (Kind::Numerical, Value::Num(x)) => self.bin_of(*x),
            (_, Value::Missing) => Err(CgmError::contract(format!(
                "missing value in column {:?} cannot be encoded",
                self.name
            ))),
            (kind, v) => Err(CgmError::Schema(format!(
                "value {v:?} does not fit {kind:?} column {:?}",
                self.name
            ))),
        }
    }

    /// Left-closed bins `[e_b, e_{b+1})`, last bin closed on the right;
    /// values outside the fitted range clamp to the nearest end bin.
    pub fn bin_of(&self, x: f64) -> Result<usize> {
        if x.is_nan() {
            return Err(CgmError::Schema(format!("NaN in column {:?}", self.name)));
        }
        let above = self.edges.partition_point(|&e| e <= x);
        Ok(above.saturating_sub(1).min(self.bin_count - 1))
    }

    /// Closed interval covered by bin `b`.
    pub fn bin_bounds(&self, b: usize) -> (f64, f64) {
        if self.edges.len() == 1 {
            (self.edges[0], self.edges[0])
        } else {
            (self.edges[b], self.edges[b + 1])
        }
    }
}

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn fit_categorical<'a>(
    name: &str,
    values: impl IntoIterator<Item = Option<&'a str>>,
) -> Result<FeatureSchema> {
    let mut seen = HashMap::new();
    let mut categories = Vec::new();
    let mut missing = false;
    for v in values {
        match v {
            Some(s) => {
                if !seen.contains_key(s) {
                    seen.insert(s.to_string(), categories.len());
                    categories.push(s.to_string());
                }
            }
            None => missing = true,
        }
    }
    if categories.is_empty() {
        return Err(CgmError::Schema(format!("column {name:?} has no values")));
    }
    Ok(FeatureSchema {
        name: name.to_string(),
        kind: Kind::Categorical,
        bin_count: categories.len(),
        categories,
        edges: Vec::new(),
        missing_allowed: missing,
    })
}

/// `bins`-quantile edges with duplicates merged.
pub fn fit_numerical(name: &str, values: &[Option<f64>], bins: usize) -> Result<FeatureSchema> {
    if bins == 0 {
        return Err(CgmError::Schema(format!("column {name:?}: zero bins requested")));
    }
    let mut sorted: Vec<f64> = values.iter().flatten().copied().collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(CgmError::Schema(format!("column {name:?} has non-finite values")));
    }
    if sorted.is_empty() {
        return Err(CgmError::Schema(format!("column {name:?} has no values")));
    }
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (0..=bins)
        .map(|i| quantile_sorted(&sorted, i as f64 / bins as f64))
        .collect();
    edges.dedup();
    Ok(FeatureSchema {
        name: name.to_string(),
        kind: Kind::Numerical,
        categories: Vec::new(),
        bin_count: (edges.len() - 1).max(1),
        edges,
        missing_allowed: values.iter().any(|v| v.is_none()),
    })
}

pub fn fit_schema(name: &str, column: &Column, bins: usize) -> Result<FeatureSchema> {
    match column {
        Column::Categorical(v) => fit_categorical(name, v.iter().map(|s| s.as_deref())),
        Column::Numerical(v) => fit_numerical(name, v, bins),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dequantization {
    #[default]
    Uniform,
    Midpoint,
}

/// The encoder / decoder / loss contract every feature type satisfies.
pub trait FeatureCodec {
    fn schema(&self) -> &FeatureSchema;

    fn classes(&self) -> usize {
        self.schema().classes()
    }

    /// Latent input representation of a present value.
    fn encode(&self, v: &Value) -> Result<Vec<f64>>;

    /// Logits of `P(f | y)`.
    fn conditional_logits(&self, y: &[f64]) -> Vec<f64>;

    /// Negative log-likelihood of a present value given `y`.
    fn feature_loss(&self, y: &[f64], v: &Value) -> Result<f64>;

    /// Draw a value from `P(f | y)` with logits divided by `temperature`.
    fn decode_sample(&self, y: &[f64], temperature: f64, rng: &mut dyn RngCore) -> Value;
}

/// Inverse-CDF draw from a discrete distribution.
pub fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the total a hair under 1.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn tempered(mut logits: Vec<f64>, temperature: f64) -> Vec<f64> {
    if temperature != 1.0 {
        logits.iter_mut().for_each(|l| *l /= temperature);
    }
    logits
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalCodec {
    schema: FeatureSchema,
    embedding: Tensor,
}

impl CategoricalCodec {
    pub fn new(schema: FeatureSchema, embedding: Tensor) -> Result<Self> {
        schema.validate()?;
        if embedding.rank() != 2 || embedding.shape()[0] != schema.classes() {
            return Err(CgmError::shape(
                "categorical codec",
                embedding.shape(),
                &[schema.classes()],
            ));
        }
        Ok(CategoricalCodec { schema, embedding })
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn embedding_mut(&mut self) -> &mut Tensor {
        &mut self.embedding
    }

    pub fn hidden(&self) -> usize {
        self.embedding.last_dim()
    }

    fn sample_class(&self, y: &[f64], temperature: f64, rng: &mut dyn RngCore) -> usize {
        let logits = tempered(self.conditional_logits(y), temperature);
        let probs = softmax_vec(&logits).expect("finite logits");
        sample_index(&probs, rng)
    }
}

impl FeatureCodec for CategoricalCodec {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn encode(&self, v: &Value) -> Result<Vec<f64>> {
        let c = self.schema.class_of(v)?;
        Ok(self.embedding.row(c).to_vec())
    }

    fn conditional_logits(&self, y: &[f64]) -> Vec<f64> {
        tied_logits(self.embedding.data(), self.classes(), y)
    }

    fn feature_loss(&self, y: &[f64], v: &Value) -> Result<f64> {
        let c = self.schema.class_of(v)?;
        Ok(-log_softmax_at(&self.conditional_logits(y), c))
    }

    fn decode_sample(&self, y: &[f64], temperature: f64, rng: &mut dyn RngCore) -> Value {
        let c = self.sample_class(y, temperature, rng);
        Value::Cat(self.schema.categories[c].clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileNumericalCodec {
    inner: CategoricalCodec,
    pub dequantization: Dequantization,
}

impl QuantileNumericalCodec {
    pub fn new(schema: FeatureSchema, embedding: Tensor, dequantization: Dequantization) -> Result<Self> {
        if schema.kind != Kind::Numerical {
            return Err(CgmError::Schema(format!(
                "column {:?} is not numerical",
                schema.name
            )));
        }
        Ok(QuantileNumericalCodec {
            inner: CategoricalCodec::new(schema, embedding)?,
            dequantization,
        })
    }

    pub fn categorical(&self) -> &CategoricalCodec {
        &self.inner
    }

    /// Map bin `b` back to a value inside its interval.
    pub fn dequantize(&self, b: usize, rng: &mut dyn RngCore) -> f64 {
        let (lo, hi) = self.inner.schema.bin_bounds(b);
        match self.dequantization {
            Dequantization::Midpoint => 0.5 * (lo + hi),
            Dequantization::Uniform => {
                let u: f64 = rng.random();
                (lo + u * (hi - lo)).clamp(lo, hi)
            }
        }
    }
}

impl FeatureCodec for QuantileNumericalCodec {
    fn schema(&self) -> &FeatureSchema {
        &self.inner.schema
    }

    fn encode(&self, v: &Value) -> Result<Vec<f64>> {
        self.inner.encode(v)
    }

    fn conditional_logits(&self, y: &[f64]) -> Vec<f64> {
        self.inner.conditional_logits(y)
    }

    fn feature_loss(&self, y: &[f64], v: &Value) -> Result<f64> {
        self.inner.feature_loss(y, v)
    }

    fn decode_sample(&self, y: &[f64], temperature: f64, rng: &mut dyn RngCore) -> Value {
        let b = self.inner.sample_class(y, temperature, rng);
        Value::Num(self.dequantize(b, rng))
    }
}

/// Closed set of built-in codecs, stored by the model.
#[derive(Clone, Debug, PartialEq)]
pub enum Codec {
    Categorical(CategoricalCodec),
    Numerical(QuantileNumericalCodec),
}

impl Codec {
    pub fn from_schema(schema: FeatureSchema, embedding: Tensor) -> Result<Self> {
        match schema.kind {
            Kind::Categorical => Ok(Codec::Categorical(CategoricalCodec::new(schema, embedding)?)),
            Kind::Numerical => Ok(Codec::Numerical(QuantileNumericalCodec::new(
                schema,
                embedding,
                Dequantization::default(),
            )?)),
        }
    }

    fn base(&self) -> &CategoricalCodec {
        match self {
            Codec::Categorical(c) => c,
            Codec::Numerical(n) => &n.inner,
        }
    }

    pub fn embedding(&self) -> &Tensor {
        self.base().embedding()
    }

    pub fn embedding_mut(&mut self) -> &mut Tensor {
        match self {
            Codec::Categorical(c) => c.embedding_mut(),
            Codec::Numerical(n) => n.inner.embedding_mut(),
        }
    }

    pub fn set_dequantization(&mut self, mode: Dequantization) {
        if let Codec::Numerical(n) = self {
            n.dequantization = mode;
        }
    }

    /// Turn a sampled class into a cell value.
    pub fn value_of(&self, class: usize, rng: &mut dyn RngCore) -> Value {
        match self {
            Codec::Categorical(c) => Value::Cat(c.schema.categories[class].clone()),
            Codec::Numerical(n) => Value::Num(n.dequantize(class, rng)),
        }
    }
}

impl FeatureCodec for Codec {
    fn schema(&self) -> &FeatureSchema {
        &self.base().schema
    }

    fn encode(&self, v: &Value) -> Result<Vec<f64>> {
        self.base().encode(v)
    }

    fn conditional_logits(&self, y: &[f64]) -> Vec<f64> {
        self.base().conditional_logits(y)
    }

    fn feature_loss(&self, y: &[f64], v: &Value) -> Result<f64> {
        self.base().feature_loss(y, v)
    }

    fn decode_sample(&self, y: &[f64], temperature: f64, rng: &mut dyn RngCore) -> Value {
        match self {
            Codec::Categorical(c) => c.decode_sample(y, temperature, rng),
            Codec::Numerical(n) => n.decode_sample(y, temperature, rng),
        }
    }
}
