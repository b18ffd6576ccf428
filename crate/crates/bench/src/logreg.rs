//! Multinomial logistic regression over one-hot features, used to score
//! machine-learning efficacy.
//!
//! Categorical columns are one-hot encoded, numerical columns are one-hot
//! encoded by quantile bin. Pairwise products of small one-hot groups are
//! added so the classifier can express interactions such as XOR.

use cgm_core::codec::{fit_numerical, fit_schema, FeatureSchema};
use cgm_core::optim::{adam_step, AdamConfig, AdamState};
use cgm_core::{Column, Table, Tensor, Value};

use crate::error::{BenchError, Result};

pub const L2: f64 = 1e-3;
pub const ITERATIONS: usize = 200;
pub const LEARNING_RATE: f64 = 0.1;
const FEATURE_BINS: usize = 10;
/// Largest `levels_a * levels_b` for which a pairwise block is added.
const MAX_INTERACTION_BLOCK: usize = 100;

/// Maps rows to active feature indices.
#[derive(Clone, Debug)]
pub struct Featurizer {
    columns: Vec<usize>,
    schemas: Vec<FeatureSchema>,
    offsets: Vec<usize>,
    pairs: Vec<(usize, usize, usize)>,
    width: usize,
}

impl Featurizer {
    /// Fit level sets on `reference`, skipping `target`.
    pub fn fit(reference: &Table, target: usize) -> Result<Self> {
        let mut columns = Vec::new();
        let mut schemas = Vec::new();
        for (i, (name, col)) in reference.header().iter().zip(reference.columns()).enumerate() {
            if i == target {
                continue;
            }
            let s = match col {
                Column::Numerical(v) => fit_numerical(name, v, FEATURE_BINS)?,
                Column::Categorical(_) => fit_schema(name, col, 1)?,
            };
            columns.push(i);
            schemas.push(s);
        }
        let mut offsets = Vec::with_capacity(schemas.len());
        let mut width = 0;
        for s in &schemas {
            offsets.push(width);
            width += s.classes();
        }
        let mut pairs = Vec::new();
        for a in 0..schemas.len() {
            for b in a + 1..schemas.len() {
                let block = schemas[a].classes() * schemas[b].classes();
                if block <= MAX_INTERACTION_BLOCK {
                    pairs.push((a, b, width));
                    width += block;
                }
            }
        }
        Ok(Featurizer {
            columns,
            schemas,
            offsets,
            pairs,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Active indices; unseen categories and missing cells activate nothing.
    pub fn active(&self, row: &[Value]) -> Vec<usize> {
        let levels: Vec<Option<usize>> = self
            .columns
            .iter()
            .zip(&self.schemas)
            .map(|(&c, s)| s.class_of(&row[c]).ok())
            .collect();
        let mut out: Vec<usize> = levels
            .iter()
            .zip(&self.offsets)
            .filter_map(|(l, off)| l.map(|l| off + l))
            .collect();
        for &(a, b, off) in &self.pairs {
            if let (Some(la), Some(lb)) = (levels[a], levels[b]) {
                out.push(off + la * self.schemas[b].classes() + lb);
            }
        }
        out
    }
}

/// Fitted classifier over the classes seen in its training data.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    pub classes: Vec<String>,
    featurizer: Featurizer,
    /// `[width + 1, classes]`; the last row is the bias.
    weights: Tensor,
}

fn label(v: &Value) -> Option<String> {
    match v {
        Value::Missing => None,
        v => Some(v.to_string()),
    }
}

impl LogisticRegression {
    /// Train on `data` with features laid out by `featurizer`.
    pub fn fit(data: &Table, target: usize, featurizer: Featurizer) -> Result<Self> {
        let mut classes: Vec<String> = (0..data.n_rows())
            .filter_map(|i| label(&data.columns()[target].get(i)))
            .collect();
        classes.sort();
        classes.dedup();
        if classes.is_empty() {
            return Err(BenchError::Data("classifier training data has no labels".into()));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..data.n_rows() {
            let row = data.row(i);
            if let Some(y) = label(&row[target]) {
                ys.push(classes.binary_search(&y).expect("collected above"));
                xs.push(featurizer.active(&row));
            }
        }
        let k = classes.len();
        let d = featurizer.width() + 1;
        let mut weights = Tensor::zeros(&[d, k]);
        let mut state = AdamState::new(&[&weights]);
        let cfg = AdamConfig {
            lr: LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
        };
        let n = xs.len() as f64;
        for _ in 0..ITERATIONS {
            let mut grad = Tensor::zeros(&[d, k]);
            for (x, &y) in xs.iter().zip(&ys) {
                let mut p = scores(&weights, x, k);
                softmax_in_place(&mut p);
                p[y] -= 1.0;
                let g = grad.data_mut();
                for &f in x.iter().chain(std::iter::once(&(d - 1))) {
                    for c in 0..k {
                        g[f * k + c] += p[c] / n;
                    }
                }
            }
            let w = weights.data();
            let g = grad.data_mut();
            for i in 0..(d - 1) * k {
                g[i] += L2 * w[i];
            }
            adam_step(&mut [&mut weights], &[Some(&grad)], &mut state, &cfg)?;
        }
        Ok(LogisticRegression {
            classes,
            featurizer,
            weights,
        })
    }

    pub fn predict(&self, row: &[Value]) -> &str {
        let s = scores(&self.weights, &self.featurizer.active(row), self.classes.len());
        let best = (0..s.len()).fold(0, |b, c| if s[c] > s[b] { c } else { b });
        &self.classes[best]
    }
}

fn scores(w: &Tensor, active: &[usize], k: usize) -> Vec<f64> {
    let d = w.shape()[0];
    let w = w.data();
    let mut s = w[(d - 1) * k..d * k].to_vec();
    for &f in active {
        for c in 0..k {
            s[c] += w[f * k + c];
        }
    }
    s
}

fn softmax_in_place(s: &mut [f64]) {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    s.iter_mut().for_each(|v| *v /= total);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Test classes the classifier can never predict.
    pub missing_classes: Vec<String>,
}

/// Accuracy and macro-F1 of `model` on `test`. The macro average runs over
/// every class seen in `test` or predicted; classes the model cannot
/// produce score 0.
pub fn evaluate(model: &LogisticRegression, test: &Table, target: usize) -> Scores {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for i in 0..test.n_rows() {
        let row = test.row(i);
        if let Some(y) = label(&row[target]) {
            pred.push(model.predict(&row).to_string());
            truth.push(y);
        }
    }
    let mut labels: Vec<String> = truth.iter().chain(&pred).cloned().collect();
    labels.sort();
    labels.dedup();
    let correct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
    let f1s: Vec<f64> = labels
        .iter()
        .map(|c| {
            let tp = truth.iter().zip(&pred).filter(|(t, p)| *t == c && *p == c).count() as f64;
            let fp = pred.iter().filter(|p| *p == c).count() as f64 - tp;
            let fnn = truth.iter().filter(|t| *t == c).count() as f64 - tp;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fnn)
            }
        })
        .collect();
    let missing_classes = truth
        .iter()
        .filter(|t| !model.classes.contains(t))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    Scores {
        accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
        macro_f1: if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 },
        missing_classes,
    }
}
