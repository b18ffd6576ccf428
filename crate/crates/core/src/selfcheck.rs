//! Randomized correctness suites shared by the test targets: finite-difference
//! gradients, strict-prefix causality and exact normalization.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::codec::{fit_categorical, FeatureSchema};
use crate::error::Result;
use crate::gradcheck::{check, rel_err, GradReport, REL_FLOOR};
use crate::model::{ModelConfig, ModelParams, Slot};
use crate::rng::{substream, CgmRng, Stream};
use crate::tape::{Tape, TiedTarget, Var};
use crate::tensor::Tensor;
use crate::transformer::{
    attention, causal_transformer, cross_attention_head, AttentionMask, OutputHeadWeights,
    TransformerWeights,
};

pub const FD_STEP: f64 = 1e-5;
/// Ops affine in each input element have no truncation error, so a wide
/// step only shrinks round-off.
pub const LINEAR_FD_STEP: f64 = 1e-3;
pub const LINEAR_TOL: f64 = 1e-6;
pub const NONLINEAR_TOL: f64 = 1e-4;

pub fn cat_schema(name: &str, classes: usize) -> FeatureSchema {
    let labels: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    fit_categorical(name, labels.iter().map(|s| Some(s.as_str()))).expect("distinct labels")
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        n_blocks: 2,
        n_heads: 2,
    }
}

/// A model over categorical features `f0, f1, ...` with the given class
/// counts, every weight redrawn from `N(0, std²)` so outputs are far from
/// uniform.
pub fn random_model(classes: &[usize], config: ModelConfig, seed: u64, std: f64) -> Result<ModelParams> {
    let schemas = classes
        .iter()
        .enumerate()
        .map(|(i, &d)| cat_schema(&format!("f{i}"), d))
        .collect();
    let mut m = ModelParams::init(schemas, config, seed)?;
    let mut rng = substream(seed, Stream::Baseline, 99, 0);
    for t in m.tensors_mut() {
        *t = Tensor::randn(t.shape(), std, &mut rng);
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub linear: bool,
    pub report: GradReport,
}

impl OpCheck {
    pub fn tolerance(&self) -> f64 {
        if self.linear {
            LINEAR_TOL
        } else {
            NONLINEAR_TOL
        }
    }

    pub fn passed(&self) -> bool {
        self.report.max_rel_err <= self.tolerance()
    }
}

/// Reduce `out` to a scalar with fixed random weights so every element
/// receives a distinct upstream gradient.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut r = substream(seed, Stream::Baseline, 8, 0);
    let w = tape.constant(Tensor::randn(tape.shape(out), 1.0, &mut r));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn projected(t: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Build {
    Box::new(move |tp, v| {
        let o = f(tp, v)?;
        project(tp, o, t)
    })
}

/// Finite-difference check of every tape op on random inputs.
pub fn op_gradients(trial: u64) -> Result<Vec<OpCheck>> {
    let mut r = substream(trial, Stream::Baseline, 7, 0);
    let mut n = |shape: &[usize]| Tensor::randn(shape, 1.0, &mut r);
    let t = trial;
    let mask = AttentionMask::causal_with_keys(&[vec![true, false, true, true], vec![true; 4]]).additive()?;
    let cases: Vec<(&'static str, bool, Vec<Tensor>, Build)> = vec![
        ("matmul", true, vec![n(&[3, 4]), n(&[4, 2])], projected(t, |tp, v| tp.matmul(v[0], v[1]))),
        ("batched matmul", true, vec![n(&[2, 3, 4]), n(&[2, 4, 5])], projected(t, |tp, v| tp.matmul(v[0], v[1]))),
        ("broadcast matmul", true, vec![n(&[2, 3, 4]), n(&[4, 5])], projected(t, |tp, v| tp.matmul(v[0], v[1]))),
        ("transpose", true, vec![n(&[2, 3, 4])], projected(t, |tp, v| tp.transpose(v[0]))),
        ("add", true, vec![n(&[3, 4]), n(&[3, 4])], projected(t, |tp, v| tp.add(v[0], v[1]))),
        ("add_bias", true, vec![n(&[2, 3, 4]), n(&[4])], projected(t, |tp, v| tp.add_bias(v[0], v[1]))),
        ("scale", true, vec![n(&[5])], projected(t, |tp, v| Ok(tp.scale(v[0], -1.7)))),
        ("reshape", true, vec![n(&[2, 6])], projected(t, |tp, v| tp.reshape(v[0], &[3, 4]))),
        ("slice_last", true, vec![n(&[2, 3, 6])], projected(t, |tp, v| tp.slice_last(v[0], 2, 3))),
        (
            "concat_last",
            true,
            vec![n(&[2, 3]), n(&[2, 2])],
            projected(t, |tp, v| tp.concat_last(&[v[0], v[1], v[0]])),
        ),
        (
            "gather_rows",
            true,
            vec![n(&[4, 3]), n(&[2, 3])],
            projected(t, |tp, v| tp.gather_rows(&[(v[0], 2), (v[1], 0), (v[0], 2), (v[0], 3)])),
        ),
        ("prepend_row", true, vec![n(&[2, 3, 4]), n(&[4])], projected(t, |tp, v| tp.prepend_row(v[0], v[1]))),
        ("sum", true, vec![n(&[3, 2])], Box::new(|tp: &mut Tape, v: &[Var]| Ok(tp.sum(v[0])))),
        ("mul", false, vec![n(&[3, 4]), n(&[3, 4])], projected(t, |tp, v| tp.mul(v[0], v[1]))),
        ("gelu", false, vec![n(&[10])], projected(t, |tp, v| Ok(tp.gelu(v[0])))),
        (
            "layer_norm",
            false,
            vec![n(&[2, 3, 5]), n(&[5]), n(&[5])],
            projected(t, |tp, v| tp.layer_norm(v[0], v[1], v[2])),
        ),
        ("softmax", false, vec![n(&[2, 3, 4])], projected(t, |tp, v| tp.softmax(v[0]))),
        (
            "masked attention",
            false,
            vec![n(&[2, 4, 3]), n(&[2, 4, 3]), n(&[2, 4, 3])],
            projected(t, move |tp, v| {
                let m = tp.constant(mask.clone());
                attention(tp, v[0], v[1], v[2], Some(m))
            }),
        ),
        (
            "tied cross-entropy",
            false,
            vec![n(&[3, 4]), n(&[5, 4]), n(&[2, 4])],
            Box::new(|tp: &mut Tape, v: &[Var]| {
                tp.tied_cross_entropy(
                    v[0],
                    vec![
                        TiedTarget { row: 0, embedding: v[1], class: 3 },
                        TiedTarget { row: 2, embedding: v[2], class: 1 },
                        TiedTarget { row: 1, embedding: v[1], class: 0 },
                    ],
                )
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(op, linear, inputs, build)| {
            let step = if linear { LINEAR_FD_STEP } else { FD_STEP };
            Ok(OpCheck {
                op,
                linear,
                report: check(&inputs, step, build)?,
            })
        })
        .collect()
}

/// Largest relative error between the analytic gradient of the full CGM
/// loss and central differences, on a 3-feature toy table of four random
/// permuted rows with random context dropping.
pub fn model_gradient(trial: u64) -> Result<f64> {
    let classes = [3, 2, 4];
    let mut model = random_model(&classes, toy_config(), trial, 0.3)?;
    let mut r: CgmRng = substream(trial + 100, Stream::Baseline, 7, 0);
    let seqs: Vec<Vec<Slot>> = (0..4)
        .map(|_| {
            let mut order = [0, 1, 2];
            order.shuffle(&mut r);
            order
                .iter()
                .map(|&f| Slot {
                    feature: f,
                    class: Some(r.random_range(0..classes[f])),
                    key: r.random::<f64>() > 0.2,
                    target: true,
                })
                .collect()
        })
        .collect();
    let (_, grads) = model.loss_and_grads(&seqs)?;
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        for j in 0..model.tensors_mut()[ti].len() {
            let x0 = model.tensors_mut()[ti].data()[j];
            model.tensors_mut()[ti].data_mut()[j] = x0 + FD_STEP;
            let up = model.loss_and_grads(&seqs)?.0;
            model.tensors_mut()[ti].data_mut()[j] = x0 - FD_STEP;
            let down = model.loss_and_grads(&seqs)?.0;
            model.tensors_mut()[ti].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = g.as_ref().map_or(0.0, |g| g.data()[j]);
            worst = worst.max(rel_err(analytic, numeric, REL_FLOOR));
        }
    }
    Ok(worst)
}

fn rows_equal(a: &Tensor, b: &Tensor, start: usize, end: usize, width: usize) -> bool {
    let (a, b) = (a.data(), b.data());
    a[start * width..end * width]
        .iter()
        .zip(&b[start * width..end * width])
        .all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Perturb one input row of a random transformer plus output head and
/// check that transformer rows before it and head outputs up to it stay
/// bitwise identical. Returns a description of the first violation.
pub fn causality(config: u64) -> Result<Option<String>> {
    let mut rng = substream(config, Stream::Baseline, 1, 0);
    let b = rng.random_range(1..4);
    let l = rng.random_range(1..7);
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let h = heads * rng.random_range(1..4);
    let key_ok: Vec<Vec<bool>> = (0..b)
        .map(|_| (0..l).map(|_| rng.random::<f64>() > 0.3).collect())
        .collect();
    let stack = TransformerWeights::init(h, 2, heads, &mut rng)?;
    let head = OutputHeadWeights::init(h, heads, &mut rng)?;
    let inputs = Tensor::randn(&[b, l, h], 1.0, &mut rng);
    let queries = Tensor::randn(&[b, l, h], 1.0, &mut rng);
    let run = |x: &Tensor| -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let sv = stack.bind(&mut tape);
        let hv = head.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let qv = tape.constant(queries.clone());
        let r = causal_transformer(&mut tape, xv, &sv, &key_ok)?;
        let y = cross_attention_head(&mut tape, qv, r, &hv, &key_ok)?;
        Ok((tape.value(r).clone(), tape.value(y).clone()))
    };
    let (r0, y0) = run(&inputs)?;
    let bi = rng.random_range(0..b);
    let j = rng.random_range(0..l);
    let mut bumped = inputs.clone();
    for v in &mut bumped.data_mut()[(bi * l + j) * h..(bi * l + j + 1) * h] {
        *v += rng.random_range(-3.0..3.0);
    }
    let (r1, y1) = run(&bumped)?;
    for e in 0..b {
        let (r_end, y_end) = if e == bi { (j, j + 1) } else { (l, l) };
        if !rows_equal(&r0, &r1, e * l, e * l + r_end, h) {
            return Ok(Some(format!("config {config}: R rows of sequence {e} before {j} changed")));
        }
        if !rows_equal(&y0, &y1, e * l, e * l + y_end, h) {
            return Ok(Some(format!("config {config}: y rows of sequence {e} up to {j} changed")));
        }
    }
    Ok(None)
}

/// `Σ_rows P(row)` of a random two-feature model under each of `orders`
/// random feature orders.
pub fn enumerated_mass(classes: [usize; 2], seed: u64, orders: usize) -> Result<Vec<f64>> {
    let model = random_model(&classes, toy_config(), seed, 0.8)?;
    let mut rng = substream(seed, Stream::Baseline, 4, 0);
    (0..orders)
        .map(|_| {
            let mut order = vec![0, 1];
            order.shuffle(&mut rng);
            let items: Vec<_> = (0..classes[0])
                .flat_map(|a| (0..classes[1]).map(move |b| (a, b)))
                .map(|(a, b)| (vec![Some(a), Some(b)], order.clone()))
                .collect();
            Ok(model.log_likelihoods(&items)?.iter().map(|l| l.exp()).sum())
        })
        .collect()
}
