//! Likelihood and machine-learning-efficacy evaluation of one synthesizer.

use cgm_core::codec::Codec;
use cgm_core::data::encode_row;
use cgm_core::rng::{derive_seed, substream, Stream};
use cgm_core::{Column, Kind, Table, Tensor, Value};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::logreg::{evaluate, Featurizer, LogisticRegression};
use crate::parametric::ParametricModel;
use crate::synth::{Identity, Synthesizer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedScores {
    /// Mean `log P(T_syn | M)`.
    pub l_syn: f64,
    /// Mean `log P(T_test | M')` with `M'` refitted on `T_syn`.
    pub l_test: f64,
    pub refit_converged: bool,
}

/// Draw `(T_train, T_test)` from `model` for `seed`.
pub fn simulate(model: &dyn ParametricModel, n_train: usize, n_test: usize, seed: u64) -> (Table, Table) {
    let train = model.sample(n_train, &mut substream(seed, Stream::Simulate, 0, 0));
    let test = model.sample(n_test, &mut substream(seed, Stream::Simulate, 1, 0));
    (train, test)
}

pub fn eval_simulated(
    model: &dyn ParametricModel,
    synth: &dyn Synthesizer,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<SimulatedScores> {
    let (train, test) = simulate(model, n_train, n_test, seed);
    let syn = synth.fit_generate(&train, n_train, derive_seed(seed, 2, 0))?;
    let l_syn = model.mean_log_prob(&syn)?;
    let refit = model.refit(&syn, derive_seed(seed, 3, 0))?;
    let l_test = refit.model.mean_log_prob(&test)?;
    if !refit.converged {
        log::warn!("refit on {} synthetic rows did not converge", syn.n_rows());
    }
    Ok(SimulatedScores {
        l_syn,
        l_test,
        refit_converged: refit.converged,
    })
}

/// Mean log-likelihood under `model` of fresh samples before and after a
/// round trip through the CGM's quantile codec (fitted on separate
/// training samples).
pub fn quantization_loss(model: &dyn ParametricModel, n: usize, seed: u64) -> Result<(f64, f64)> {
    let (train, test) = simulate(model, n, n, seed);
    let exact = model.mean_log_prob(&test)?;
    let schemas = train.fit_schemas(None)?;
    let codecs: Vec<Codec> = schemas
        .into_iter()
        .map(|s| {
            let e = Tensor::zeros(&[s.classes(), 1]);
            Codec::from_schema(s, e)
        })
        .collect::<std::result::Result<_, _>>()?;
    let schemas: Vec<_> = codecs.iter().map(|c| cgm_core::FeatureCodec::schema(c).clone()).collect();
    let mut rng = substream(seed, Stream::GenerateSample, u64::MAX, 0);
    let mut out = Table::empty(test.header().to_vec(), &test.kinds())?;
    for i in 0..test.n_rows() {
        let classes = encode_row(&schemas, &test.row(i))?;
        let row = classes
            .iter()
            .zip(&codecs)
            .map(|(c, codec)| c.map_or(Value::Missing, |c| codec.value_of(c, &mut rng)))
            .collect();
        out.push_row(row)?;
    }
    Ok((exact, model.mean_log_prob(&out)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficacyScores {
    pub accuracy: f64,
    pub f1: f64,
    /// The same classifier trained on the real training rows.
    pub identity_accuracy: f64,
    pub identity_f1: f64,
    /// Test classes absent from the synthetic data.
    pub missing_classes: Vec<String>,
}

pub fn eval_ml_efficacy(
    real_train: &Table,
    real_test: &Table,
    synth: &dyn Synthesizer,
    target: &str,
    seed: u64,
) -> Result<EfficacyScores> {
    let t = real_train
        .index_of(target)
        .ok_or_else(|| BenchError::Data(format!("unknown target column {target:?}")))?;
    if real_train.kinds()[t] != Kind::Categorical {
        return Err(BenchError::Data(format!("target column {target:?} must be categorical")));
    }
    let featurizer = Featurizer::fit(real_train, t)?;
    let syn = synth.fit_generate(real_train, real_train.n_rows(), derive_seed(seed, 2, 0))?;
    let model = LogisticRegression::fit(&syn, t, featurizer.clone())?;
    let scores = evaluate(&model, real_test, t);
    let reference = if synth.name() == Identity.name() {
        scores.clone()
    } else {
        evaluate(&LogisticRegression::fit(real_train, t, featurizer)?, real_test, t)
    };
    if !scores.missing_classes.is_empty() {
        log::warn!("synthetic data lacks classes {:?}", scores.missing_classes);
    }
    Ok(EfficacyScores {
        accuracy: scores.accuracy,
        f1: scores.macro_f1,
        identity_accuracy: reference.accuracy,
        identity_f1: reference.macro_f1,
        missing_classes: scores.missing_classes,
    })
}

pub const XOR_NOISE_COLUMNS: usize = 3;

/// `y = x1 XOR x2` with independent uniform noise columns; every column is
/// a two-level categorical.
pub fn xor_table(n: usize, seed: u64) -> Table {
    let mut rng = substream(seed, Stream::Simulate, 2, 0);
    let width = 2 + XOR_NOISE_COLUMNS;
    let mut cols: Vec<Vec<Option<String>>> = vec![Vec::with_capacity(n); width + 1];
    for _ in 0..n {
        let bits: Vec<bool> = (0..width).map(|_| rng.random()).collect();
        for (c, b) in bits.iter().enumerate() {
            cols[c].push(Some(if *b { "t" } else { "f" }.to_string()));
        }
        cols[width].push(Some(if bits[0] ^ bits[1] { "odd" } else { "even" }.to_string()));
    }
    let mut header = vec!["x1".to_string(), "x2".to_string()];
    header.extend((1..=XOR_NOISE_COLUMNS).map(|i| format!("noise{i}")));
    header.push("y".into());
    Table::new(header, cols.into_iter().map(Column::Categorical).collect()).expect("equal columns")
}
