//! Synthesizers: trivial baselines, a mode-collapse probe and the CGM.

use cgm_core::codec::{fit_numerical, sample_index, FeatureSchema, DEFAULT_BINS};
use cgm_core::rng::{derive_seed, substream, CgmRng, Stream};
use cgm_core::{generate, train, Column, GenerateOptions, Table, TableDataset, TrainConfig, Value};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub trait Synthesizer: Send + Sync {
    fn name(&self) -> &str;

    /// Learn from `train` and return `n` synthetic rows with the same
    /// header.
    fn fit_generate(&self, train: &Table, n: usize, seed: u64) -> Result<Table>;
}

/// Names accepted in benchmark configs.
pub const SYNTHESIZERS: [&str; 5] = ["uniform", "independent", "identity", "collapse", "cgm"];

pub fn by_name(name: &str, cgm: &TrainConfig) -> Result<Box<dyn Synthesizer>> {
    Ok(match name {
        "uniform" => Box::new(Uniform),
        "independent" => Box::new(Independent),
        "identity" => Box::new(Identity),
        "collapse" => Box::new(Collapse),
        "cgm" => Box::new(Cgm {
            config: cgm.clone(),
            generate: GenerateOptions::default(),
        }),
        other => {
            return Err(BenchError::Config(format!(
                "unknown synthesizer {other:?}; expected one of {SYNTHESIZERS:?}"
            )))
        }
    })
}

fn observed<T: Clone>(v: &[Option<T>]) -> Vec<T> {
    v.iter().flatten().cloned().collect()
}

fn build(train: &Table, columns: Vec<Column>) -> Result<Table> {
    Ok(Table::new(train.header().to_vec(), columns)?)
}

fn column_rng(seed: u64, column: usize) -> CgmRng {
    substream(seed, Stream::Baseline, column as u64, 0)
}

/// Each column uniform over its observed support: categories with equal
/// probability, numbers uniform on `[min, max]`.
pub struct Uniform;

impl Synthesizer for Uniform {
    fn name(&self) -> &str {
        "uniform"
    }

    fn fit_generate(&self, train: &Table, n: usize, seed: u64) -> Result<Table> {
        let mut cols = Vec::with_capacity(train.n_cols());
        for (c, col) in train.columns().iter().enumerate() {
            let mut rng = column_rng(seed, c);
            cols.push(match col {
                Column::Categorical(v) => {
                    let mut cats = observed(v);
                    cats.sort();
                    cats.dedup();
                    if cats.is_empty() {
                        return Err(BenchError::Data(format!("column {c} has no values")));
                    }
                    Column::Categorical(
                        (0..n)
                            .map(|_| Some(cats[rng.random_range(0..cats.len())].clone()))
                            .collect(),
                    )
                }
                Column::Numerical(v) => {
                    let xs = observed(v);
                    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if xs.is_empty() {
                        return Err(BenchError::Data(format!("column {c} has no values")));
                    }
                    Column::Numerical((0..n).map(|_| Some(uniform_in(lo, hi, &mut rng))).collect())
                }
            });
        }
        build(train, cols)
    }
}

fn uniform_in(lo: f64, hi: f64, rng: &mut CgmRng) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Each column drawn independently from its empirical marginal; numbers
/// via quantile bins with uniform placement inside the chosen bin.
pub struct Independent;

impl Synthesizer for Independent {
    fn name(&self) -> &str {
        "independent"
    }

    fn fit_generate(&self, train: &Table, n: usize, seed: u64) -> Result<Table> {
        let mut cols = Vec::with_capacity(train.n_cols());
        for (c, (col, name)) in train.columns().iter().zip(train.header()).enumerate() {
            let mut rng = column_rng(seed, c);
            cols.push(match col {
                Column::Categorical(v) => {
                    let xs = observed(v);
                    if xs.is_empty() {
                        return Err(BenchError::Data(format!("column {name:?} has no values")));
                    }
                    Column::Categorical(
                        (0..n)
                            .map(|_| Some(xs[rng.random_range(0..xs.len())].clone()))
                            .collect(),
                    )
                }
                Column::Numerical(v) => {
                    let schema = fit_numerical(name, v, DEFAULT_BINS)?;
                    let probs = bin_frequencies(&schema, &observed(v))?;
                    Column::Numerical(
                        (0..n)
                            .map(|_| {
                                let (lo, hi) = schema.bin_bounds(sample_index(&probs, &mut rng));
                                Some(uniform_in(lo, hi, &mut rng))
                            })
                            .collect(),
                    )
                }
            });
        }
        build(train, cols)
    }
}

fn bin_frequencies(schema: &FeatureSchema, xs: &[f64]) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; schema.bin_count];
    for &x in xs {
        counts[schema.bin_of(x)?] += 1.0;
    }
    let total = xs.len() as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

/// The training rows themselves, cycled when more rows are requested.
pub struct Identity;

impl Synthesizer for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn fit_generate(&self, train: &Table, n: usize, _seed: u64) -> Result<Table> {
        if train.n_rows() == 0 {
            return Err(BenchError::Data("identity needs training rows".into()));
        }
        let rows: Vec<usize> = (0..n).map(|i| i % train.n_rows()).collect();
        Ok(train.select_rows(&rows))
    }
}

/// Bins per numerical column when locating the densest cell.
const COLLAPSE_BINS: usize = 10;

/// A maximally mode-collapsed generator: every output row is the same
/// typical point of the most populated cell of the training data.
pub struct Collapse;

impl Collapse {
    /// The constant row this synthesizer emits for `train`.
    pub fn representative(train: &Table) -> Result<Vec<Value>> {
        let schemas: Vec<FeatureSchema> = train
            .header()
            .iter()
            .zip(train.columns())
            .map(|(name, col)| match col {
                Column::Numerical(v) => Ok(fit_numerical(name, v, COLLAPSE_BINS)?),
                Column::Categorical(_) => Ok(cgm_core::codec::fit_schema(name, col, 1)?),
            })
            .collect::<Result<_>>()?;
        let mut cells: std::collections::BTreeMap<Vec<Option<usize>>, Vec<usize>> = Default::default();
        for i in 0..train.n_rows() {
            let key = cgm_core::data::encode_row(&schemas, &train.row(i))?;
            cells.entry(key).or_default().push(i);
        }
        let (_, members) = cells
            .iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(a.0)))
            .ok_or_else(|| BenchError::Data("collapse needs training rows".into()))?;
        Ok(train
            .columns()
            .iter()
            .map(|col| match col {
                Column::Numerical(v) => {
                    let mut xs: Vec<f64> = members.iter().filter_map(|&i| v[i]).collect();
                    xs.sort_by(f64::total_cmp);
                    xs.get(xs.len() / 2).map_or(Value::Missing, |&x| Value::Num(x))
                }
                Column::Categorical(_) => col.get(members[0]),
            })
            .collect())
    }
}

impl Synthesizer for Collapse {
    fn name(&self) -> &str {
        "collapse"
    }

    fn fit_generate(&self, train: &Table, n: usize, _seed: u64) -> Result<Table> {
        let row = Self::representative(train)?;
        let mut out = Table::empty(train.header().to_vec(), &train.kinds())?;
        for _ in 0..n {
            out.push_row(row.clone())?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cgm {
    pub config: TrainConfig,
    #[serde(skip)]
    pub generate: GenerateOptions,
}

impl Synthesizer for Cgm {
    fn name(&self) -> &str {
        "cgm"
    }

    fn fit_generate(&self, train_table: &Table, n: usize, seed: u64) -> Result<Table> {
        let ds = TableDataset::fit(train_table.clone(), None)?;
        let cfg = TrainConfig {
            seed,
            ..self.config.clone()
        };
        let out = train(&ds, &cfg)?;
        Ok(generate(&out.params, n, derive_seed(seed, 1, 0), &self.generate)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table::new(
            vec!["c".into(), "x".into()],
            vec![
                Column::Categorical(vec![Some("a".into()), Some("b".into()), Some("a".into()), None]),
                Column::Numerical(vec![Some(1.0), Some(2.0), Some(1.5), Some(9.0)]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_returns_training_rows() {
        let t = table();
        assert_eq!(Identity.fit_generate(&t, 4, 0).unwrap(), t);
    }

    #[test]
    fn baselines_stay_in_support() {
        let t = table();
        for s in [&Uniform as &dyn Synthesizer, &Independent] {
            let g = s.fit_generate(&t, 200, 3).unwrap();
            assert_eq!(g.header(), t.header());
            for i in 0..200 {
                match &g.row(i)[..] {
                    [Value::Cat(c), Value::Num(x)] => {
                        assert!(c == "a" || c == "b");
                        assert!((1.0..=9.0).contains(x));
                    }
                    other => panic!("{other:?}"),
                }
            }
        }
    }

    #[test]
    fn collapse_is_constant() {
        let g = Collapse.fit_generate(&table(), 5, 0).unwrap();
        let first = g.row(0);
        assert!((1..5).all(|i| g.row(i) == first));
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(by_name("gan", &TrainConfig::default()), Err(BenchError::Config(_))));
    }
}
