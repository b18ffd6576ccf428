//! Benchmark configuration, cell execution and report rendering.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use cgm_core::data::{load_csv, split, SplitSpec};
use cgm_core::rng::derive_seed;
use cgm_core::{Table, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayesnet::DiscreteBayesNet;
use crate::error::{BenchError, Result};
use crate::eval::{eval_ml_efficacy, eval_simulated, quantization_loss, xor_table};
use crate::gmm::{GaussianMixture, MixtureModel};
use crate::parametric::ParametricModel;
use crate::synth::{by_name, SYNTHESIZERS};

pub const REPORT_VERSION: u32 = 1;

/// Built-in dataset names.
pub const BUILTIN_DATASETS: [&str; 5] = ["grid", "gridr", "ring", "bayesnet", "xor"];

/// A dataset entry: a built-in name or a user-supplied source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    Builtin(String),
    Csv {
        name: String,
        csv: PathBuf,
        target: String,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    BayesNet {
        name: String,
        bayesnet: PathBuf,
    },
}

fn default_test_fraction() -> f64 {
    0.3
}

impl DatasetSpec {
    pub fn name(&self) -> &str {
        match self {
            DatasetSpec::Builtin(n) => n,
            DatasetSpec::Csv { name, .. } | DatasetSpec::BayesNet { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub datasets: Vec<DatasetSpec>,
    pub synthesizers: Vec<String>,
    pub seeds: Vec<u64>,
    pub n_train: usize,
    pub n_test: usize,
    /// Parallel cells; 0 uses every available core.
    pub workers: usize,
    pub cgm: TrainConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            datasets: Vec::new(),
            synthesizers: Vec::new(),
            seeds: vec![0, 1, 2],
            n_train: 10_000,
            n_test: 10_000,
            workers: 0,
            cgm: TrainConfig::default(),
        }
    }
}

/// The shipped default: three simulated mixtures and the bundled network
/// against the four reference synthesizers.
pub const DEFAULT_CONFIG: &str = include_str!("../data/default_config.json");

impl BenchConfig {
    pub fn shipped_default() -> Self {
        serde_json::from_str(DEFAULT_CONFIG).expect("shipped config parses")
    }

    /// Semantic checks; messages start with a JSON pointer to the field.
    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.datasets.iter().enumerate() {
            match d {
                DatasetSpec::Builtin(n) if !BUILTIN_DATASETS.contains(&n.as_str()) => {
                    return Err(BenchError::Config(format!(
                        "/datasets/{i}: unknown dataset {n:?}; expected one of {BUILTIN_DATASETS:?} or a csv/bayesnet entry"
                    )))
                }
                DatasetSpec::Csv { test_fraction, .. } if !(*test_fraction > 0.0 && *test_fraction < 1.0) => {
                    return Err(BenchError::Config(format!(
                        "/datasets/{i}/test_fraction: {test_fraction} outside (0, 1)"
                    )))
                }
                _ => {}
            }
            if self.datasets[..i].iter().any(|e| e.name() == d.name()) {
                return Err(BenchError::Config(format!(
                    "/datasets/{i}: duplicate dataset name {:?}",
                    d.name()
                )));
            }
        }
        for (i, s) in self.synthesizers.iter().enumerate() {
            if !SYNTHESIZERS.contains(&s.as_str()) {
                return Err(BenchError::Config(format!(
                    "/synthesizers/{i}: unknown synthesizer {s:?}; expected one of {SYNTHESIZERS:?}"
                )));
            }
        }
        if self.n_train == 0 {
            return Err(BenchError::Config("/n_train: must be positive".into()));
        }
        if self.n_test == 0 {
            return Err(BenchError::Config("/n_test: must be positive".into()));
        }
        self.cgm
            .validate()
            .map_err(|e| BenchError::Config(format!("/cgm: {e}")))
    }

    /// Keep only entries whose `key` (`dataset`, `synthesizer` or `seed`)
    /// equals `value`.
    pub fn filtered(mut self, key: &str, value: &str) -> Result<Self> {
        match key {
            "dataset" => self.datasets.retain(|d| d.name() == value),
            "synthesizer" => self.synthesizers.retain(|s| s == value),
            "seed" => {
                let seed: u64 = value
                    .parse()
                    .map_err(|_| BenchError::Config(format!("seed filter {value:?} is not an integer")))?;
                self.seeds.retain(|s| *s == seed);
            }
            other => {
                return Err(BenchError::Config(format!(
                    "unknown filter key {other:?}; expected dataset, synthesizer or seed"
                )))
            }
        }
        Ok(self)
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

enum Source {
    Simulated(Box<dyn ParametricModel>),
    Xor,
    Csv {
        table: Table,
        target: String,
        test_fraction: f64,
    },
}

fn resolve(spec: &DatasetSpec) -> Result<Source> {
    Ok(match spec {
        DatasetSpec::Builtin(n) => match n.as_str() {
            "grid" => Source::Simulated(Box::new(MixtureModel::new(GaussianMixture::grid()))),
            "gridr" => Source::Simulated(Box::new(MixtureModel::new(GaussianMixture::gridr()))),
            "ring" => Source::Simulated(Box::new(MixtureModel::new(GaussianMixture::ring()))),
            "bayesnet" => Source::Simulated(Box::new(DiscreteBayesNet::bundled())),
            "xor" => Source::Xor,
            other => return Err(BenchError::Config(format!("unknown dataset {other:?}"))),
        },
        DatasetSpec::BayesNet { bayesnet, .. } => Source::Simulated(Box::new(DiscreteBayesNet::load(bayesnet)?)),
        DatasetSpec::Csv {
            csv,
            target,
            test_fraction,
            ..
        } => Source::Csv {
            table: load_csv(csv, None)?,
            target: target.clone(),
            test_fraction: *test_fraction,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub synthesizer: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub l_syn: Option<f64>,
    pub l_test: Option<f64>,
    pub refit_converged: Option<bool>,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub identity_accuracy: Option<f64>,
    pub identity_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_classes: Vec<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    /// `simulated`, `efficacy`, or `unavailable` when the source failed to load.
    pub kind: String,
    /// Mean log-likelihood of held-out samples under the true model.
    pub l_true: Option<f64>,
    /// The same after quantizing and dequantizing with the CGM's codec.
    pub l_quantized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Stat { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub synthesizer: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub l_syn: Option<Stat>,
    pub l_test: Option<Stat>,
    pub accuracy: Option<Stat>,
    pub f1: Option<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    pub config: BenchConfig,
    pub config_hash: String,
    pub datasets: Vec<DatasetInfo>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<Summary>,
}

impl BenchmarkReport {
    pub fn all_failed(&self) -> bool {
        !self.cells.is_empty() && self.cells.iter().all(|c| c.status == CellStatus::Failed)
    }

    pub fn summary_for(&self, dataset: &str, synthesizer: &str) -> Option<&Summary> {
        self.summary
            .iter()
            .find(|s| s.dataset == dataset && s.synthesizer == synthesizer)
    }
}

fn failed_cell(dataset: &str, synthesizer: &str, seed: u64, err: String, t: f64) -> CellResult {
    CellResult {
        dataset: dataset.into(),
        synthesizer: synthesizer.into(),
        seed,
        status: CellStatus::Failed,
        error: Some(err),
        l_syn: None,
        l_test: None,
        refit_converged: None,
        accuracy: None,
        f1: None,
        identity_accuracy: None,
        identity_f1: None,
        missing_classes: Vec::new(),
        wall_time_s: t,
    }
}

fn run_cell(config: &BenchConfig, source: &Source, dataset: &str, synth_name: &str, seed: u64) -> CellResult {
    let start = Instant::now();
    let cell_seed = derive_seed(seed, 0, 0);
    let result = (|| -> Result<CellResult> {
        let synth = by_name(synth_name, &config.cgm)?;
        let mut cell = failed_cell(dataset, synth_name, seed, String::new(), 0.0);
        cell.status = CellStatus::Ok;
        cell.error = None;
        match source {
            Source::Simulated(model) => {
                let s = eval_simulated(model.as_ref(), synth.as_ref(), config.n_train, config.n_test, cell_seed)?;
                cell.l_syn = Some(s.l_syn);
                cell.l_test = Some(s.l_test);
                cell.refit_converged = Some(s.refit_converged);
            }
            Source::Xor => {
                let train = xor_table(config.n_train, cell_seed);
                let test = xor_table(config.n_test, derive_seed(cell_seed, 1, 0));
                fill_efficacy(&mut cell, eval_ml_efficacy(&train, &test, synth.as_ref(), "y", cell_seed)?);
            }
            Source::Csv {
                table,
                target,
                test_fraction,
            } => {
                let spec = SplitSpec {
                    test_fraction: *test_fraction,
                    seed: cell_seed,
                    stratify_column: Some(target.clone()),
                };
                let (train, test) = split(table, &spec, None)?;
                fill_efficacy(
                    &mut cell,
                    eval_ml_efficacy(&train.table, &test.table, synth.as_ref(), target, cell_seed)?,
                );
            }
        }
        Ok(cell)
    })();
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok(mut c) => {
            c.wall_time_s = elapsed;
            c
        }
        Err(e) => {
            log::error!("{dataset} × {synth_name} seed {seed} failed: {e}");
            failed_cell(dataset, synth_name, seed, e.to_string(), elapsed)
        }
    }
}

fn fill_efficacy(cell: &mut CellResult, s: crate::eval::EfficacyScores) {
    cell.accuracy = Some(s.accuracy);
    cell.f1 = Some(s.f1);
    cell.identity_accuracy = Some(s.identity_accuracy);
    cell.identity_f1 = Some(s.identity_f1);
    cell.missing_classes = s.missing_classes;
}

/// Run every dataset × synthesizer × seed cell. Individual failures are
/// recorded in the report rather than aborting the run.
pub fn run_leaderboard(config: &BenchConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let mut sources = Vec::new();
    let mut datasets = Vec::new();
    for spec in &config.datasets {
        let name = spec.name().to_string();
        match resolve(spec) {
            Ok(src) => {
                let mut info = DatasetInfo {
                    name: name.clone(),
                    kind: "efficacy".into(),
                    l_true: None,
                    l_quantized: None,
                    error: None,
                };
                if let Source::Simulated(m) = &src {
                    info.kind = "simulated".into();
                    let seed = derive_seed(config.seeds.first().copied().unwrap_or(0), 0, 0);
                    match quantization_loss(m.as_ref(), config.n_test, seed) {
                        Ok((exact, quantized)) => {
                            info.l_true = Some(exact);
                            info.l_quantized = Some(quantized);
                        }
                        Err(e) => info.error = Some(e.to_string()),
                    }
                }
                datasets.push(info);
                sources.push(Some(src));
            }
            Err(e) => {
                log::error!("dataset {name}: {e}");
                datasets.push(DatasetInfo {
                    name,
                    kind: "unavailable".into(),
                    l_true: None,
                    l_quantized: None,
                    error: Some(e.to_string()),
                });
                sources.push(None);
            }
        }
    }

    let mut jobs = Vec::new();
    for (d, spec) in config.datasets.iter().enumerate() {
        for s in &config.synthesizers {
            for &seed in &config.seeds {
                jobs.push((d, spec.name().to_string(), s.clone(), seed));
            }
        }
    }
    let run = || -> Vec<CellResult> {
        jobs.par_iter()
            .map(|(d, dataset, synth, seed)| match &sources[*d] {
                Some(src) => run_cell(config, src, dataset, synth, *seed),
                None => failed_cell(dataset, synth, *seed, "dataset unavailable".into(), 0.0),
            })
            .collect()
    };
    let cells = if config.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| BenchError::Config(e.to_string()))?
            .install(run)
    };
    let summary = summarize(config, &cells);
    Ok(BenchmarkReport {
        version: REPORT_VERSION,
        config: config.clone(),
        config_hash: config.hash(),
        datasets,
        cells,
        summary,
    })
}

fn summarize(config: &BenchConfig, cells: &[CellResult]) -> Vec<Summary> {
    let mut out = Vec::new();
    for d in &config.datasets {
        for s in &config.synthesizers {
            let mine: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.dataset == d.name() && &c.synthesizer == s)
                .collect();
            let ok: Vec<&&CellResult> = mine.iter().filter(|c| c.status == CellStatus::Ok).collect();
            let stat = |f: fn(&CellResult) -> Option<f64>| {
                Stat::of(&ok.iter().filter_map(|c| f(c)).collect::<Vec<_>>())
            };
            out.push(Summary {
                dataset: d.name().to_string(),
                synthesizer: s.clone(),
                n_ok: ok.len(),
                n_failed: mine.len() - ok.len(),
                l_syn: stat(|c| c.l_syn),
                l_test: stat(|c| c.l_test),
                accuracy: stat(|c| c.accuracy),
                f1: stat(|c| c.f1),
            });
        }
    }
    out
}

/// Text leaderboard: one block per dataset, `mean ± std` per metric, the
/// best synthesizer in each column wrapped in `**`.
pub fn render_table(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    for info in &report.datasets {
        let rows: Vec<&Summary> = report.summary.iter().filter(|s| s.dataset == info.name).collect();
        let metrics: [(&str, fn(&Summary) -> Option<Stat>); 4] = [
            ("L_syn", |s| s.l_syn),
            ("L_test", |s| s.l_test),
            ("accuracy", |s| s.accuracy),
            ("f1", |s| s.f1),
        ];
        let shown: Vec<_> = metrics
            .iter()
            .filter(|(_, f)| rows.iter().any(|r| f(r).is_some()))
            .collect();
        let _ = write!(out, "{} ({})", info.name, info.kind);
        if let (Some(t), Some(q)) = (info.l_true, info.l_quantized) {
            let _ = write!(out, "  L(M) = {t:.4}, after quantization {q:.4}");
        }
        if let Some(e) = &info.error {
            let _ = write!(out, "  error: {e}");
        }
        out.push('\n');
        let _ = write!(out, "  {:<12}", "synthesizer");
        for (name, _) in &shown {
            let _ = write!(out, " {name:>22}");
        }
        out.push('\n');
        for r in &rows {
            let _ = write!(out, "  {:<12}", r.synthesizer);
            for (_, f) in &shown {
                let best = rows
                    .iter()
                    .filter_map(|x| f(x).map(|s| s.mean))
                    .fold(f64::NEG_INFINITY, f64::max);
                let cell = match f(r) {
                    Some(s) if s.mean == best => format!("**{:.4} ± {:.4}**", s.mean, s.std),
                    Some(s) => format!("{:.4} ± {:.4}", s.mean, s.std),
                    None => "n/a".into(),
                };
                let _ = write!(out, " {cell:>22}");
            }
            if r.n_failed > 0 {
                let _ = write!(out, "  ({} failed)", r.n_failed);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_uses_sample_deviation() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[5.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn empty_config_gives_empty_report() {
        let r = run_leaderboard(&BenchConfig::default()).unwrap();
        assert!(r.cells.is_empty() && r.summary.is_empty() && !r.all_failed());
    }

    #[test]
    fn filter_keeps_matching_entries() {
        let c = BenchConfig::shipped_default().filtered("dataset", "ring").unwrap();
        assert_eq!(c.datasets, vec![DatasetSpec::Builtin("ring".into())]);
        assert!(BenchConfig::shipped_default().filtered("colour", "x").is_err());
    }

    #[test]
    fn shipped_default_is_valid() {
        let c = BenchConfig::shipped_default();
        c.validate().unwrap();
        assert_eq!(c.datasets.len(), 4);
        assert_eq!(c.synthesizers.len(), 4);
        assert_eq!(c.seeds.len(), 3);
    }
}
