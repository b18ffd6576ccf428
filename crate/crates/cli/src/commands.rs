use std::fs;
use std::path::{Path, PathBuf};

use cgm_bench::{render_table, run_leaderboard, BenchConfig};
use cgm_core::checkpoint;
use cgm_core::codec::Dequantization;
use cgm_core::data::{load_hints, ColumnHint};
use cgm_core::model::encode_table;
use cgm_core::rng::{substream, Stream};
use cgm_core::{
    conditional_generate, load_csv, train_with, GenerateOptions, Kind, ModelParams, SchemaHints,
    TableDataset, TrainConfig, Value,
};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::failure::{Failure, ALL_CELLS_FAILED};
use crate::{BenchmarkArgs, DequantizationArg, EvaluateArgs, GenerateArgs, OrderArg, TrainArgs};

type Outcome = Result<(), Failure>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::args(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = e.path().to_string().replace(['.', '['], "/").replace(']', "");
        let pointer = if pointer == "/" || pointer.is_empty() {
            String::from("/")
        } else {
            format!("/{}", pointer.trim_start_matches('/'))
        };
        Failure::args(format!("{}: {pointer}: {}", path.display(), e.inner()))
    })
}

fn load_checkpoint(path: &Path) -> Result<ModelParams, Failure> {
    checkpoint::load(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $flag:ident) => {
            if let Some(v) = a.$flag {
                cfg.$field = v;
            }
        };
    }
    set!(epochs, epochs);
    set!(batch_size, batch);
    set!(lr, lr);
    set!(beta1, beta1);
    set!(beta2, beta2);
    set!(hidden, hidden);
    set!(n_blocks, blocks);
    set!(n_heads, heads);
    set!(drop_prob, drop_prob);
    if a.no_prefix_subsampling {
        cfg.prefix_subsampling = false;
    }
    cfg.seed = a.seed.seed;
    cfg.validate().map_err(|e| Failure::args(e.to_string()))?;
    Ok(cfg)
}

#[derive(Serialize)]
struct History<'a> {
    config: &'a TrainConfig,
    rows: usize,
    parameters: usize,
    loss: &'a [f64],
}

pub fn train(a: TrainArgs) -> Outcome {
    let cfg = train_config(&a)?;
    let hints = match &a.schema {
        Some(p) => Some(load_hints(p).map_err(|e| Failure::args(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let table = load_csv(&a.data, hints.as_ref())?;
    let ds = TableDataset::fit(table, hints.as_ref())?;
    log::info!("training on {} rows", ds.n_rows());
    let outcome = train_with(&ds, &cfg, |epoch, loss| {
        println!("epoch {:>3}/{}  loss {loss:.6}", epoch + 1, cfg.epochs);
    })?;
    checkpoint::save(&outcome.params, &a.out)?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.json");
        PathBuf::from(p)
    });
    write_json(
        &history_path,
        &History {
            config: &cfg,
            rows: ds.n_rows(),
            parameters: outcome.params.parameter_count(),
            loss: &outcome.history,
        },
    )?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn parse_fixed(params: &ModelParams, specs: &[String]) -> Result<Vec<(String, Value)>, Failure> {
    let schemas = params.schemas();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let (col, raw) = spec
            .split_once('=')
            .ok_or_else(|| Failure::args(format!("--fixed {spec:?}: expected COLUMN=VALUE")))?;
        let idx = params
            .feature_index(col)
            .map_err(|_| Failure::args(format!("--fixed: unknown column {col:?}")))?;
        let schema = &schemas[idx];
        let value = match schema.kind {
            Kind::Categorical => Value::Cat(raw.to_string()),
            Kind::Numerical => match raw.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Value::Num(x),
                _ => return Err(Failure::args(format!("--fixed {col}: {raw:?} is not a finite number"))),
            },
        };
        schema.class_of(&value).map_err(|e| Failure::args(format!("--fixed {col}: {e}")))?;
        out.push((col.to_string(), value));
    }
    Ok(out)
}

pub fn generate(a: GenerateArgs) -> Outcome {
    let mut params = load_checkpoint(&a.ckpt)?;
    params.set_dequantization(match a.dequantization {
        DequantizationArg::Uniform => Dequantization::Uniform,
        DequantizationArg::Midpoint => Dequantization::Midpoint,
    });
    if !(a.temperature > 0.0) || !a.temperature.is_finite() {
        return Err(Failure::args("--temperature must be a positive number"));
    }
    let fixed = parse_fixed(&params, &a.fixed)?;
    let fixed_order = match &a.order {
        None => None,
        Some(names) => Some(
            names
                .iter()
                .map(|n| {
                    params
                        .feature_index(n.trim())
                        .map_err(|_| Failure::args(format!("--order: unknown column {n:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    let opts = GenerateOptions {
        temperature: a.temperature,
        fixed_order,
    };
    let table = conditional_generate(&params, &fixed, a.rows, a.seed.seed, &opts).map_err(|e| match e {
        cgm_core::CgmError::Contract(m) => Failure::args(m),
        e => e.into(),
    })?;
    table.save_csv(&a.out)?;
    log::info!("wrote {} rows to {}", table.n_rows(), a.out.display());
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
struct RepeatResult {
    repeat: usize,
    mean_log_likelihood: f64,
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    checkpoint: String,
    data: String,
    order: OrderArg,
    repeats: usize,
    seed: u64,
    rows: usize,
    scored_rows: usize,
    /// Cells absent from the table, which are left out of the product.
    missing_cells: usize,
    /// Rows with no present cell; not scored.
    empty_rows: usize,
    mean: f64,
    std: f64,
    results: Vec<RepeatResult>,
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    if a.repeats == 0 {
        return Err(Failure::args("--repeats must be at least 1"));
    }
    let params = load_checkpoint(&a.ckpt)?;
    let hints: SchemaHints = params
        .schemas()
        .into_iter()
        .map(|s| (s.name, ColumnHint { kind: s.kind, bins: None }))
        .collect();
    let mut table = load_csv(&a.data, None)?;
    params.check_columns(table.header())?;
    if table.kinds() != params.schemas().iter().map(|s| s.kind).collect::<Vec<_>>() {
        table = load_csv(&a.data, Some(&hints))?;
    }
    let rows = encode_table(&params, &table)?;
    let n = params.n_features();
    let present: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].iter().any(Option::is_some)).collect();
    let missing_cells = rows.iter().flatten().filter(|c| c.is_none()).count();
    let empty_rows = rows.len() - present.len();
    if present.is_empty() {
        return Err(Failure::data("no row has a present cell"));
    }
    let repeats = if a.order == OrderArg::Fixed { 1 } else { a.repeats };
    let mut results = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let items: Vec<(Vec<Option<usize>>, Vec<usize>)> = present
            .iter()
            .map(|&i| {
                let row = &rows[i];
                let mut order: Vec<usize> = (0..n).filter(|&f| row[f].is_some()).collect();
                if a.order == OrderArg::Random {
                    order.shuffle(&mut substream(a.seed.seed, Stream::Permutation, r as u64, i as u64));
                }
                (row.clone(), order)
            })
            .collect();
        let ll = params.log_likelihoods(&items)?;
        let mean = ll.iter().sum::<f64>() / ll.len() as f64;
        results.push(RepeatResult {
            repeat: r,
            mean_log_likelihood: mean,
        });
    }
    let means: Vec<f64> = results.iter().map(|r| r.mean_log_likelihood).collect();
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let std = if means.len() > 1 {
        (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (means.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    if missing_cells > 0 {
        println!("skipped {missing_cells} missing cells");
    }
    println!("mean log-likelihood {mean:.6} ± {std:.6} over {repeats} repeat(s), {} rows", present.len());
    if let Some(out) = &a.out {
        write_json(
            out,
            &EvaluateReport {
                checkpoint: a.ckpt.display().to_string(),
                data: a.data.display().to_string(),
                order: a.order,
                repeats,
                seed: a.seed.seed,
                rows: rows.len(),
                scored_rows: present.len(),
                missing_cells,
                empty_rows,
                mean,
                std,
                results,
            },
        )?;
    }
    Ok(())
}

pub fn benchmark(a: BenchmarkArgs) -> Outcome {
    let mut config = match &a.config {
        Some(p) => read_json::<BenchConfig>(p)?,
        None => BenchConfig::shipped_default(),
    };
    for f in &a.filter {
        let (key, value) = f
            .split_once('=')
            .ok_or_else(|| Failure::args(format!("--filter {f:?}: expected KEY=VALUE")))?;
        config = config.filtered(key.trim(), value.trim())?;
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    config.validate()?;
    let report = run_leaderboard(&config)?;
    print!("{}", render_table(&report));
    write_json(&a.out, &report)?;
    if report.all_failed() {
        return Err(Failure::new(ALL_CELLS_FAILED, "every benchmark cell failed"));
    }
    Ok(())
}
