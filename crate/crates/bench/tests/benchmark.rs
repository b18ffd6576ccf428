use cgm_bench::bayesnet::DiscreteBayesNet;
use cgm_bench::eval::{eval_ml_efficacy, eval_simulated, simulate, xor_table};
use cgm_bench::gmm::{GaussianMixture, MixtureModel};
use cgm_bench::leaderboard::{CellStatus, DatasetSpec};
use cgm_bench::synth::{Collapse, Identity, Independent, Uniform};
use cgm_bench::{run_leaderboard, BenchConfig, ParametricModel, Synthesizer};
use cgm_core::rng::{substream, Stream};
use cgm_core::{Table, Value};
use rand::Rng;

/// Upper 0.1% quantile of χ²(df) by the Wilson–Hilferty approximation.
fn chi2_critical(df: f64) -> f64 {
    const Z_999: f64 = 3.090_232_306;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + Z_999 * a.sqrt()).powi(3)
}

fn states(t: &Table, i: usize) -> Vec<usize> {
    t.row(i)
        .iter()
        .map(|v| match v {
            Value::Cat(s) if s == "no" => 0,
            Value::Cat(s) if s == "yes" => 1,
            other => panic!("unexpected state {other:?}"),
        })
        .collect()
}

#[test]
fn bayes_net_enumeration_sums_to_one() {
    let net = DiscreteBayesNet::bundled();
    let a = net.assignments();
    assert_eq!(a.len(), 1 << net.n_nodes());
    let total: f64 = a.iter().map(|s| net.log_prob_states(s).exp()).sum();
    assert!((total - 1.0).abs() <= 1e-9, "{total}");
}

#[test]
fn ancestral_samples_pass_chi_square() {
    let net = DiscreteBayesNet::bundled();
    let n = 100_000;
    let t = net.sample(n, &mut substream(11, Stream::Simulate, 0, 0));
    let mut counts = vec![0.0; 1 << net.n_nodes()];
    for i in 0..n {
        let idx = states(&t, i).iter().fold(0, |acc, s| acc * 2 + s);
        counts[idx] += 1.0;
    }
    // Cells with small expectation are pooled so the statistic stays χ².
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (idx, s) in net.assignments().iter().enumerate() {
        let expected = n as f64 * net.log_prob_states(s).exp();
        if expected < 5.0 {
            pooled_obs += counts[idx];
            pooled_exp += expected;
        } else {
            stat += (counts[idx] - expected).powi(2) / expected;
            cells += 1;
        }
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let critical = chi2_critical((cells - 1) as f64);
    assert!(stat < critical, "χ² = {stat:.1} over {cells} cells, critical {critical:.1}");
}

#[test]
fn mixture_densities_integrate_to_one() {
    for (name, g) in [
        ("grid", GaussianMixture::grid()),
        ("gridr", GaussianMixture::gridr()),
        ("ring", GaussianMixture::ring()),
    ] {
        let (lo, hi) = (-6.0, 6.0);
        let n = 4_000_000;
        let mut rng = substream(3, Stream::Simulate, 7, 0);
        let mut sum = 0.0;
        for _ in 0..n {
            let p = [rng.random_range(lo..hi), rng.random_range(lo..hi)];
            sum += g.log_density(p).exp();
        }
        let mass = sum / n as f64 * (hi - lo) * (hi - lo);
        assert!((mass - 1.0).abs() <= 0.02, "{name}: {mass}");
    }
}

#[test]
fn bayes_net_refit_recovers_cpts() {
    let net = DiscreteBayesNet::bundled();
    let t = net.sample(100_000, &mut substream(5, Stream::Simulate, 0, 0));
    let fit = net.fit_counts(&t, cgm_bench::bayesnet::LAPLACE_ALPHA).unwrap();
    for node in 0..net.n_nodes() {
        for (a, b) in net.cpt(node).iter().zip(fit.cpt(node)) {
            for (p, q) in a.iter().zip(b) {
                assert!((p - q).abs() <= 0.02, "node {node}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn em_refit_recovers_ring_means() {
    let truth = GaussianMixture::ring();
    let pts = truth.sample_points(100_000, &mut substream(6, Stream::Simulate, 0, 0));
    let (fit, converged) = GaussianMixture::fit_em(&pts, truth.components(), 1).unwrap();
    assert!(converged);
    for m in &truth.means {
        let nearest = fit
            .means
            .iter()
            .map(|f| ((f[0] - m[0]).powi(2) + (f[1] - m[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest <= 0.05 * truth.sigmas[0], "centre {m:?}: nearest fit at {nearest}");
    }
}

fn simulated_models() -> Vec<(&'static str, Box<dyn ParametricModel>)> {
    vec![
        ("ring", Box::new(MixtureModel::new(GaussianMixture::ring()))),
        ("bayesnet", Box::new(DiscreteBayesNet::bundled())),
    ]
}

#[test]
fn identity_scores_match_the_true_model() {
    for (name, model) in simulated_models() {
        let (_, test) = simulate(model.as_ref(), 10_000, 10_000, 0);
        let l_true = model.mean_log_prob(&test).unwrap();
        let s = eval_simulated(model.as_ref(), &Identity, 10_000, 10_000, 0).unwrap();
        assert!((s.l_test - l_true).abs() <= 0.1, "{name}: L_test {} vs L(M) {l_true}", s.l_test);
        assert!((s.l_syn - s.l_test).abs() < 0.15, "{name}: {s:?}");
    }
}

#[test]
fn uniform_scores_far_below_identity_on_the_network() {
    let net = DiscreteBayesNet::bundled();
    let u = eval_simulated(&net, &Uniform, 10_000, 10_000, 0).unwrap();
    let i = eval_simulated(&net, &Identity, 10_000, 10_000, 0).unwrap();
    assert!(u.l_syn <= i.l_syn - 1.0, "uniform {} vs identity {}", u.l_syn, i.l_syn);
}

#[test]
fn collapse_is_separated_by_the_metric_pair() {
    let ring = MixtureModel::new(GaussianMixture::ring());
    let c = eval_simulated(&ring, &Collapse, 5_000, 5_000, 0).unwrap();
    let i = eval_simulated(&ring, &Identity, 5_000, 5_000, 0).unwrap();
    assert!(c.l_syn >= i.l_syn - 0.5, "collapse L_syn {} vs identity {}", c.l_syn, i.l_syn);
    assert!(c.l_test <= i.l_test - 1.0, "collapse L_test {} vs identity {}", c.l_test, i.l_test);
}

#[test]
fn likelihood_ordering_of_baselines() {
    let ring = MixtureModel::new(GaussianMixture::ring());
    let l = |s: &dyn Synthesizer| eval_simulated(&ring, s, 5_000, 5_000, 1).unwrap().l_syn;
    let (u, ind, id) = (l(&Uniform), l(&Independent), l(&Identity));
    assert!(id > ind && ind > u, "identity {id}, independent {ind}, uniform {u}");
}

fn mutual_information(t: &Table, a: usize, b: usize) -> f64 {
    let n = t.n_rows() as f64;
    let mut joint = std::collections::BTreeMap::<(String, String), f64>::new();
    let mut ma = std::collections::BTreeMap::<String, f64>::new();
    let mut mb = std::collections::BTreeMap::<String, f64>::new();
    for i in 0..t.n_rows() {
        let r = t.row(i);
        let (x, y) = (r[a].to_string(), r[b].to_string());
        *joint.entry((x.clone(), y.clone())).or_default() += 1.0 / n;
        *ma.entry(x).or_default() += 1.0 / n;
        *mb.entry(y).or_default() += 1.0 / n;
    }
    joint.iter().map(|((x, y), p)| p * (p / (ma[x] * mb[y])).ln()).sum()
}

#[test]
fn independent_breaks_dependence_and_uniform_is_flat() {
    let net = DiscreteBayesNet::bundled();
    let (train, _) = simulate(&net, 20_000, 1, 4);
    let real_mi = mutual_information(&train, 0, 1);
    let ind = Independent.fit_generate(&train, 20_000, 9).unwrap();
    let syn_mi = mutual_information(&ind, 0, 1);
    assert!(real_mi > 0.1, "storm/outage should be dependent: {real_mi}");
    assert!(syn_mi < 0.002, "independent synthesizer kept MI {syn_mi}");

    let n = 20_000;
    let uni = Uniform.fit_generate(&train, n, 9).unwrap();
    let bound = 3.0 * (0.25 / n as f64).sqrt();
    for c in 0..uni.n_cols() {
        let yes = (0..n).filter(|&i| uni.row(i)[c] == Value::Cat("yes".into())).count() as f64 / n as f64;
        assert!((yes - 0.5).abs() <= bound, "column {c}: {yes}");
    }
}

/// A classifier fit on Independent output sees no label signal, so its
/// XOR accuracy is a coin flip per input cell; the mean over draws is
/// what must sit near chance.
#[test]
fn xor_efficacy_separates_identity_from_independent() {
    let mut independent = Vec::new();
    for s in 0..10u64 {
        let train = xor_table(4_000, 2 * s + 1);
        let test = xor_table(2_000, 2 * s + 2);
        let id = eval_ml_efficacy(&train, &test, &Identity, "y", s).unwrap();
        assert!(id.accuracy >= 0.9, "{id:?}");
        let ind = eval_ml_efficacy(&train, &test, &Independent, "y", s).unwrap();
        assert_eq!(ind.identity_accuracy, id.accuracy);
        independent.push(ind.accuracy);
    }
    let mean = independent.iter().sum::<f64>() / independent.len() as f64;
    assert!(mean <= 0.6, "{independent:?}");
}

fn report_schema() -> jsonschema::Validator {
    let text = include_str!("../schema/report.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

fn assert_valid(report: &cgm_bench::BenchmarkReport) {
    let v = serde_json::to_value(report).unwrap();
    let schema = report_schema();
    let errors: Vec<String> = schema.iter_errors(&v).map(|e| format!("{}: {e}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn report_matches_shipped_schema() {
    let config = BenchConfig {
        datasets: vec![
            DatasetSpec::Builtin("grid".into()),
            DatasetSpec::Builtin("xor".into()),
            DatasetSpec::BayesNet {
                name: "absent".into(),
                bayesnet: "/nonexistent/net.json".into(),
            },
        ],
        synthesizers: vec!["uniform".into(), "identity".into()],
        seeds: vec![0, 1],
        n_train: 300,
        n_test: 300,
        ..BenchConfig::default()
    };
    let report = run_leaderboard(&config).unwrap();
    assert_eq!(report.cells.len(), 3 * 2 * 2);
    assert!(report.cells.iter().any(|c| c.status == CellStatus::Failed));
    assert!(!report.all_failed());
    assert_valid(&report);
    let text = cgm_bench::render_table(&report);
    assert!(text.contains("grid (simulated)") && text.contains("**"));
}

#[test]
fn empty_config_report_is_valid() {
    let report = run_leaderboard(&BenchConfig::default()).unwrap();
    assert!(report.cells.is_empty());
    assert_valid(&report);
}

#[test]
fn single_cell_grid_identity() {
    let config = BenchConfig {
        datasets: vec![DatasetSpec::Builtin("grid".into())],
        synthesizers: vec!["identity".into()],
        seeds: vec![0],
        n_train: 2_000,
        n_test: 2_000,
        ..BenchConfig::default()
    };
    let report = run_leaderboard(&config).unwrap();
    assert_eq!(report.cells.len(), 1);
    let s = report.summary_for("grid", "identity").unwrap();
    assert_eq!((s.n_ok, s.n_failed), (1, 0));
    assert_eq!(s.l_test.unwrap().std, 0.0);
    let l_true = report.datasets[0].l_true.unwrap();
    assert!((s.l_test.unwrap().mean - l_true).abs() < 0.1);
    assert_eq!(report.config_hash, config.hash());
    assert_eq!(report.config_hash.len(), 16);
}

#[test]
fn every_cell_failing_is_reported() {
    let config = BenchConfig {
        datasets: vec![DatasetSpec::BayesNet {
            name: "absent".into(),
            bayesnet: "/nonexistent/net.json".into(),
        }],
        synthesizers: vec!["identity".into()],
        seeds: vec![0],
        ..BenchConfig::default()
    };
    assert!(run_leaderboard(&config).unwrap().all_failed());
}
