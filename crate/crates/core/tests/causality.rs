use cgm_core::rng::{substream, Stream};
use cgm_core::selfcheck::{causality, random_model, toy_config};
use cgm_core::{generate, GenerateOptions, Tensor};

#[test]
fn later_inputs_never_reach_earlier_outputs() {
    for cfg in 0..50u64 {
        if let Some(v) = causality(cfg).unwrap() {
            panic!("{v}");
        }
    }
}

#[test]
fn changing_a_later_feature_keeps_earlier_samples() {
    let model = random_model(&[3, 4, 2, 3], toy_config(), 5, 0.5).unwrap();
    let order = vec![2, 0, 3, 1];
    let opts = GenerateOptions {
        fixed_order: Some(order.clone()),
        ..GenerateOptions::default()
    };
    let base = generate(&model, 64, 9, &opts).unwrap();
    for j in 0..order.len() {
        let mut altered = model.clone();
        let mut rng = substream(j as u64, Stream::Baseline, 3, 0);
        let e = altered.codecs[order[j]].embedding_mut();
        *e = Tensor::randn(e.shape(), 2.0, &mut rng);
        let out = generate(&altered, 64, 9, &opts).unwrap();
        for &f in &order[..j] {
            assert_eq!(base.columns()[f], out.columns()[f], "feature {f} before position {j}");
        }
    }
}
