#![allow(dead_code)]

use cgm_core::{ModelConfig, ModelParams};

pub use cgm_core::selfcheck::toy_config as small_config;

pub fn random_model(classes: &[usize], config: ModelConfig, seed: u64, std: f64) -> ModelParams {
    cgm_core::selfcheck::random_model(classes, config, seed, std).unwrap()
}
