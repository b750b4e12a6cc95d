#![allow(dead_code)]

use hierintent::datagen::{generate_dataset, Demonstration, GeneratorConfig};
use hierintent::taxonomy::Taxonomy;
use hierintent::training::TrainConfig;

/// Five short demonstrations per task: enough for a 3/1/1 stratified split.
pub fn small_generator(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        seed,
        demos_per_task: 5,
        episode_duration_s: (12.0, 16.0),
        ..GeneratorConfig::default()
    }
}

pub fn small_dataset(seed: u64) -> (Taxonomy, Vec<Demonstration>) {
    let tax = Taxonomy::default_assembly();
    let demos = generate_dataset(&small_generator(seed), &tax).unwrap();
    (tax, demos)
}

/// A training budget of a few hundred windows.
pub fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        windows_per_epoch: Some(192),
        hidden: 24,
        encoder_hidden: 16,
        embed_dim: 16,
        ..TrainConfig::default()
    }
}
