use std::time::Instant;

use ccpa_core::attacks::Variant;
use ccpa_core::case_model::ieee14;
use ccpa_core::datagen::{generate_dataset, AttackMix, GenConfig};
use ccpa_core::neuralnet::{train, Architecture, CnnModel, TrainConfig};

fn main() {
    let grid = ieee14();
    let t = Instant::now();
    let cfg = GenConfig { n_samples: 2000, attack_mix: AttackMix::only(Variant::Partial), ..GenConfig::default() };
    let ds = generate_dataset(&grid, &grid, &cfg).unwrap();
    println!("gen 2000: {:?}", t.elapsed());
    let mut model = CnnModel::new(Architecture::table1(54, 20), 0).unwrap();
    let t = Instant::now();
    train(&mut model, &ds.samples, &TrainConfig { epochs: 1, ..TrainConfig::default() }).unwrap();
    println!("1 epoch 2000: {:?}", t.elapsed());
}
