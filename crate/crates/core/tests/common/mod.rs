#![allow(dead_code)]

use ccpa_core::attacks::Variant;
use ccpa_core::case_model::{Branch, Bus, Generator, GridCase};
use ccpa_core::datagen::{AttackMix, GenConfig};

pub fn triangle() -> GridCase {
    let branch = |index, from_bus, to_bus, reactance| Branch {
        index,
        from_bus,
        to_bus,
        reactance,
        in_service: true,
    };
    GridCase::new(
        100.0,
        vec![
            Bus { id: 1, is_slack: true, load_p: 0.0 },
            Bus { id: 2, is_slack: false, load_p: 0.6 },
            Bus { id: 3, is_slack: false, load_p: 0.4 },
        ],
        vec![branch(1, 1, 2, 0.1), branch(2, 2, 3, 0.2), branch(3, 1, 3, 0.15)],
        vec![Generator { bus: 1, gen_p: 1.0 }],
    )
    .unwrap()
}

pub fn gen(n: usize, variant: Variant, seed: u64) -> GenConfig {
    GenConfig {
        n_samples: n,
        attack_mix: AttackMix::only(variant),
        master_seed: seed,
        ..GenConfig::default()
    }
}
