#![allow(dead_code)]

use rand::Rng;
use sfl_core::SystemParams;

/// Random valid parameters, kept small enough for the simulator to replay.
pub fn random_params<R: Rng>(rng: &mut R) -> SystemParams {
    SystemParams {
        clients: rng.random_range(1..=6),
        global_epochs: rng.random_range(1..=6),
        local_iterations: rng.random_range(1..=10),
        minibatch: rng.random_range(1..=32),
        smashed_bits: rng.random_range(0.0..2e6),
        gradient_bits: rng.random_range(0.0..2e6),
        param_bits: [8.0, 16.0, 32.0, 64.0][rng.random_range(0..4)],
        total_params: rng.random_range(1_000..100_000_000),
        full_train_time: rng.random_range(0.0..0.01),
        uplink_fed: rng.random_range(1e6..1e9),
        downlink_fed: rng.random_range(1e6..1e9),
        uplink_main: rng.random_range(1e6..1e9),
        downlink_main: rng.random_range(1e6..1e9),
        compute_power: rng.random_range(0.0..10.0),
        transmit_power: rng.random_range(0.0..1.0),
        receive_power: rng.random_range(0.0..1.0),
    }
}
