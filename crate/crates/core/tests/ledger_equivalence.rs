mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfl_core::sim::{check_ledger, expected_event_count, latency_estimate, simulate_with, write_trace};
use sfl_core::{average_energy, run_simulation, ClientSetup, ModelTopology, SimConfig, SystemParams};

fn topo_for(p: &SystemParams) -> ModelTopology {
    ModelTopology::blocked(p.total_params, 5, 2).unwrap()
}

#[test]
fn ledger_equals_closed_form_for_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..60 {
        let p = common::random_params(&mut rng);
        for alpha in [0.0, 0.1, rng.random_range(0.0..1.0), 0.9, 1.0] {
            let cfg = SimConfig::new(p.clone(), alpha, topo_for(&p));
            let summary = simulate_with(&cfg, |_| {}).unwrap();
            let check = check_ledger(&cfg, &summary, 1e-9).unwrap();
            assert!(check.pass, "case {case} alpha {alpha}: {check:?}");
            assert_eq!(summary.total_events, expected_event_count(&cfg).unwrap());
            let latency = latency_estimate(&cfg).unwrap();
            assert!((summary.wall_latency_estimate - latency).abs() <= 1e-9 * latency.max(f64::MIN_POSITIVE));
        }
    }
}

#[test]
fn heterogeneous_ledgers_match_their_own_profiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..20 {
        let k = rng.random_range(1..=4u64);
        let first = common::random_params(&mut rng);
        let profiles: Vec<SystemParams> = (0..k)
            .map(|_| SystemParams {
                clients: k,
                global_epochs: first.global_epochs,
                total_params: first.total_params,
                ..common::random_params(&mut rng)
            })
            .collect();
        let alpha = rng.random_range(0.0..=1.0);
        let mut cfg = SimConfig::new(profiles[0].clone(), alpha, topo_for(&first));
        cfg.clients = ClientSetup::Heterogeneous(profiles.clone());
        let summary = simulate_with(&cfg, |_| {}).unwrap();
        let check = check_ledger(&cfg, &summary, 1e-9).unwrap();
        assert!(check.pass, "case {case}: {check:?}");
        let avg = average_energy(alpha, &profiles).unwrap();
        assert!((summary.mean_client_energy - avg).abs() <= 1e-9 * avg.max(f64::MIN_POSITIVE));
    }
}

#[test]
fn bit_totals_follow_the_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let p = common::random_params(&mut rng);
        let alpha = rng.random_range(0.0..=1.0);
        let s = simulate_with(&SimConfig::new(p.clone(), alpha, topo_for(&p)), |_| {}).unwrap();
        let k = p.clients as f64;
        let items = (p.local_iterations * p.minibatch) as f64;
        let model = alpha * p.param_bits * p.total_params as f64;
        let ge = p.global_epochs as f64;
        let up = ge * (items * p.smashed_bits + model) * k;
        let down = ge * (items * p.gradient_bits + model) * k;
        assert!((s.total_bits_up - up).abs() <= 1e-12 * up.max(1.0));
        assert!((s.total_bits_down - down).abs() <= 1e-12 * down.max(1.0));
    }
}

#[test]
fn identical_configs_give_identical_traces() {
    let p = SystemParams {
        global_epochs: 2,
        local_iterations: 3,
        minibatch: 4,
        ..SystemParams::reference()
    };
    let mut cfg = SimConfig::new(p.clone(), 0.4201, topo_for(&p));
    cfg.record_trace = true;
    let render = || {
        let mut buf = Vec::new();
        write_trace(&run_simulation(&cfg).unwrap(), &mut buf).unwrap();
        buf
    };
    let a = render();
    assert_eq!(a, render());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count() as u64, expected_event_count(&cfg).unwrap() + 1);
}
