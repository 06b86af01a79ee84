use proptest::prelude::*;
use shardgrad::costmodel::validate_measured;
use shardgrad::network::{init_params, LossKind, NetworkSpec};
use shardgrad::optim::OptimizerKind;
use shardgrad::tensor::{Activation, Rng};
use shardgrad::verify::random_batch;
use shardgrad::{cost_breakdown, CostParams, ExchangeMode, MpConfig, MpEngine};

fn hypercube_epoch(sizes: &[usize], workers: usize, examples: usize, seed: u64) -> shardgrad::transport::MessageStats {
    let spec = NetworkSpec::dense(sizes, Activation::Tanh, Activation::Softmax).unwrap();
    let mut rng = Rng::new(seed);
    let params = init_params(&spec, &mut rng);
    let data = random_batch(&spec, examples, &mut rng).unwrap();
    let mut engine =
        MpEngine::new(&spec, &params, MpConfig::new(workers, ExchangeMode::Hypercube), OptimizerKind::Sgd).unwrap();
    engine.reset_stats();
    for (x, y) in &data {
        engine.train_step(x, y, LossKind::CrossEntropy, 0.05).unwrap();
    }
    let stats = engine.stats();
    engine.shutdown().unwrap();
    stats
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn measured_traffic_matches_the_model(
        log_f in 0u32..4,
        hidden in prop::collection::vec(0usize..9, 1..4),
        input in 1usize..20,
        output in 1usize..6,
        examples in 1usize..4,
        seed in any::<u64>(),
    ) {
        let f = 1usize << log_f;
        let mut sizes = vec![input];
        sizes.extend(hidden.iter().map(|h| f * (1 + h)));
        sizes.push(f * output);
        let stats = hypercube_epoch(&sizes, f, examples, seed);
        let report = validate_measured(&CostParams::new(f, examples, &sizes), &stats).unwrap();
        prop_assert!(report.passed(), "{sizes:?} F={f} M={examples}\n{report}");
    }
}

/// The unit formulas assume F divides every layer; uneven shards keep K and
/// the forward volume exact.
#[test]
fn uneven_shards_keep_message_count() {
    let sizes = [9, 11, 7, 5];
    let stats = hypercube_epoch(&sizes, 4, 3, 8);
    let report = validate_measured(&CostParams::new(4, 3, &sizes), &stats).unwrap();
    let k = cost_breakdown(&CostParams::new(4, 3, &sizes)).unwrap().k_integer().unwrap();
    assert_eq!(stats.message_count, k);
    assert!(report.checks[0].passed() && report.checks[2].passed(), "{report}");
}
