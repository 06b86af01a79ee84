use proptest::prelude::*;
use shardgrad::data_parallel::{replica_run, GradientEngine, LocalEngine, ReplicaConfig};
use shardgrad::network::{init_params, LossKind, NetworkSpec};
use shardgrad::optim::{Optimizer, OptimizerConfig};
use shardgrad::tensor::{Activation, Rng};
use shardgrad::train::{hybrid_engines, Example};
use shardgrad::verify::{distributed_and_reference, random_batch, relative_linf};
use shardgrad::{ExchangeMode, MpConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn relay_gradients_match_reference(
        workers in 2usize..7,
        extra in prop::collection::vec(0usize..6, 1..3),
        examples in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut sizes = vec![5];
        sizes.extend(extra.iter().map(|e| workers + e));
        sizes.push(3);
        let spec = NetworkSpec::dense(&sizes, Activation::Sigmoid, Activation::Softmax).unwrap();
        let mut rng = Rng::new(seed);
        let params = init_params(&spec, &mut rng);
        let batch = random_batch(&spec, examples, &mut rng).unwrap();
        let (dist, reference) =
            distributed_and_reference(&spec, &params, &batch, MpConfig::new(workers, ExchangeMode::MasterRelay)).unwrap();
        prop_assert!(relative_linf(&dist, &reference) <= 1e-12);
    }

    #[test]
    fn hypercube_gradients_match_reference(
        log_f in 1u32..4,
        extra in prop::collection::vec(0usize..6, 1..3),
        seed in any::<u64>(),
    ) {
        let f = 1usize << log_f;
        let mut sizes = vec![4];
        sizes.extend(extra.iter().map(|e| f + e));
        sizes.push(2);
        let spec = NetworkSpec::dense(&sizes, Activation::Tanh, Activation::Softmax).unwrap();
        let mut rng = Rng::new(seed);
        let params = init_params(&spec, &mut rng);
        let batch = random_batch(&spec, 3, &mut rng).unwrap();
        let (dist, reference) =
            distributed_and_reference(&spec, &params, &batch, MpConfig::new(f, ExchangeMode::Hypercube)).unwrap();
        prop_assert!(relative_linf(&dist, &reference) <= 1e-12);
    }
}

#[test]
fn single_hybrid_group_tracks_synchronous_momentum() {
    let spec = NetworkSpec::dense(&[10, 8, 6, 4], Activation::Sigmoid, Activation::Softmax).unwrap();
    let mut rng = Rng::new(12);
    let init = init_params(&spec, &mut rng);
    let data = random_batch(&spec, 24, &mut rng).unwrap();
    let opt = OptimizerConfig::momentum(0.1, 0.9).with_batch(6);
    let steps = 20;

    let engines = hybrid_engines(&spec, &init, &MpConfig::new(2, ExchangeMode::Hypercube), 1, LossKind::CrossEntropy, opt.kind)
        .unwrap();
    let log = replica_run(&ReplicaConfig::new(1, 6), &opt, &init, &data, engines, steps).unwrap();

    let mut reference = init.clone();
    let mut o = Optimizer::new(opt.kind);
    let mut e = LocalEngine::new(&spec, LossKind::CrossEntropy);
    for step in 0..steps {
        let start = (step * 6) % data.len();
        let refs: Vec<&Example> = data[start..start + 6].iter().collect();
        let (g, _) = e.batch_gradient(&reference, &refs).unwrap();
        o.step(&mut reference, &g, 0.1, 1.0 / 6.0).unwrap();
    }
    assert!(relative_linf(&log.params, &reference) <= 1e-12);
    assert!(log.stats.message_count > 0);
}
