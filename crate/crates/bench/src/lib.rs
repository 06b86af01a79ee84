//! Fixtures shared by the benchmarks.

use shardgrad::{init_params, Activation, NetworkSpec, Parameters, Rng};

/// A sigmoid/softmax dense net with its parameters and one random example.
pub fn dense_fixture(sizes: &[usize], seed: u64) -> (NetworkSpec, Parameters, Vec<f64>, Vec<f64>) {
    let spec = NetworkSpec::dense(sizes, Activation::Sigmoid, Activation::Softmax).expect("valid sizes");
    let mut rng = Rng::new(seed);
    let params = init_params(&spec, &mut rng);
    let x = rng.uniform(0.0, 1.0, sizes[0]).expect("valid range").into_inner();
    let classes = sizes[sizes.len() - 1];
    let mut y = vec![0.0; classes];
    y[rng.index(classes)] = 1.0;
    (spec, params, x, y)
}

/// Layer sizes of a dense net with at least `params` weights: a wide square
/// hidden layer between small input and output layers.
pub fn wide_sizes(params: usize) -> Vec<usize> {
    let side = (params as f64).sqrt().ceil() as usize;
    vec![side, side, 10]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_net_is_big_enough() {
        let s = wide_sizes(10_000_000);
        assert!(s[0] * s[1] >= 10_000_000);
        let (spec, params, x, y) = dense_fixture(&[8, 4, 3], 1);
        assert_eq!(params.num_params(), 8 * 4 + 4 + 4 * 3 + 3);
        assert_eq!((x.len(), y.iter().sum::<f64>()), (spec.input_len(), 1.0));
    }
}
