//! Model parallelism over column-partitioned dense layers.
//!
//! Each hidden layer's neurons (the columns of the weight matrix feeding it)
//! are split into `F` contiguous ranges. Worker `w` computes its neurons on
//! the forward pass and their error terms on the backward pass; the master
//! (worker 0) also owns the final weight matrix and computes the output.

mod engine;

use std::ops::Range;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::transport::DEFAULT_TIMEOUT;

pub use engine::MpEngine;

/// How hidden activations reach the tasks that need them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    /// Workers reply to the master, which rebroadcasts the assembled vector.
    MasterRelay,
    /// Recursive-doubling all-gather; needs a power-of-two worker count.
    Hypercube,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpConfig {
    pub workers: usize,
    pub mode: ExchangeMode,
    /// Serialize every delivery through the seeded scheduler.
    pub deterministic: bool,
    pub seed: u64,
    pub timeout: Duration,
}

impl MpConfig {
    pub fn new(workers: usize, mode: ExchangeMode) -> Self {
        Self {
            workers,
            mode,
            deterministic: false,
            seed: 0,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn deterministic(mut self, seed: u64) -> Self {
        self.deterministic = true;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("model parallelism needs at least one worker".into()));
        }
        if self.mode == ExchangeMode::Hypercube && !self.workers.is_power_of_two() {
            return Err(Error::Topology(format!(
                "hypercube exchange needs a power-of-two worker count, got {}",
                self.workers
            )));
        }
        Ok(())
    }
}

/// Column ranges of every partitioned weight matrix, one range per worker.
///
/// Matrix `k` maps layer `k` to layer `k + 1`; matrices `0..n-2` are
/// partitioned and the last one stays whole at the master.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardMap {
    workers: usize,
    matrices: Vec<Vec<Range<usize>>>,
    labels: Vec<Range<usize>>,
}

/// Splits `len` into `parts` contiguous ranges; the first `len % parts`
/// ranges get one extra element.
pub fn split_uniform(len: usize, parts: usize) -> Vec<Range<usize>> {
    let (base, extra) = (len / parts, len % parts);
    let mut start = 0;
    (0..parts)
        .map(|w| {
            let size = base + usize::from(w < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .collect()
}

pub fn make_shard_map(spec: &NetworkSpec, workers: usize) -> Result<ShardMap> {
    if workers == 0 {
        return Err(Error::Config("model parallelism needs at least one worker".into()));
    }
    if !spec.is_fully_connected() {
        return Err(Error::Config(
            "model parallelism partitions dense layers only".into(),
        ));
    }
    let n = spec.n();
    let mut matrices = Vec::with_capacity(n.saturating_sub(2));
    for k in 0..n.saturating_sub(2) {
        let cols = spec.b(k + 1);
        if workers > cols {
            return Err(Error::Partition(format!(
                "{workers} workers cannot split the {cols} columns of weight matrix {k}"
            )));
        }
        matrices.push(split_uniform(cols, workers));
    }
    Ok(ShardMap {
        workers,
        matrices,
        labels: split_uniform(spec.output_len(), workers),
    })
}

impl ShardMap {
    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Number of partitioned weight matrices, `n - 2`.
    pub fn partitioned(&self) -> usize {
        self.matrices.len()
    }

    pub fn ranges(&self, matrix: usize) -> &[Range<usize>] {
        &self.matrices[matrix]
    }

    pub fn range(&self, matrix: usize, worker: usize) -> Range<usize> {
        self.matrices[matrix][worker].clone()
    }

    pub fn sizes(&self, matrix: usize) -> Vec<usize> {
        self.matrices[matrix].iter().map(ExactSizeIterator::len).collect()
    }

    /// Slice of the output label sent to `worker` with its input.
    pub fn label_share(&self, worker: usize) -> Range<usize> {
        self.labels[worker].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Activation;
    use proptest::prelude::*;

    fn sizes_of(rs: &[Range<usize>]) -> Vec<usize> {
        rs.iter().map(|r| r.len()).collect()
    }

    #[test]
    fn one_column_each() {
        assert_eq!(sizes_of(&split_uniform(3, 3)), vec![1, 1, 1]);
    }

    #[test]
    fn remainder_goes_to_low_workers() {
        assert_eq!(split_uniform(7, 3), vec![0..3, 3..5, 5..7]);
    }

    #[test]
    fn single_worker_takes_everything() {
        let spec = NetworkSpec::mnist_fc();
        let map = make_shard_map(&spec, 1).unwrap();
        assert_eq!(map.ranges(0), std::slice::from_ref(&(0..480)));
        assert_eq!(map.ranges(1), std::slice::from_ref(&(0..160)));
        assert_eq!(map.partitioned(), 2);
    }

    #[test]
    fn too_many_workers() {
        let spec = NetworkSpec::dense(&[4, 3, 2], Activation::Sigmoid, Activation::Sigmoid).unwrap();
        assert!(matches!(make_shard_map(&spec, 4), Err(Error::Partition(_))));
        assert!(make_shard_map(&spec, 3).is_ok());
    }

    #[test]
    fn config_checks() {
        assert!(MpConfig::new(3, ExchangeMode::Hypercube).validate().is_err());
        assert!(MpConfig::new(3, ExchangeMode::MasterRelay).validate().is_ok());
        assert!(MpConfig::new(0, ExchangeMode::MasterRelay).validate().is_err());
    }

    proptest! {
        #[test]
        fn split_covers_exactly(len in 1usize..500, parts in 1usize..16) {
            prop_assume!(parts <= len);
            let rs = split_uniform(len, parts);
            prop_assert_eq!(rs.len(), parts);
            prop_assert_eq!(rs[0].start, 0);
            prop_assert_eq!(rs[parts - 1].end, len);
            for w in rs.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            let s = sizes_of(&rs);
            let (lo, hi) = (s.iter().min().unwrap(), s.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
