use rand::distr::{Distribution, Uniform};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Vector;

/// Seeded generator: ChaCha8 keyed by a 64-bit seed.
///
/// Child generators created by [`Rng::split`] are keyed by a draw from the
/// parent, so a tree of generators is fully determined by the root seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&mut self) -> Rng {
        Rng::new(self.inner.next_u64())
    }

    /// `count` values drawn uniformly from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, count: usize) -> Result<Vector> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Range(format!("uniform requires lo < hi, got [{lo}, {hi})")));
        }
        let dist = Uniform::new(lo, hi).map_err(|e| Error::Range(e.to_string()))?;
        Ok((0..count).map(|_| dist.sample(&mut self.inner)).collect())
    }

    /// A single draw from `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.inner)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.inner, 0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        rand::seq::SliceRandom::shuffle(items, &mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Access for `rand_distr` distributions.
    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

pub fn rng_uniform(rng: &mut Rng, lo: f64, hi: f64, count: usize) -> Result<Vector> {
    rng.uniform(lo, hi, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(42).uniform(0.0, 1.0, 3).unwrap();
        let b = Rng::new(42).uniform(0.0, 1.0, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn values_respect_bounds() {
        let v = Rng::new(42).uniform(-1.0, 1.0, 1000).unwrap();
        assert!(v.iter().all(|&x| (-1.0..1.0).contains(&x)));
    }

    #[test]
    fn different_seeds_differ() {
        let a = Rng::new(42).uniform(0.0, 1.0, 16).unwrap();
        let b = Rng::new(43).uniform(0.0, 1.0, 16).unwrap();
        assert!(a.iter().zip(b.iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn empty_range_is_an_error() {
        assert!(matches!(Rng::new(1).uniform(1.0, 1.0, 2), Err(Error::Range(_))));
        assert!(Rng::new(1).uniform(2.0, 1.0, 2).is_err());
    }

    #[test]
    fn golden_stream() {
        let v = Rng::new(42).uniform(0.0, 1.0, 4).unwrap();
        let bits: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, GOLDEN_SEED_42);
        let mut parent = Rng::new(7);
        let child = parent.split();
        assert_eq!(child.seed(), Rng::new(7).next_u64());
    }

    const GOLDEN_SEED_42: [u64; 4] = [
        4604317194420431786,
        4606734539489062706,
        4601373070768303508,
        4603825980764259020,
    ];
}
