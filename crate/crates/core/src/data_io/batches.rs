use crate::error::{Error, Result};
use crate::network::Mask;
use crate::tensor::Rng;

/// Dataset indices of one mini-batch; `None` slots are padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub slots: Vec<Option<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().flatten().copied()
    }

    pub fn mask(&self) -> Mask {
        Mask::new(self.slots.iter().map(|s| u8::from(s.is_some())).collect()).expect("bits are 0 or 1")
    }
}

/// Splits `0..len` into batches of `batch_size`, shuffled when `rng` is
/// given. The last batch may be short. A batch size larger than the dataset
/// yields one batch padded to full size.
pub fn batches(len: usize, batch_size: usize, rng: Option<&mut Rng>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if let Some(r) = rng {
        r.shuffle(&mut order);
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    if batch_size > len {
        log::warn!("batch size {batch_size} exceeds the {len} available samples; padding one batch");
        let mut slots: Vec<Option<usize>> = order.into_iter().map(Some).collect();
        slots.resize(batch_size, None);
        return Ok(vec![Batch { slots }]);
    }
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch {
            slots: c.iter().copied().map(Some).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn hundred_by_sixteen() {
        let b = batches(100, 16, None).unwrap();
        assert_eq!(b.len(), 7);
        assert_eq!(b[6].len(), 4);
    }

    #[test]
    fn oversized_batch_is_padded() {
        let b = batches(3, 5, Some(&mut Rng::new(1))).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].mask().bits(), &[1, 1, 1, 0, 0]);
        assert!(batches(3, 0, None).is_err());
    }

    #[test]
    fn seeded_order_repeats() {
        let a = batches(50, 8, Some(&mut Rng::new(9))).unwrap();
        let b = batches(50, 8, Some(&mut Rng::new(9))).unwrap();
        let c = batches(50, 8, Some(&mut Rng::new(10))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn every_sample_once(len in 0usize..300, size in 1usize..40, seed: u64) {
            let b = batches(len, size, Some(&mut Rng::new(seed))).unwrap();
            let mut seen: Vec<usize> = b.iter().flat_map(|x| x.indices().collect::<Vec<_>>()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..len).collect::<Vec<_>>());
        }
    }
}
