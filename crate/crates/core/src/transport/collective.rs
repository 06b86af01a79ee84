use crate::error::{Error, Result};
use crate::transport::{Endpoint, Tag, WorkerId};

impl Endpoint {
    /// Recursive-doubling all-gather over a hypercube.
    ///
    /// In round `k` each task swaps everything it holds with the partner
    /// whose id differs in bit `k`. Every task ends with the concatenation of
    /// all parts in worker order. `F log2 F` messages carry `(F - 1) * sum(parts)`
    /// units in total.
    pub fn allgather_hypercube(
        &mut self,
        tag: Tag,
        layer: usize,
        local: &[f64],
        part_sizes: &[usize],
    ) -> Result<Vec<f64>> {
        let f = self.size();
        if !f.is_power_of_two() {
            return Err(Error::Topology(format!("hypercube all-gather needs a power-of-two group, got {f}")));
        }
        if part_sizes.len() != f {
            return Err(Error::Shape(format!("{} part sizes for {f} workers", part_sizes.len())));
        }
        let me = self.id().0;
        if local.len() != part_sizes[me] {
            return Err(Error::Shape(format!(
                "{} holds {} values but its part is {}",
                self.id(),
                local.len(),
                part_sizes[me]
            )));
        }
        let offsets: Vec<usize> = part_sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let total: usize = part_sizes.iter().sum();
        let span = |lo: usize, hi: usize| {
            let end = if hi == f { total } else { offsets[hi] };
            offsets[lo]..end
        };
        let mut full = vec![0.0; total];
        full[span(me, me + 1)].copy_from_slice(local);
        let mut width = 1;
        while width < f {
            let partner = me ^ width;
            let base = me & !(width - 1);
            let mine = span(base, base + width);
            self.send(WorkerId(partner), tag, layer, full[mine].to_vec())?;
            let got = self.recv_data(tag, layer, Some(WorkerId(partner)))?;
            let pbase = partner & !(width - 1);
            let theirs = span(pbase, pbase + width);
            if got.payload.len() != theirs.len() {
                return Err(Error::Shape(format!(
                    "hypercube block of {} values, expected {}",
                    got.payload.len(),
                    theirs.len()
                )));
            }
            full[theirs].copy_from_slice(&got.payload);
            width <<= 1;
        }
        Ok(full)
    }
}

/// Runs the all-gather with one task per endpoint; `payloads[i]` is worker
/// `i`'s part. Returns every worker's assembled vector.
pub fn allgather_hypercube(endpoints: Vec<Endpoint>, payloads: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let f = endpoints.len();
    if payloads.len() != f {
        return Err(Error::Shape(format!("{} payloads for {f} workers", payloads.len())));
    }
    if !f.is_power_of_two() {
        return Err(Error::Topology(format!("hypercube all-gather needs a power-of-two group, got {f}")));
    }
    let sizes: Vec<usize> = payloads.iter().map(Vec::len).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .zip(payloads)
            .map(|(mut ep, part)| {
                let sizes = &sizes;
                scope.spawn(move || ep.allgather_hypercube(Tag::PartialActivation, 0, &part, sizes))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| Error::Transport("all-gather task panicked".into()))?)
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{Transport, DEFAULT_TIMEOUT};

    fn run(f: usize, sizes: &[usize]) -> (Vec<Vec<f64>>, u64, u64) {
        let (t, eps) = Transport::channel(f, DEFAULT_TIMEOUT);
        let mut next = 0.0;
        let payloads: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&s| {
                (0..s)
                    .map(|_| {
                        next += 1.0;
                        next
                    })
                    .collect()
            })
            .collect();
        let out = allgather_hypercube(eps, payloads).unwrap();
        let s = t.stats_snapshot();
        (out, s.message_count, s.data_units)
    }

    #[test]
    fn two_workers_one_round() {
        let (out, msgs, units) = run(2, &[240, 240]);
        assert_eq!((msgs, units), (2, 480));
        let expect: Vec<f64> = (1..=480).map(f64::from).collect();
        assert!(out.iter().all(|v| *v == expect));
    }

    #[test]
    fn message_count_is_f_log_f() {
        for (f, log) in [(4usize, 2u64), (8, 3)] {
            let sizes = vec![5; f];
            let (out, msgs, units) = run(f, &sizes);
            assert_eq!(msgs, f as u64 * log);
            assert_eq!(units, (f as u64 - 1) * 5 * f as u64);
            assert!(out.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn uneven_parts_still_cost_f_minus_one_copies() {
        let (out, msgs, units) = run(4, &[3, 3, 2, 2]);
        assert_eq!(msgs, 8);
        assert_eq!(units, 3 * 10);
        assert_eq!(out[2], (1..=10).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn single_worker_is_a_no_op() {
        let (out, msgs, _) = run(1, &[4]);
        assert_eq!(msgs, 0);
        assert_eq!(out[0], vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        let (_t, eps) = Transport::channel(3, DEFAULT_TIMEOUT);
        assert!(matches!(
            allgather_hypercube(eps, vec![vec![1.0]; 3]),
            Err(Error::Topology(_))
        ));
    }
}
