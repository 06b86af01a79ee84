//! Analytic communication cost of model-parallel training and its
//! reconciliation against measured traffic.
//!
//! One data unit is one `f64` of payload.

use std::fmt;

use crate::error::{Error, Result};
use crate::transport::{MessageStats, Tag};

#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    /// Process count `F`.
    pub workers: usize,
    /// Training examples per epoch `M`.
    pub examples: usize,
    /// Neurons per layer `b_0..b_{n-1}`; `n = sizes.len()`.
    pub sizes: Vec<usize>,
    /// Seconds per message.
    pub t_lat: f64,
    /// Seconds per data unit.
    pub t_data: f64,
}

impl CostParams {
    pub fn new(workers: usize, examples: usize, sizes: &[usize]) -> Self {
        Self {
            workers,
            examples,
            sizes: sizes.to_vec(),
            t_lat: 0.0,
            t_data: 0.0,
        }
    }

    pub fn with_timing(mut self, t_lat: f64, t_data: f64) -> Self {
        self.t_lat = t_lat;
        self.t_data = t_data;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.examples == 0 {
            return Err(Error::Config("F and M must be at least 1".into()));
        }
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::Config("need at least two non-empty layers".into()));
        }
        if !(self.t_lat >= 0.0 && self.t_data >= 0.0 && self.t_lat.is_finite() && self.t_data.is_finite()) {
            return Err(Error::Config("timing constants must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn n(&self) -> usize {
        self.sizes.len()
    }

    /// Hidden layer sizes `b_1..b_{n-2}`.
    fn hidden(&self) -> &[usize] {
        &self.sizes[1..self.n() - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    /// Messages per epoch.
    pub k: f64,
    /// Per-example units sent with the inputs.
    pub n1: f64,
    /// Per-example forward units as the analytic model counts them.
    pub n2_paper: f64,
    /// Per-example forward units of a recursive-doubling all-gather.
    pub n2_measured_model: f64,
    /// Per-example backward units.
    pub n3: f64,
    /// Average units per message, with `K` taken per example.
    pub n: f64,
    /// `(N1 + N2 + N3) / K` with `K` taken per epoch.
    pub n_raw: f64,
    /// Seconds of communication per epoch.
    pub t_comm: f64,
    /// False when `log2 F` is not an integer.
    pub exact_log: bool,
}

impl CostBreakdown {
    /// `K` as an integer when it is one.
    pub fn k_integer(&self) -> Option<u64> {
        (self.k.fract() == 0.0 && self.k >= 0.0).then_some(self.k as u64)
    }
}

pub fn cost_breakdown(p: &CostParams) -> Result<CostBreakdown> {
    p.validate()?;
    let f = p.workers as f64;
    let m = p.examples as f64;
    let log_f = f.log2();
    let hidden = p.hidden();
    let layers = hidden.len() as f64;
    let per_example_k = (f - 1.0) + layers * (f * log_f + 2.0 * (f - 1.0));
    let k = m * per_example_k;
    let b = |i: usize| p.sizes[i] as f64;
    let n1 = (f - 1.0) * (b(0) + b(p.n() - 1) / f);
    let n2_paper: f64 = hidden.iter().map(|&bi| f * log_f * (bi as f64 / f)).sum();
    let n2_measured_model: f64 = hidden.iter().map(|&bi| (f - 1.0) * bi as f64).sum();
    let n3: f64 = (1..p.n() - 1)
        .map(|i| (f - 1.0) * b(i + 1) + (f - 1.0) * (b(i) / f))
        .sum();
    let units = n1 + n2_paper + n3;
    let (n, n_raw) = if k == 0.0 {
        (0.0, 0.0)
    } else {
        (units / per_example_k, units / k)
    };
    Ok(CostBreakdown {
        k,
        n1,
        n2_paper,
        n2_measured_model,
        n3,
        n,
        n_raw,
        t_comm: k * (p.t_lat + n * p.t_data),
        exact_log: p.workers.is_power_of_two(),
    })
}

/// One exact-match comparison between the model and a measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub expected: f64,
    pub measured: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.expected == self.measured
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationReport {
    pub checks: Vec<Check>,
    /// Analytic forward volume over the all-gather volume, per epoch.
    pub forward_ratio: f64,
    /// `log2 F / (F - 1)`, the value `forward_ratio` should take.
    pub expected_ratio: f64,
}

impl ReconciliationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed) && ratio_matches(self.forward_ratio, self.expected_ratio)
    }
}

fn ratio_matches(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

impl fmt::Display for ReconciliationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "{verdict} {}: model {} measured {}", c.name, c.expected, c.measured)?;
        }
        let verdict = if ratio_matches(self.forward_ratio, self.expected_ratio) { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} forward ratio: {} (log2 F / (F - 1) = {})",
            self.forward_ratio, self.expected_ratio
        )
    }
}

/// Compares one hypercube-mode epoch of traffic against the model.
pub fn validate_measured(p: &CostParams, stats: &MessageStats) -> Result<ReconciliationReport> {
    let model = cost_breakdown(p)?;
    if !p.workers.is_power_of_two() {
        return Err(Error::Topology(format!(
            "reconciliation needs a power-of-two F, got {}",
            p.workers
        )));
    }
    if !stats.is_consistent() {
        return Err(Error::Inconsistent("per-tag counts do not add up to the totals".into()));
    }
    let foreign: Vec<&str> = [Tag::ActivationBroadcast, Tag::GradPush, Tag::ParamPull, Tag::ParamState, Tag::Shutdown]
        .into_iter()
        .filter(|&t| stats.tag(t).messages > 0)
        .map(Tag::name)
        .collect();
    if !foreign.is_empty() {
        return Err(Error::Inconsistent(format!(
            "traffic does not come from a hypercube-mode epoch: saw {}",
            foreign.join(", ")
        )));
    }
    let m = p.examples as f64;
    let units = |tags: &[Tag]| tags.iter().map(|&t| stats.tag(t).units as f64).sum::<f64>();
    let forward = units(&[Tag::PartialActivation]);
    let checks = vec![
        Check {
            name: "messages K",
            expected: model.k,
            measured: stats.message_count as f64,
        },
        Check {
            name: "init units M*N1",
            expected: m * model.n1,
            measured: units(&[Tag::InitData]),
        },
        Check {
            name: "forward units M*(F-1)*sum(b_i)",
            expected: m * model.n2_measured_model,
            measured: forward,
        },
        Check {
            name: "backward units M*N3",
            expected: m * model.n3,
            measured: units(&[Tag::ErrorBroadcast, Tag::PartialError]),
        },
    ];
    let f = p.workers as f64;
    let (forward_ratio, expected_ratio) = if p.workers == 1 || forward == 0.0 {
        (1.0, 1.0)
    } else {
        (m * model.n2_paper / forward, f.log2() / (f - 1.0))
    };
    Ok(ReconciliationReport {
        checks,
        forward_ratio,
        expected_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k(f: usize, m: usize, n: usize) -> f64 {
        cost_breakdown(&CostParams::new(f, m, &vec![16; n])).unwrap().k
    }

    #[test]
    fn no_communication_with_one_process() {
        let c = cost_breakdown(&CostParams::new(1, 100, &[784, 480, 160, 10]).with_timing(1e-3, 1e-6)).unwrap();
        assert_eq!((c.k, c.n1, c.n2_paper, c.n3, c.n, c.t_comm), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn message_counts() {
        assert_eq!(k(2, 1, 3), 5.0);
        assert_eq!(k(4, 10, 4), 310.0);
    }

    #[test]
    fn init_units() {
        let c = cost_breakdown(&CostParams::new(2, 1, &[784, 480, 10])).unwrap();
        assert_eq!(c.n1, 789.0);
    }

    #[test]
    fn forward_models_coincide_only_at_two() {
        let two = cost_breakdown(&CostParams::new(2, 1, &[8, 8, 8, 8])).unwrap();
        assert_eq!(two.n2_paper, two.n2_measured_model);
        let four = cost_breakdown(&CostParams::new(4, 1, &[8, 8, 8, 8])).unwrap();
        assert_eq!(four.n2_paper, 32.0);
        assert_eq!(four.n2_measured_model, 48.0);
    }

    #[test]
    fn hand_evaluated_breakdown() {
        // F=2, b=[784,480,10]: K=5, N1=789, N2=480, N3=10+240=250.
        let c = cost_breakdown(&CostParams::new(2, 3, &[784, 480, 10]).with_timing(0.5, 0.25)).unwrap();
        assert_eq!(c.k, 15.0);
        assert_eq!(c.n3, 250.0);
        let n = (789.0 + 480.0 + 250.0) / 5.0;
        assert_eq!(c.n, n);
        assert_eq!(c.n_raw, n / 3.0);
        assert_eq!(c.t_comm, 15.0 * (0.5 + n * 0.25));
        assert_eq!(c.k_integer(), Some(15));
    }

    #[test]
    fn non_power_of_two_is_flagged() {
        let c = cost_breakdown(&CostParams::new(3, 1, &[9, 9, 9])).unwrap();
        assert!(!c.exact_log);
        assert_eq!(c.k_integer(), None);
        assert!(validate_measured(&CostParams::new(3, 1, &[9, 9, 9]), &MessageStats::default()).is_err());
    }

    #[test]
    fn invalid_params() {
        assert!(cost_breakdown(&CostParams::new(0, 1, &[1, 1])).is_err());
        assert!(cost_breakdown(&CostParams::new(2, 1, &[1])).is_err());
        assert!(cost_breakdown(&CostParams::new(2, 1, &[1, 1]).with_timing(-1.0, 0.0)).is_err());
    }

    #[test]
    fn foreign_traffic_is_rejected() {
        let mut s = MessageStats::default();
        s.record(Tag::GradPush, 3);
        assert!(matches!(
            validate_measured(&CostParams::new(2, 1, &[4, 2, 2]), &s),
            Err(Error::Inconsistent(_))
        ));
    }

    proptest! {
        #[test]
        fn k_grows_with_f_and_is_linear_in_m(f in 2usize..64, m in 1usize..50, n in 3usize..7) {
            prop_assert!(k(f + 1, m, n) > k(f, m, n));
            prop_assert_eq!(k(f, m, n), m as f64 * k(f, 1, n));
        }
    }
}
