//! Self-checks: distributed-versus-reference gradients, finite differences,
//! traffic reconciliation against the cost model, and regret bounds.

use std::fmt;

use crate::costmodel::{validate_measured, CostParams};
use crate::data_parallel::{GradientEngine, LocalEngine};
use crate::error::Result;
use crate::model_parallel::{ExchangeMode, MpConfig, MpEngine};
use crate::network::{
    forward, init_params, loss, tbptt_step, LayerSpec, LossKind, Mask, NetworkSpec, Parameters, Shape,
};
use crate::optim::OptimizerKind;
use crate::regret_lab::{
    bounds, run_delayed_sgd, BoundParams, ConvexProblem, DEFAULT_CENTER_RADIUS, DEFAULT_LR_SCALE,
};
use crate::tensor::{Activation, Rng, Vector};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub expected: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, measured: impl fmt::Display, expected: impl fmt::Display) -> Self {
        Self {
            name: name.into(),
            passed,
            measured: measured.to_string(),
            expected: expected.to_string(),
        }
    }

    pub const CSV_HEADER: &'static str = "check,result,measured,expected";

    pub fn csv_row(&self) -> String {
        let field = |v: &str| {
            if v.contains([',', '"']) {
                format!("\"{}\"", v.replace('"', "\"\""))
            } else {
                v.to_string()
            }
        };
        format!(
            "{},{},{},{}",
            field(&self.name),
            self.verdict(),
            field(&self.measured),
            field(&self.expected)
        )
    }

    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: measured {}, expected {}", self.verdict(), self.name, self.measured, self.expected)
    }
}

/// Test hooks that deliberately corrupt a computation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Added to the first distributed gradient entry before comparison.
    pub gradient_offset: f64,
}

/// `max |a − b| / max |b|`.
pub fn relative_linf(a: &Parameters, b: &Parameters) -> f64 {
    let scale = b.max_abs();
    let diff = a.max_abs_diff(b);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Random inputs with one-hot targets.
pub fn random_batch(spec: &NetworkSpec, count: usize, rng: &mut Rng) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let classes = spec.output_len();
    (0..count)
        .map(|_| {
            let x = rng.uniform(0.0, 1.0, spec.input_len())?.into_inner();
            let y = Vector::one_hot(classes, rng.index(classes)).into_inner();
            Ok((x, y))
        })
        .collect()
}

/// Summed gradients over `batch` from a model-parallel engine and from the
/// single-machine reference.
pub fn distributed_and_reference(
    spec: &NetworkSpec,
    params: &Parameters,
    batch: &[(Vec<f64>, Vec<f64>)],
    config: MpConfig,
) -> Result<(Parameters, Parameters)> {
    let refs: Vec<&(Vec<f64>, Vec<f64>)> = batch.iter().collect();
    let (reference, _) = LocalEngine::new(spec, LossKind::CrossEntropy).batch_gradient(params, &refs)?;
    let mut engine = MpEngine::new(spec, params, config, OptimizerKind::Sgd)?;
    for (x, y) in batch {
        engine.accumulate(x, y, LossKind::CrossEntropy)?;
    }
    let distributed = engine.gradients()?;
    engine.shutdown()?;
    Ok((distributed, reference))
}

/// Compares model-parallel gradients with the reference for every worker
/// count and exchange mode. `F = 1` must match bit for bit.
pub fn gradient_equivalence(
    spec: &NetworkSpec,
    examples: usize,
    workers: &[usize],
    tolerance: f64,
    seed: u64,
    faults: Faults,
) -> Result<Vec<CheckResult>> {
    let mut rng = Rng::new(seed);
    let params = init_params(spec, &mut rng);
    let batch = random_batch(spec, examples, &mut rng)?;
    let mut out = Vec::new();
    for &f in workers {
        let modes: &[ExchangeMode] = if f == 1 {
            &[ExchangeMode::Hypercube]
        } else if f.is_power_of_two() {
            &[ExchangeMode::Hypercube, ExchangeMode::MasterRelay]
        } else {
            &[ExchangeMode::MasterRelay]
        };
        for &mode in modes {
            let (mut distributed, reference) = distributed_and_reference(spec, &params, &batch, MpConfig::new(f, mode))?;
            if faults.gradient_offset != 0.0 {
                let mut flat = distributed.flatten();
                flat[0] += faults.gradient_offset;
                distributed.assign_flat(&flat)?;
            }
            let err = relative_linf(&distributed, &reference);
            out.push(if f == 1 {
                CheckResult::new(
                    "gradient equivalence F=1 bit-exact",
                    distributed == reference,
                    format!("relative Linf {err:e}"),
                    "identical",
                )
            } else {
                let mode = match mode {
                    ExchangeMode::Hypercube => "hypercube",
                    ExchangeMode::MasterRelay => "relay",
                };
                CheckResult::new(
                    format!("gradient equivalence F={f} {mode}"),
                    err <= tolerance,
                    format!("{err:e}"),
                    format!("<= {tolerance:e}"),
                )
            });
        }
    }
    Ok(out)
}

/// Worst-case comparison of analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub params: usize,
    pub max_relative: f64,
    /// Same measure with no floor beyond exact zeros.
    pub max_relative_unfloored: f64,
    pub max_absolute: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`; zero when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

fn central_differences(
    params: &Parameters,
    analytic: &Parameters,
    h: f64,
    floor: f64,
    mut objective: impl FnMut(&Parameters) -> Result<f64>,
) -> Result<GradCheck> {
    let base = params.flatten();
    let grads = analytic.flatten();
    let mut probe = params.clone();
    let mut worst = GradCheck {
        params: base.len(),
        max_relative: 0.0,
        max_relative_unfloored: 0.0,
        max_absolute: 0.0,
    };
    let mut flat = base.clone();
    for i in 0..base.len() {
        flat[i] = base[i] + h;
        probe.assign_flat(&flat)?;
        let up = objective(&probe)?;
        flat[i] = base[i] - h;
        probe.assign_flat(&flat)?;
        let down = objective(&probe)?;
        flat[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        worst.max_relative = worst.max_relative.max(relative_error(grads[i], numeric, floor));
        worst.max_relative_unfloored = worst
            .max_relative_unfloored
            .max(relative_error(grads[i], numeric, f64::MIN_POSITIVE));
        worst.max_absolute = worst.max_absolute.max((grads[i] - numeric).abs());
    }
    Ok(worst)
}

/// Finite-difference check of a feedforward network on one example.
pub fn gradcheck_feedforward(
    spec: &NetworkSpec,
    params: &Parameters,
    input: &[f64],
    target: &[f64],
    kind: LossKind,
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let trace = forward(spec, params, input)?;
    let (g, _) = crate::network::backward(spec, params, &trace, target, kind)?;
    central_differences(params, &g.weights, h, floor, |p| {
        let out = forward(spec, p, input)?;
        loss(kind, out.output(), target)
    })
}

/// Finite-difference check of a recurrent network on one fully unrolled sequence.
pub fn gradcheck_sequence(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[Vector],
    targets: &[Vector],
    h: f64,
    floor: f64,
) -> Result<GradCheck> {
    let mask = Mask::ones(inputs.len());
    let steps = inputs.len().max(1);
    let (g, _) = tbptt_step(spec, params, inputs, targets, &mask, steps)?;
    central_differences(params, &g.weights, h, floor, |p| {
        tbptt_step(spec, p, inputs, targets, &mask, steps).map(|(_, l)| l)
    })
}

/// Denominator floor of the relative error. Central differences at
/// `h = 1e-5` carry about 1e-10 of absolute error, so smaller gradients are
/// compared on this absolute scale instead.
pub const GRADCHECK_FLOOR: f64 = 1e-4;
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Small random Dense, CNN, RNN and LSTM networks.
pub fn gradcheck_nets() -> Vec<(&'static str, NetworkSpec)> {
    let dense = NetworkSpec::dense(&[7, 9, 6, 4], Activation::Tanh, Activation::Softmax).expect("static layout");
    let cnn = NetworkSpec::new(
        Shape::image(1, 8, 8),
        vec![
            LayerSpec::Conv2D {
                kernel_h: 3,
                kernel_w: 3,
                maps: 3,
                activation: Activation::Tanh,
            },
            LayerSpec::MeanPool { h: 2, w: 2 },
            LayerSpec::Conv2D {
                kernel_h: 2,
                kernel_w: 2,
                maps: 2,
                activation: Activation::Sigmoid,
            },
            LayerSpec::SoftmaxOutput { classes: 3 },
        ],
    )
    .expect("static layout");
    let rnn = NetworkSpec::char_model(5, &[6, 4], false).expect("static layout");
    let lstm = NetworkSpec::char_model(5, &[5, 4], true).expect("static layout");
    vec![("dense", dense), ("cnn", cnn), ("rnn", rnn), ("lstm", lstm)]
}

/// Runs the finite-difference check on every net of [`gradcheck_nets`].
pub fn gradcheck_suite(seed: u64, tolerance: f64) -> Result<Vec<(CheckResult, GradCheck)>> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    for (name, spec) in gradcheck_nets() {
        let params = init_params(&spec, &mut rng);
        let report = if spec.is_recurrent() {
            let vocab = spec.input_len();
            let len = 6;
            let codes: Vec<usize> = (0..=len).map(|_| rng.index(vocab)).collect();
            let inputs: Vec<Vector> = codes[..len].iter().map(|&c| Vector::one_hot(vocab, c)).collect();
            let targets: Vec<Vector> = codes[1..].iter().map(|&c| Vector::one_hot(vocab, c)).collect();
            gradcheck_sequence(&spec, &params, &inputs, &targets, GRADCHECK_STEP, GRADCHECK_FLOOR)?
        } else {
            let batch = random_batch(&spec, 1, &mut rng)?;
            let (x, y) = &batch[0];
            gradcheck_feedforward(&spec, &params, x, y, LossKind::CrossEntropy, GRADCHECK_STEP, GRADCHECK_FLOOR)?
        };
        let check = CheckResult::new(
            format!("finite differences {name} ({} params)", report.params),
            report.max_relative <= tolerance && report.params <= 1000,
            format!(
                "{:e} (unfloored {:e}, absolute {:e})",
                report.max_relative, report.max_relative_unfloored, report.max_absolute
            ),
            format!("<= {tolerance:e}"),
        );
        out.push((check, report));
    }
    Ok(out)
}

/// Layer sizes used for the reconciliation grid, keyed by layer count.
pub fn reconciliation_sizes(n: usize) -> Vec<usize> {
    match n {
        3 => vec![40, 32, 16],
        4 => vec![40, 32, 24, 16],
        _ => vec![40, 32, 24, 16, 8],
    }
}

/// One hypercube-mode epoch of `examples` single-example steps, reconciled
/// against the cost model.
pub fn reconcile_epoch(
    sizes: &[usize],
    workers: usize,
    examples: usize,
    seed: u64,
) -> Result<crate::costmodel::ReconciliationReport> {
    let spec = NetworkSpec::dense(sizes, Activation::Sigmoid, Activation::Softmax)?;
    let mut rng = Rng::new(seed);
    let params = init_params(&spec, &mut rng);
    let data = random_batch(&spec, examples, &mut rng)?;
    let mut engine = MpEngine::new(&spec, &params, MpConfig::new(workers, ExchangeMode::Hypercube), OptimizerKind::Sgd)?;
    engine.reset_stats();
    for (x, y) in &data {
        engine.train_step(x, y, LossKind::CrossEntropy, 0.1)?;
    }
    let stats = engine.stats();
    engine.shutdown()?;
    validate_measured(&CostParams::new(workers, examples, sizes), &stats)
}

/// Every cell of the worker-count × depth × epoch-size grid.
pub fn reconciliation_grid(workers: &[usize], depths: &[usize], epochs: &[usize], seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &f in workers {
        for &n in depths {
            for &m in epochs {
                let sizes = reconciliation_sizes(n);
                let report = reconcile_epoch(&sizes, f, m, seed)?;
                for c in &report.checks {
                    out.push(CheckResult::new(
                        format!("reconcile F={f} n={n} M={m} {}", c.name),
                        c.passed(),
                        c.measured,
                        c.expected,
                    ));
                }
                let ratio_ok = (report.forward_ratio - report.expected_ratio).abs() <= 1e-12 * report.expected_ratio.max(1.0);
                out.push(CheckResult::new(
                    format!("reconcile F={f} n={n} M={m} forward ratio"),
                    ratio_ok && (f != 2 || report.forward_ratio == 1.0),
                    report.forward_ratio,
                    report.expected_ratio,
                ));
            }
        }
    }
    Ok(out)
}

/// Measured regret of one delayed-SGD run with its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretRun {
    pub tau: usize,
    pub seed: u64,
    pub rounds: usize,
    pub regret: f64,
    /// Regret over the first tenth of the rounds.
    pub early_regret: f64,
    pub thm2: f64,
    pub thm3: Option<f64>,
}

impl RegretRun {
    pub fn sublinear(&self) -> bool {
        let early = self.rounds / 10;
        (self.regret / self.rounds as f64) < self.early_regret / early as f64
    }
}

pub fn regret_run(dim: usize, tau: usize, rounds: usize, seed: u64) -> Result<RegretRun> {
    let (lambda, radius) = (1.0, 2.0);
    let problem = ConvexProblem::generate(dim, lambda, radius, DEFAULT_CENTER_RADIUS, rounds, seed)?;
    let report = run_delayed_sgd(&problem, tau, DEFAULT_LR_SCALE, rounds)?;
    let early_regret = report.regret_prefix(&problem, rounds / 10)?;
    let b = bounds(
        &BoundParams::quadratic(lambda, radius, DEFAULT_CENTER_RADIUS, DEFAULT_LR_SCALE),
        tau,
        rounds,
    );
    Ok(RegretRun {
        tau,
        seed,
        rounds,
        regret: report.regret,
        early_regret,
        thm2: b.thm2,
        thm3: b.thm3,
    })
}

/// Bound and sublinearity checks for every delay and seed.
pub fn regret_checks(taus: &[usize], seeds: &[u64], rounds: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &tau in taus {
        for &seed in seeds {
            let r = regret_run(10, tau, rounds, seed)?;
            out.push(CheckResult::new(
                format!("regret tau={tau} seed={seed} <= high-probability bound"),
                r.regret <= r.thm2,
                r.regret,
                format!("<= {}", r.thm2),
            ));
            if let Some(b3) = r.thm3 {
                out.push(CheckResult::new(
                    format!("regret tau={tau} seed={seed} <= expected-regret bound"),
                    r.regret <= b3,
                    r.regret,
                    format!("<= {b3}"),
                ));
            }
            let (late, early) = (r.regret / rounds as f64, r.early_regret / (rounds / 10) as f64);
            out.push(CheckResult::new(
                format!("regret tau={tau} seed={seed} sublinear"),
                r.sublinear(),
                format!("R/T {late}"),
                format!("< {early} at T/10"),
            ));
        }
    }
    Ok(out)
}

/// The quick suite behind the `verify` command.
pub fn standard_suite(seed: u64, faults: Faults) -> Result<Vec<CheckResult>> {
    let spec = NetworkSpec::dense(&[64, 48, 24, 10], Activation::Sigmoid, Activation::Softmax)?;
    let mut out = gradient_equivalence(&spec, 8, &[1, 2, 3, 4], 1e-10, seed, faults)?;
    out.extend(reconciliation_grid(&[2, 4, 8], &[3, 4, 5], &[1, 8], seed)?);
    out.extend(regret_checks(&[1, 2, 5, 10], &[seed], 10_000)?);
    Ok(out)
}

pub fn results_csv(results: &[CheckResult]) -> String {
    let mut s = String::from(CheckResult::CSV_HEADER);
    s.push('\n');
    for r in results {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert_eq!(relative_error(2.0, 1.0, 1e-8), 0.5);
        assert!((relative_error(1e-12, 0.0, 1e-8) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn small_equivalence_passes_and_fault_is_caught() {
        let spec = NetworkSpec::dense(&[6, 8, 4, 3], Activation::Sigmoid, Activation::Softmax).unwrap();
        let ok = gradient_equivalence(&spec, 3, &[1, 2, 3], 1e-10, 1, Faults::default()).unwrap();
        assert_eq!(ok.len(), 4);
        assert!(ok.iter().all(|c| c.passed), "{ok:?}");
        let bad = gradient_equivalence(&spec, 3, &[2], 1e-10, 1, Faults { gradient_offset: 1e-6 }).unwrap();
        assert!(bad.iter().all(|c| !c.passed));
    }

    #[test]
    fn gradcheck_all_nets() {
        for (check, report) in gradcheck_suite(3, 1e-5).unwrap() {
            assert!(check.passed, "{check} {report:?}");
        }
    }

    #[test]
    fn gradcheck_catches_a_wrong_gradient() {
        let spec = NetworkSpec::dense(&[3, 2], Activation::Sigmoid, Activation::Sigmoid).unwrap();
        let params = init_params(&spec, &mut Rng::new(1));
        let mut wrong = params.zeros_like();
        let mut flat = wrong.flatten();
        flat[0] = 1.0;
        wrong.assign_flat(&flat).unwrap();
        let r = central_differences(&params, &wrong, 1e-5, 1e-8, |p| {
            let out = forward(&spec, p, &[0.1, 0.2, 0.3])?;
            loss(LossKind::Mse, out.output(), &[1.0, 0.0])
        })
        .unwrap();
        assert!(r.max_relative > 0.5);
    }

    #[test]
    fn one_reconciliation_cell() {
        let r = reconcile_epoch(&[40, 32, 16], 4, 2, 5).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.checks[0].measured, 2.0 * (3.0 + 8.0 + 6.0));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![CheckResult::new("a", true, 1, 2), CheckResult::new("b", false, 3, 4)];
        assert_eq!(results_csv(&rows), "check,result,measured,expected\na,PASS,1,2\nb,FAIL,3,4\n");
        assert_eq!(rows[1].to_string(), "FAIL b: measured 3, expected 4");
        assert_eq!(CheckResult::new("c", true, "1, 2", "x").csv_row(), "c,PASS,\"1, 2\",x");
    }
}
