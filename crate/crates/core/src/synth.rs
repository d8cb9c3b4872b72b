//! Synthetic populations with a known default probability `p(x)`.
//!
//! Features are drawn uniformly from a box (integer-valued on the declared
//! categorical coordinates) and labels are Bernoulli(`p(x)`). A scenario is
//! itself a [`Predictor`] returning `p(x)`, so it can stand in for a Bayes
//! classifier wherever a model is expected.
//!
//! Random streams: every generator is a ChaCha8 instance seeded from the
//! caller's seed, with the stream id selecting the chunk or trial. Results
//! are therefore identical whether chunks run sequentially or in parallel.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::train_bound;
use crate::data::{Dataset, FeatureSpec, Provenance, ValidRange};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{predict, sigmoid, Predictor, Threshold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    /// `logit p = intercept + c . x`
    Linear { intercept: f64, coefficients: Vec<f64> },
    /// `logit p = intercept + a min(x_1, saturation) + b x_2`
    DiminishingMarginal {
        intercept: f64,
        a: f64,
        saturation: f64,
        b: f64,
    },
    /// `logit p = intercept + c . x + height exp(-|x - center|^2 / (2 width^2))`
    Bump {
        intercept: f64,
        coefficients: Vec<f64>,
        center: Vec<f64>,
        width: f64,
        height: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
    /// Sampling box, one interval per feature.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Coordinates sampled as integers and declared ordinal categorical.
    #[serde(default)]
    pub categorical: Vec<usize>,
}

impl Scenario {
    pub fn linear(intercept: f64, coefficients: Vec<f64>, lower: f64, upper: f64) -> Scenario {
        let p = coefficients.len();
        Scenario {
            name: "linear".into(),
            kind: ScenarioKind::Linear {
                intercept,
                coefficients,
            },
            lower: vec![lower; p],
            upper: vec![upper; p],
            categorical: Vec::new(),
        }
    }

    /// Built-in scenarios: `linear`, `diminishing_marginal`, `bump`.
    pub fn named(name: &str) -> Result<Scenario> {
        let s = match name {
            "linear" => Scenario::linear(-0.5, vec![1.5, -1.0], -2.0, 2.0),
            "diminishing_marginal" => Scenario {
                name: name.into(),
                kind: ScenarioKind::DiminishingMarginal {
                    intercept: -3.0,
                    a: 1.5,
                    saturation: 2.0,
                    b: 1.0,
                },
                lower: vec![0.0, -1.0],
                upper: vec![8.0, 1.0],
                categorical: vec![0],
            },
            "bump" => Scenario {
                name: name.into(),
                kind: ScenarioKind::Bump {
                    intercept: 0.0,
                    coefficients: vec![3.0, 3.0],
                    center: vec![-1.0, -1.0],
                    width: 0.1,
                    height: 60.0,
                },
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 1.0],
                categorical: Vec::new(),
            },
            other => {
                return Err(Error::Argument(format!(
                    "unknown scenario {other:?} (expected linear, diminishing_marginal or bump)"
                )))
            }
        };
        Ok(s)
    }

    pub fn from_json_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn p(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 || self.upper.len() != p {
            return Err(Error::Validation("sampling box must have matching, non-empty bounds".into()));
        }
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!("invalid sampling interval for x{}", j + 1)));
            }
            if self.categorical.contains(&j) && lo.ceil() > hi.floor() {
                return Err(Error::Validation(format!("no integer in the interval of x{}", j + 1)));
            }
        }
        if self.categorical.iter().any(|&j| j >= p) {
            return Err(Error::Validation("categorical index out of range".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.kind {
            ScenarioKind::Linear {
                intercept,
                coefficients,
            } => {
                if coefficients.len() != p || !finite(coefficients) || !intercept.is_finite() {
                    return Err(Error::Validation("linear scenario needs p finite coefficients".into()));
                }
            }
            ScenarioKind::DiminishingMarginal {
                intercept,
                a,
                saturation,
                b,
            } => {
                if p != 2 || !finite(&[*intercept, *a, *saturation, *b]) {
                    return Err(Error::Validation(
                        "diminishing_marginal scenario needs two features and finite parameters".into(),
                    ));
                }
            }
            ScenarioKind::Bump {
                intercept,
                coefficients,
                center,
                width,
                height,
            } => {
                if coefficients.len() != p
                    || center.len() != p
                    || !finite(coefficients)
                    || !finite(center)
                    || !(intercept.is_finite() && height.is_finite())
                    || !(*width > 0.0 && width.is_finite())
                {
                    return Err(Error::Validation("invalid bump scenario parameters".into()));
                }
            }
        }
        Ok(())
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let dot = |c: &[f64]| c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        match &self.kind {
            ScenarioKind::Linear {
                intercept,
                coefficients,
            } => intercept + dot(coefficients),
            ScenarioKind::DiminishingMarginal {
                intercept,
                a,
                saturation,
                b,
            } => intercept + a * x[0].min(*saturation) + b * x[1],
            ScenarioKind::Bump {
                intercept,
                coefficients,
                center,
                width,
                height,
            } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                intercept + dot(coefficients) + height * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn schema(&self) -> Vec<FeatureSpec> {
        (0..self.p())
            .map(|j| {
                let name = format!("x{}", j + 1);
                if self.categorical.contains(&j) {
                    FeatureSpec::categorical(&name, j, self.lower[j].ceil() as i64, self.upper[j].floor() as i64)
                } else {
                    FeatureSpec::continuous(
                        &name,
                        j,
                        ValidRange {
                            min: self.lower[j],
                            max: self.upper[j],
                        },
                    )
                }
            })
            .collect()
    }

    /// Draws one feature vector from the sampling density into `x`.
    pub fn draw_point<R: Rng>(&self, rng: &mut R, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            *v = if self.categorical.contains(&j) {
                rng.gen_range(lo.ceil() as i64..=hi.floor() as i64) as f64
            } else {
                lo + (hi - lo) * rng.gen::<f64>()
            };
        }
    }
}

impl Predictor for Scenario {
    fn dim(&self) -> usize {
        self.p()
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        self.probability(x)
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A sample drawn from a scenario, with the true probability per row.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dataset: Dataset,
    pub probabilities: Vec<f64>,
}

/// Draws `n` samples: features from the box, labels from Bernoulli(`p(x)`).
pub fn sample(scenario: &Scenario, n: usize, seed: u64) -> Result<Sample> {
    scenario.validate()?;
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let p = scenario.p();
    let parts = exec::map_chunks(n, exec::CHUNK, |r| {
        let mut rng = stream_rng(seed, (r.start / exec::CHUNK) as u64);
        let mut feats = vec![0.0; r.len() * p];
        let mut probs = Vec::with_capacity(r.len());
        let mut labels = Vec::with_capacity(r.len());
        for x in feats.chunks_exact_mut(p) {
            scenario.draw_point(&mut rng, x);
            let prob = scenario.probability(x);
            probs.push(prob);
            labels.push(u8::from(rng.gen::<f64>() < prob));
        }
        (feats, probs, labels)
    });
    let mut features = Vec::with_capacity(n * p);
    let mut probabilities = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (f, pr, l) in parts {
        features.extend(f);
        probabilities.extend(pr);
        labels.extend(l);
    }
    let dataset = Dataset::new(scenario.schema(), features, labels, Provenance::Synthetic)?;
    Ok(Sample {
        dataset,
        probabilities,
    })
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
    pub samples: usize,
}

/// Expected rejection indicator at `x`: the probability that the models
/// disagree and the realised outcome sides with `nn`.
pub fn rejection_weight(p: f64, nn_pred: u8, lr_pred: u8) -> f64 {
    match (nn_pred, lr_pred) {
        (1, 0) => p,
        (0, 1) => 1.0 - p,
        _ => 0.0,
    }
}

pub const MIN_MC_SAMPLES: usize = 1000;

/// Monte-Carlo estimate of the population rejection rate
/// `gamma = E[1{F=1, F~=0} p(x) + 1{F=0, F~=1} (1 - p(x))]` under the
/// scenario's sampling density.
pub fn true_rejection_rate<N, L>(
    scenario: &Scenario,
    nn: &N,
    lr: &L,
    tau: Threshold,
    mc_samples: usize,
    seed: u64,
) -> Result<Estimate>
where
    N: Predictor + ?Sized,
    L: Predictor + ?Sized,
{
    scenario.validate()?;
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::Argument(format!(
            "mc_samples must be at least {MIN_MC_SAMPLES}, got {mc_samples}"
        )));
    }
    check_dims(scenario, nn, lr)?;
    let p = scenario.p();
    let parts = exec::map_chunks(mc_samples, exec::CHUNK, |r| {
        let mut rng = stream_rng(seed, (r.start / exec::CHUNK) as u64);
        let mut x = vec![0.0; p];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in r {
            scenario.draw_point(&mut rng, &mut x);
            let w = rejection_weight(
                scenario.probability(&x),
                predict(nn.forward_unchecked(&x), tau),
                predict(lr.forward_unchecked(&x), tau),
            );
            s += w;
            s2 += w * w;
        }
        (s, s2)
    });
    let (s, s2) = parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = mc_samples as f64;
    let mean = s / m;
    let var = (s2 / m - mean * mean).max(0.0) * m / (m - 1.0);
    Ok(Estimate {
        value: mean,
        standard_error: (var / m).sqrt(),
        samples: mc_samples,
    })
}

fn check_dims<N, L>(scenario: &Scenario, nn: &N, lr: &L) -> Result<()>
where
    N: Predictor + ?Sized,
    L: Predictor + ?Sized,
{
    for d in [nn.dim(), lr.dim()] {
        if d != scenario.p() {
            return Err(Error::DimensionMismatch {
                expected: scenario.p(),
                got: d,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub n: usize,
    pub epsilon: f64,
    pub trials: usize,
    pub true_rate: Estimate,
    pub violations: usize,
    pub frequency: f64,
    pub bound: f64,
    /// `sqrt(b (1 - b) / trials)` with `b` the bound clipped to [0, 1].
    pub binomial_standard_error: f64,
}

impl CoverageResult {
    /// Frequency within the bound plus three binomial standard errors.
    pub fn holds(&self) -> bool {
        self.frequency <= self.bound + 3.0 * self.binomial_standard_error
    }
}

pub const MIN_TRIALS: usize = 200;
pub const COVERAGE_MC_SAMPLES: usize = 1_000_000;

/// Repeatedly draws `n`-sample training sets, computes the empirical
/// rejection rate from the fixed models and the realised labels, and counts
/// how often it misses the true rate by at least `epsilon`.
#[allow(clippy::too_many_arguments)]
pub fn coverage_experiment<N, L>(
    scenario: &Scenario,
    nn: &N,
    lr: &L,
    tau: Threshold,
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<CoverageResult>
where
    N: Predictor + ?Sized,
    L: Predictor + ?Sized,
{
    if trials < MIN_TRIALS {
        return Err(Error::Argument(format!("trials must be at least {MIN_TRIALS}, got {trials}")));
    }
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let bound = train_bound(n as u64, epsilon)?;
    let truth = true_rejection_rate(scenario, nn, lr, tau, COVERAGE_MC_SAMPLES, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let p = scenario.p();
    let misses = exec::map_indices(trials, |t| {
        let mut rng = stream_rng(seed, t as u64);
        let mut x = vec![0.0; p];
        let mut rejected = 0usize;
        for _ in 0..n {
            scenario.draw_point(&mut rng, &mut x);
            let y = u8::from(rng.gen::<f64>() < scenario.probability(&x));
            let f = predict(nn.forward_unchecked(&x), tau);
            let ft = predict(lr.forward_unchecked(&x), tau);
            if f != ft && y == f {
                rejected += 1;
            }
        }
        let gamma_x = rejected as f64 / n as f64;
        (gamma_x - truth.value).abs() >= epsilon
    });
    let violations = misses.iter().filter(|&&m| m).count();
    let b = bound.clamp(0.0, 1.0);
    Ok(CoverageResult {
        n,
        epsilon,
        trials,
        true_rate: truth,
        violations,
        frequency: violations as f64 / trials as f64,
        bound,
        binomial_standard_error: (b * (1.0 - b) / trials as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnPredictor, LogisticModel};

    #[test]
    fn named_scenarios_validate_and_round_trip() {
        for name in ["linear", "diminishing_marginal", "bump"] {
            let s = Scenario::named(name).unwrap();
            s.validate().unwrap();
            let json = serde_json::to_string(&s).unwrap();
            let back: Scenario = serde_json::from_str(&json).unwrap();
            assert_eq!(back, s);
        }
        assert!(Scenario::named("nope").is_err());
    }

    #[test]
    fn invalid_scenarios_are_refused() {
        let mut s = Scenario::named("linear").unwrap();
        s.upper[0] = s.lower[0];
        assert!(s.validate().is_err());
        let mut s = Scenario::named("bump").unwrap();
        if let ScenarioKind::Bump { width, .. } = &mut s.kind {
            *width = 0.0;
        }
        assert!(sample(&s, 10, 1).is_err());
        let s = Scenario::linear(0.0, vec![1.0; 3], 0.0, 1.0);
        let mut bad = s.clone();
        bad.lower.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_coefficients_give_fair_coin() {
        let s = Scenario::linear(0.0, vec![0.0, 0.0], -1.0, 1.0);
        let n = 20_000;
        let out = sample(&s, n, 3).unwrap();
        assert!(out.probabilities.iter().all(|&p| p == 0.5));
        let share = out.dataset.default_share();
        assert!((share - 0.5).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn zero_probability_gives_no_defaults() {
        let s = Scenario::linear(-1e4, vec![0.0], -1.0, 1.0);
        let out = sample(&s, 500, 3).unwrap();
        assert!(out.dataset.labels().iter().all(|&y| y == 0));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let s = Scenario::named("diminishing_marginal").unwrap();
        let a = sample(&s, 5000, 11).unwrap();
        let b = sample(&s, 5000, 11).unwrap();
        let c = sample(&s, 5000, 12).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.dataset, c.dataset);
        assert!(a.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(a.dataset.column(0).iter().all(|v| v.fract() == 0.0 && (0.0..=8.0).contains(v)));
    }

    #[test]
    fn identical_models_never_reject() {
        let s = Scenario::named("bump").unwrap();
        let m = LogisticModel::new(vec![1.0, 1.0], 0.0);
        let g = true_rejection_rate(&s, &m, &m, Threshold::default(), 5000, 1).unwrap();
        assert_eq!(g.value, 0.0);
        assert_eq!(g.standard_error, 0.0);
    }

    #[test]
    fn certain_default_with_always_default_nn() {
        let s = Scenario::linear(1e4, vec![0.0], -1.0, 1.0);
        let nn = FnPredictor::new(1, |_: &[f64]| 1.0);
        let lr = FnPredictor::new(1, |_: &[f64]| 0.0);
        let g = true_rejection_rate(&s, &nn, &lr, Threshold::default(), 2000, 1).unwrap();
        // the outcome always sides with the network, so every sample is rejected
        assert_eq!(g.value, 1.0);
        let g = true_rejection_rate(&s, &lr, &nn, Threshold::default(), 2000, 1).unwrap();
        assert_eq!(g.value, 0.0);
    }

    #[test]
    fn too_few_mc_samples_refused() {
        let s = Scenario::named("linear").unwrap();
        let m = LogisticModel::zeros(2);
        assert!(true_rejection_rate(&s, &m, &m, Threshold::default(), 999, 1).is_err());
    }

    #[test]
    fn coverage_with_huge_epsilon_has_no_violations() {
        let s = Scenario::named("linear").unwrap();
        let lr = LogisticModel::zeros(2);
        let r = coverage_experiment(&s, &s, &lr, Threshold::default(), 50, 5.0, 200, 4).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.holds());
        assert!(coverage_experiment(&s, &s, &lr, Threshold::default(), 50, 0.1, 199, 4).is_err());
    }

    #[test]
    fn single_sample_trials_are_vacuous() {
        let s = Scenario::named("linear").unwrap();
        let lr = LogisticModel::zeros(2);
        let r = coverage_experiment(&s, &s, &lr, Threshold::default(), 1, 0.01, 200, 4).unwrap();
        assert!(r.bound > 1.9);
        assert!(r.holds());
    }
}
