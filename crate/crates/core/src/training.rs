//! Cross-entropy minimisation with full-batch nonlinear conjugate gradient.
//!
//! One epoch is one CG iteration: a Polak-Ribiere+ direction update followed
//! by a single Armijo line search over the whole training set. Logistic
//! regression goes through the same optimiser as the networks; it is simply
//! the model without a hidden layer.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{sigmoid, LogisticModel, MlpModel, Model, Predictor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp2,
    Mlp5,
}

impl ModelKind {
    pub fn hidden_units(self) -> usize {
        match self {
            ModelKind::Logistic => 0,
            ModelKind::Mlp2 => 2,
            ModelKind::Mlp5 => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgVariant {
    PolakRibierePlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    BacktrackingArmijo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub gradient_tolerance: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub cg_variant: CgVariant,
    pub line_search: LineSearch,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            gradient_tolerance: 1e-8,
            seed: 0,
            init_scale: 0.1,
            cg_variant: CgVariant::PolakRibierePlus,
            line_search: LineSearch::BacktrackingArmijo,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::Argument("max_epochs must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::Argument("tolerances must be positive".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Argument("armijo_c must lie in (0, 1)".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::Argument("backtrack_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial_loss: f64,
    /// Loss after each epoch.
    pub losses: Vec<f64>,
    /// Gradient norm after each epoch.
    pub gradient_norms: Vec<f64>,
    pub final_gradient_norm: f64,
    pub epochs_run: usize,
    pub converged: bool,
    /// Epochs whose line search failed along the CG direction and fell back
    /// to steepest descent.
    pub restarts: Vec<usize>,
    /// Epoch at which even steepest descent found no Armijo step.
    pub line_search_failure: Option<usize>,
    /// Set when training was skipped and a constant model returned.
    pub degenerate: Option<String>,
}

impl TrainTrace {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial_loss)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = String::from("epoch,loss,gradient_norm\n");
        for (k, (l, g)) in self.losses.iter().zip(&self.gradient_norms).enumerate() {
            s.push_str(&format!("{},{l},{g}\n", k + 1));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn check_dims(model: &Model, data: &Dataset) -> Result<()> {
    if model.dim() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: data.p(),
        });
    }
    Ok(())
}

#[inline]
fn sample_loss(f: f64, y: u8) -> f64 {
    let f = f.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -f.ln()
    } else {
        -(1.0 - f).ln()
    }
}

/// Mean binary cross-entropy of `model` on `data`.
pub fn cross_entropy_loss(model: &Model, data: &Dataset) -> Result<f64> {
    check_dims(model, data)?;
    Ok(loss_unchecked(model, data))
}

/// Mean cross-entropy of raw probabilities against labels.
pub fn cross_entropy_from_probabilities(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    if probabilities.len() != labels.len() || labels.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: probabilities.len(),
        });
    }
    let s: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&f, &y)| sample_loss(f, y))
        .sum();
    Ok(s / labels.len() as f64)
}

fn loss_unchecked(model: &Model, data: &Dataset) -> f64 {
    let x = data.features();
    let y = data.labels();
    let p = data.p();
    let parts = exec::map_chunks(data.n(), exec::CHUNK, |r| {
        r.map(|i| sample_loss(model.forward_unchecked(&x[i * p..(i + 1) * p]), y[i]))
            .sum::<f64>()
    });
    parts.into_iter().sum::<f64>() * (1.0 / data.n() as f64)
}

fn loss_and_gradient_unchecked(model: &Model, data: &Dataset) -> (f64, Vec<f64>) {
    let np = model.num_parameters();
    let x = data.features();
    let y = data.labels();
    let p = data.p();
    let h = model.hidden_units();
    let parts = exec::map_chunks(data.n(), exec::CHUNK, |r| {
        // slot 0 holds the loss sum, the rest the gradient
        let mut acc = vec![0.0; np + 1];
        let mut hidden = vec![0.0; h];
        for i in r {
            let xi = &x[i * p..(i + 1) * p];
            let z = match model {
                Model::Logistic(m) => m.logit(xi),
                Model::Mlp(m) => m.hidden_and_logit(xi, &mut hidden),
            };
            let f = sigmoid(z);
            acc[0] += sample_loss(f, y[i]);
            model.accumulate_logit_gradient(xi, f - f64::from(y[i]), &hidden, &mut acc[1..]);
        }
        acc
    });
    let mut acc = exec::sum_vectors(parts, np + 1);
    let inv_n = 1.0 / data.n() as f64;
    acc.iter_mut().for_each(|v| *v *= inv_n);
    let loss = acc.remove(0);
    (loss, acc)
}

/// Gradient of [`cross_entropy_loss`] with respect to the flat parameter
/// vector (see [`Model::parameters`]).
pub fn parameter_gradient(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    check_dims(model, data)?;
    Ok(loss_and_gradient_unchecked(model, data).1)
}

pub fn loss_and_gradient(model: &Model, data: &Dataset) -> Result<(f64, Vec<f64>)> {
    check_dims(model, data)?;
    Ok(loss_and_gradient_unchecked(model, data))
}

/// Seeded initial model: weights uniform in `[-init_scale, init_scale]`,
/// biases zero.
pub fn initial_model(kind: ModelKind, p: usize, config: &TrainConfig) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let s = config.init_scale;
    let mut draw = |k: usize| -> Vec<f64> {
        (0..k)
            .map(|_| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 })
            .collect()
    };
    match kind.hidden_units() {
        0 => Model::Logistic(LogisticModel::new(draw(p), 0.0)),
        h => {
            let mut m = MlpModel::zeros(p, h);
            m.hidden_weights = draw(h * p);
            m.output_weights = draw(h);
            Model::Mlp(m)
        }
    }
}

/// A model whose output is the (clamped) class frequency everywhere.
pub fn constant_model(kind: ModelKind, p: usize, frequency: f64) -> Model {
    let f = frequency.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let logit = (f / (1.0 - f)).ln();
    match kind.hidden_units() {
        0 => Model::Logistic(LogisticModel::new(vec![0.0; p], logit)),
        h => {
            let mut m = MlpModel::zeros(p, h);
            m.output_bias = logit;
            Model::Mlp(m)
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Initialises a model of `kind` and fits it.
pub fn train(kind: ModelKind, data: &Dataset, config: &TrainConfig) -> Result<(Model, TrainTrace)> {
    config.validate()?;
    let share = data.default_share();
    if share == 0.0 || share == 1.0 {
        log::warn!("labels contain a single class; returning a constant model");
        let model = constant_model(kind, data.p(), share);
        let loss = loss_unchecked(&model, data);
        let trace = TrainTrace {
            initial_loss: loss,
            losses: Vec::new(),
            gradient_norms: Vec::new(),
            final_gradient_norm: 0.0,
            epochs_run: 0,
            converged: false,
            restarts: Vec::new(),
            line_search_failure: None,
            degenerate: Some(format!("single-class labels (default share {share})")),
        };
        return Ok((model, trace));
    }
    fit(initial_model(kind, data.p(), config), data, config)
}

/// Runs Polak-Ribiere+ CG with Armijo line searches from `model`.
pub fn fit(model: Model, data: &Dataset, config: &TrainConfig) -> Result<(Model, TrainTrace)> {
    config.validate()?;
    check_dims(&model, data)?;
    let mut theta = model.parameters();
    let mut current = model;
    let (mut loss, mut grad) = loss_and_gradient_unchecked(&current, data);
    let mut trace = TrainTrace {
        initial_loss: loss,
        losses: Vec::with_capacity(config.max_epochs),
        gradient_norms: Vec::with_capacity(config.max_epochs),
        final_gradient_norm: norm(&grad),
        epochs_run: 0,
        converged: false,
        restarts: Vec::new(),
        line_search_failure: None,
        degenerate: None,
    };
    let mut direction: Vec<f64> = grad.iter().map(|g| -g).collect();
    // (accepted step, directional derivative) of the previous epoch
    let mut previous: Option<(f64, f64)> = None;

    for epoch in 0..config.max_epochs {
        if trace.final_gradient_norm < config.gradient_tolerance {
            trace.converged = true;
            break;
        }
        let mut slope = dot(&grad, &direction);
        if slope >= 0.0 {
            direction = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let step = loop {
            let alpha0 = match previous {
                Some((a, s)) => (a * s / slope).clamp(1e-12, 1e12),
                None => 1.0 / trace.final_gradient_norm.max(1.0),
            };
            match armijo_search(&current, &theta, &direction, loss, slope, alpha0, data, config) {
                Some(found) => break Some(found),
                None if !is_steepest(&grad, &direction) => {
                    trace.restarts.push(epoch + 1);
                    direction = grad.iter().map(|g| -g).collect();
                    slope = -dot(&grad, &grad);
                    previous = None;
                }
                None => break None,
            }
        };
        let Some((alpha, new_loss)) = step else {
            trace.line_search_failure = Some(epoch + 1);
            log::debug!("line search failed at epoch {}", epoch + 1);
            break;
        };
        for (t, d) in theta.iter_mut().zip(&direction) {
            *t += alpha * d;
        }
        current.set_parameters(&theta);
        let (l, g_new) = loss_and_gradient_unchecked(&current, data);
        debug_assert_eq!(l.to_bits(), new_loss.to_bits());
        // Polak-Ribiere+ with restart on negative beta
        let gg = dot(&grad, &grad);
        let beta = if gg > 0.0 {
            (g_new.iter().zip(&grad).map(|(a, b)| a * (a - b)).sum::<f64>() / gg).max(0.0)
        } else {
            0.0
        };
        for (d, g) in direction.iter_mut().zip(&g_new) {
            *d = -g + beta * *d;
        }
        previous = Some((alpha, slope));
        loss = l;
        grad = g_new;
        trace.final_gradient_norm = norm(&grad);
        trace.losses.push(loss);
        trace.gradient_norms.push(trace.final_gradient_norm);
        trace.epochs_run = epoch + 1;
    }
    if !trace.converged && trace.final_gradient_norm < config.gradient_tolerance {
        trace.converged = true;
    }
    Ok((current, trace))
}

fn is_steepest(grad: &[f64], direction: &[f64]) -> bool {
    grad.iter().zip(direction).all(|(g, d)| *d == -*g)
}

/// Backtracking Armijo search. When the first trial already satisfies the
/// sufficient-decrease condition the step is doubled while the loss keeps
/// improving, so a conservative initial guess does not cap progress.
#[allow(clippy::too_many_arguments)]
fn armijo_search(
    model: &Model,
    theta: &[f64],
    direction: &[f64],
    loss: f64,
    slope: f64,
    alpha0: f64,
    data: &Dataset,
    config: &TrainConfig,
) -> Option<(f64, f64)> {
    const MAX_TRIALS: usize = 60;
    const MAX_EXPANSIONS: usize = 20;
    let trial_loss = |alpha: f64| {
        let t: Vec<f64> = theta.iter().zip(direction).map(|(t, d)| t + alpha * d).collect();
        loss_unchecked(&model.with_parameters(&t), data)
    };
    let armijo = |alpha: f64, l: f64| l.is_finite() && l <= loss + config.armijo_c * alpha * slope;

    let mut alpha = alpha0;
    let mut l = trial_loss(alpha);
    if armijo(alpha, l) {
        for _ in 0..MAX_EXPANSIONS {
            let a2 = alpha * 2.0;
            let l2 = trial_loss(a2);
            if armijo(a2, l2) && l2 < l {
                alpha = a2;
                l = l2;
            } else {
                break;
            }
        }
        return Some((alpha, l));
    }
    for _ in 0..MAX_TRIALS {
        alpha *= config.backtrack_factor;
        l = trial_loss(alpha);
        if armijo(alpha, l) {
            return Some((alpha, l));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, Provenance, ValidRange};
    use crate::models::{predict_all, Threshold};

    fn dataset(rows: &[&[f64]], labels: &[u8]) -> Dataset {
        let p = rows[0].len();
        let schema = (0..p)
            .map(|j| FeatureSpec::continuous(&format!("x{j}"), j, ValidRange::unbounded()))
            .collect();
        Dataset::new(schema, rows.concat(), labels.to_vec(), Provenance::Synthetic).unwrap()
    }

    fn training_error(model: &Model, d: &Dataset) -> f64 {
        let probs = crate::models::forward_rows(model, d.features(), d.p());
        let pred = predict_all(&probs, Threshold::default());
        pred.iter().zip(d.labels()).filter(|(a, b)| a != b).count() as f64 / d.n() as f64
    }

    #[test]
    fn coin_flip_loss_is_ln2() {
        let d = dataset(&[&[1.0], &[2.0], &[-4.0]], &[1, 0, 1]);
        let m = Model::Logistic(LogisticModel::zeros(1));
        let l = cross_entropy_loss(&m, &d).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn hand_loss_example() {
        let l = cross_entropy_from_probabilities(&[0.9, 0.2], &[1, 0]).unwrap();
        let expect = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.1643).abs() < 1e-4);
    }

    #[test]
    fn perfect_prediction_loss_is_clamped_near_zero() {
        let l = cross_entropy_from_probabilities(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(l > 0.0 && l < 1e-11);
    }

    #[test]
    fn loss_dimension_mismatch() {
        let d = dataset(&[&[1.0, 2.0]], &[1]);
        let m = Model::Logistic(LogisticModel::zeros(3));
        assert!(cross_entropy_loss(&m, &d).is_err());
        assert!(parameter_gradient(&m, &d).is_err());
    }

    #[test]
    fn symmetric_data_has_zero_bias_gradient() {
        let d = dataset(&[&[1.0], &[-1.0], &[2.0], &[-2.0]], &[1, 0, 0, 1]);
        let g = parameter_gradient(&Model::Logistic(LogisticModel::zeros(1)), &d).unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn duplicating_samples_keeps_mean_gradient() {
        let rows: [&[f64]; 3] = [&[0.3, -1.0], &[1.2, 0.5], &[-0.7, 2.0]];
        let d1 = dataset(&rows, &[1, 0, 1]);
        let doubled: Vec<&[f64]> = rows.iter().chain(rows.iter()).copied().collect();
        let d2 = dataset(&doubled, &[1, 0, 1, 1, 0, 1]);
        let m = initial_model(ModelKind::Mlp2, 2, &TrainConfig::default().with_seed(3));
        let g1 = parameter_gradient(&m, &d1).unwrap();
        let g2 = parameter_gradient(&m, &d2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let d = dataset(
            &[&[-2.0, 1.0], &[-1.0, -1.0], &[-1.5, 0.0], &[1.0, 0.5], &[2.0, -1.0], &[1.5, 1.0]],
            &[0, 0, 0, 1, 1, 1],
        );
        let (m, trace) = train(ModelKind::Logistic, &d, &TrainConfig::default()).unwrap();
        assert_eq!(training_error(&m, &d), 0.0);
        assert!(trace.final_loss() <= trace.initial_loss);
    }

    #[test]
    fn xor_needs_the_hidden_layer() {
        let d = dataset(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]], &[0, 1, 1, 0]);
        let (lr, _) = train(ModelKind::Logistic, &d, &TrainConfig::default()).unwrap();
        assert!(training_error(&lr, &d) >= 0.25);
        let cfg = TrainConfig {
            init_scale: 1.0,
            max_epochs: 2000,
            ..TrainConfig::default()
        };
        let (nn, _) = train(ModelKind::Mlp2, &d, &cfg).unwrap();
        assert_eq!(training_error(&nn, &d), 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let d = dataset(
            &[&[0.1, 0.0], &[0.4, 1.0], &[1.0, 0.2], &[0.9, 0.8], &[0.3, 0.3]],
            &[0, 1, 1, 0, 1],
        );
        let cfg = TrainConfig::default().with_seed(11).with_epochs(50);
        let (a, ta) = train(ModelKind::Mlp2, &d, &cfg).unwrap();
        let (b, tb) = train(ModelKind::Mlp2, &d, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn loss_is_monotone_over_epochs() {
        let d = dataset(
            &[&[0.1, 0.0], &[0.4, 1.0], &[1.0, 0.2], &[0.9, 0.8], &[0.3, 0.3], &[0.7, 0.1]],
            &[0, 1, 1, 0, 1, 0],
        );
        let (_, t) = train(ModelKind::Mlp5, &d, &TrainConfig::default().with_epochs(100)).unwrap();
        let mut prev = t.initial_loss;
        for &l in &t.losses {
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn single_class_gives_flagged_constant_model() {
        let d = dataset(&[&[0.0], &[1.0]], &[1, 1]);
        let (m, t) = train(ModelKind::Mlp5, &d, &TrainConfig::default()).unwrap();
        assert!(t.degenerate.is_some());
        assert_eq!(training_error(&m, &d), 0.0);
        assert_eq!(m.as_mlp().unwrap().output_weights, vec![0.0; 5]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().with_epochs(0).validate().is_err());
        let bad = TrainConfig {
            gradient_tolerance: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
