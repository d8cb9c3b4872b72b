//! Logistic regression, the one-hidden-layer network, and their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Decision threshold applied to predicted default probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Threshold(tau))
        } else {
            Err(Error::Argument(format!("threshold {tau} must lie in (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold(0.5)
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Threshold::new(v)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

/// 1 iff `probability >= tau`; ties count as default.
#[inline]
pub fn predict(probability: f64, tau: Threshold) -> u8 {
    u8::from(probability >= tau.0)
}

/// Anything that maps a feature vector to a default probability.
///
/// The `*_unchecked` methods skip dimension and finiteness checks and are
/// used inside hot loops once the data has been validated.
pub trait Predictor: Sync {
    fn dim(&self) -> usize;

    fn forward_unchecked(&self, x: &[f64]) -> f64;

    fn forward(&self, x: &[f64]) -> Result<f64> {
        check_input(self.dim(), x)?;
        Ok(self.forward_unchecked(x))
    }
}

/// Predictors with an analytic input gradient.
pub trait Differentiable: Predictor {
    fn input_gradient_unchecked(&self, x: &[f64], out: &mut [f64]);

    fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self.dim(), x)?;
        let mut g = vec![0.0; self.dim()];
        self.input_gradient_unchecked(x, &mut g);
        Ok(g)
    }
}

pub(crate) fn check_input(dim: usize, x: &[f64]) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite input at feature {j}")));
    }
    Ok(())
}

/// `f(x) = sigmoid(bias + a . x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn new(coefficients: Vec<f64>, bias: f64) -> Self {
        LogisticModel { coefficients, bias }
    }

    pub fn zeros(p: usize) -> Self {
        LogisticModel::new(vec![0.0; p], 0.0)
    }

    #[inline]
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(a, v)| a * v)
                .sum::<f64>()
    }
}

impl Predictor for LogisticModel {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

impl Differentiable for LogisticModel {
    fn input_gradient_unchecked(&self, x: &[f64], out: &mut [f64]) {
        let s = self.forward_unchecked(x);
        let slope = s * (1.0 - s);
        for (o, a) in out.iter_mut().zip(&self.coefficients) {
            *o = a * slope;
        }
    }
}

/// One hidden layer of logistic units followed by a sigmoid output.
///
/// `hidden_weights` is `hidden_units x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub inputs: usize,
    pub hidden_units: usize,
    pub hidden_weights: Vec<f64>,
    pub hidden_biases: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

impl MlpModel {
    pub fn zeros(inputs: usize, hidden_units: usize) -> Self {
        MlpModel {
            inputs,
            hidden_units,
            hidden_weights: vec![0.0; inputs * hidden_units],
            hidden_biases: vec![0.0; hidden_units],
            output_weights: vec![0.0; hidden_units],
            output_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_units;
        if self.hidden_weights.len() != h * self.inputs
            || self.hidden_biases.len() != h
            || self.output_weights.len() != h
        {
            return Err(Error::Validation(format!(
                "network arrays do not match {} inputs x {h} hidden units",
                self.inputs
            )));
        }
        Ok(())
    }

    pub fn hidden_row(&self, k: usize) -> &[f64] {
        &self.hidden_weights[k * self.inputs..(k + 1) * self.inputs]
    }

    /// Hidden activations into `hidden`, returns the output pre-activation.
    #[inline]
    pub fn hidden_and_logit(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let mut z = self.output_bias;
        for k in 0..self.hidden_units {
            let pre = self.hidden_biases[k]
                + self
                    .hidden_row(k)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>();
            hidden[k] = sigmoid(pre);
            z += self.output_weights[k] * hidden[k];
        }
        z
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut hidden = vec![0.0; self.hidden_units];
        self.hidden_and_logit(x, &mut hidden)
    }
}

impl Predictor for MlpModel {
    fn dim(&self) -> usize {
        self.inputs
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

impl Differentiable for MlpModel {
    fn input_gradient_unchecked(&self, x: &[f64], out: &mut [f64]) {
        let mut hidden = vec![0.0; self.hidden_units];
        let f = sigmoid(self.hidden_and_logit(x, &mut hidden));
        let outer = f * (1.0 - f);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &a) in hidden.iter().enumerate() {
            let c = outer * self.output_weights[k] * a * (1.0 - a);
            for (o, w) in out.iter_mut().zip(self.hidden_row(k)) {
                *o += c * w;
            }
        }
    }
}

/// A trained predictor of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
pub enum Model {
    Logistic(LogisticModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn num_parameters(&self) -> usize {
        match self {
            Model::Logistic(m) => m.coefficients.len() + 1,
            Model::Mlp(m) => m.hidden_units * (m.inputs + 2) + 1,
        }
    }

    /// Parameters as a flat vector: `[a.., bias]` for the logistic model and
    /// `[W (row-major).., hidden biases.., output weights.., output bias]`
    /// for the network.
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            Model::Logistic(m) => {
                let mut v = m.coefficients.clone();
                v.push(m.bias);
                v
            }
            Model::Mlp(m) => {
                let mut v = m.hidden_weights.clone();
                v.extend_from_slice(&m.hidden_biases);
                v.extend_from_slice(&m.output_weights);
                v.push(m.output_bias);
                v
            }
        }
    }

    pub fn set_parameters(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_parameters(), "parameter length");
        match self {
            Model::Logistic(m) => {
                let p = m.coefficients.len();
                m.coefficients.copy_from_slice(&theta[..p]);
                m.bias = theta[p];
            }
            Model::Mlp(m) => {
                let hp = m.hidden_units * m.inputs;
                let h = m.hidden_units;
                m.hidden_weights.copy_from_slice(&theta[..hp]);
                m.hidden_biases.copy_from_slice(&theta[hp..hp + h]);
                m.output_weights.copy_from_slice(&theta[hp + h..hp + 2 * h]);
                m.output_bias = theta[hp + 2 * h];
            }
        }
    }

    pub fn with_parameters(&self, theta: &[f64]) -> Model {
        let mut m = self.clone();
        m.set_parameters(theta);
        m
    }

    /// Output pre-activation.
    pub fn logit(&self, x: &[f64]) -> f64 {
        match self {
            Model::Logistic(m) => m.logit(x),
            Model::Mlp(m) => m.logit(x),
        }
    }

    /// Accumulates `scale * d logit / d theta` at `x` into `grad`.
    pub(crate) fn accumulate_logit_gradient(
        &self,
        x: &[f64],
        scale: f64,
        hidden: &[f64],
        grad: &mut [f64],
    ) {
        match self {
            Model::Logistic(m) => {
                let p = m.coefficients.len();
                for (g, v) in grad[..p].iter_mut().zip(x) {
                    *g += scale * v;
                }
                grad[p] += scale;
            }
            Model::Mlp(m) => {
                let p = m.inputs;
                let h = m.hidden_units;
                let hp = h * p;
                for k in 0..h {
                    let a = hidden[k];
                    let back = scale * m.output_weights[k] * a * (1.0 - a);
                    for (g, v) in grad[k * p..(k + 1) * p].iter_mut().zip(x) {
                        *g += back * v;
                    }
                    grad[hp + k] += back;
                    grad[hp + h + k] += scale * a;
                }
                grad[hp + 2 * h] += scale;
            }
        }
    }

    pub fn as_mlp(&self) -> Option<&MlpModel> {
        match self {
            Model::Mlp(m) => Some(m),
            Model::Logistic(_) => None,
        }
    }

    pub fn as_logistic(&self) -> Option<&LogisticModel> {
        match self {
            Model::Logistic(m) => Some(m),
            Model::Mlp(_) => None,
        }
    }

    pub fn hidden_units(&self) -> usize {
        match self {
            Model::Logistic(_) => 0,
            Model::Mlp(m) => m.hidden_units,
        }
    }
}

impl Predictor for Model {
    fn dim(&self) -> usize {
        match self {
            Model::Logistic(m) => m.dim(),
            Model::Mlp(m) => m.dim(),
        }
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Model::Logistic(m) => m.forward_unchecked(x),
            Model::Mlp(m) => m.forward_unchecked(x),
        }
    }
}

impl Differentiable for Model {
    fn input_gradient_unchecked(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Model::Logistic(m) => m.input_gradient_unchecked(x, out),
            Model::Mlp(m) => m.input_gradient_unchecked(x, out),
        }
    }
}

impl From<LogisticModel> for Model {
    fn from(m: LogisticModel) -> Self {
        Model::Logistic(m)
    }
}

impl From<MlpModel> for Model {
    fn from(m: MlpModel) -> Self {
        Model::Mlp(m)
    }
}

/// Wraps a closure as a [`Predictor`], e.g. a known true probability.
pub struct FnPredictor<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnPredictor { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A model trained on standardised inputs, evaluated on raw feature vectors.
pub struct Scaled<'a, M: ?Sized> {
    pub scaler: &'a crate::data::ScalerParams,
    pub model: &'a M,
}

impl<M: Predictor + ?Sized> Predictor for Scaled<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let mut row = x.to_vec();
        self.scaler.transform_row(&mut row);
        self.model.forward_unchecked(&row)
    }
}

/// Probabilities for every row of a row-major matrix.
pub fn forward_rows<P: Predictor + ?Sized>(model: &P, features: &[f64], p: usize) -> Vec<f64> {
    let n = if p == 0 { 0 } else { features.len() / p };
    crate::exec::map_chunks(n, crate::exec::CHUNK, |r| {
        r.map(|i| model.forward_unchecked(&features[i * p..(i + 1) * p]))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn predict_all(probabilities: &[f64], tau: Threshold) -> Vec<u8> {
    probabilities.iter().map(|&f| predict(f, tau)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logistic_is_half() {
        let m = LogisticModel::zeros(3);
        assert_eq!(m.forward(&[1.0, -7.0, 1e6]).unwrap(), 0.5);
    }

    #[test]
    fn logistic_ln3_is_three_quarters() {
        let m = LogisticModel::new(vec![1.0], 0.0);
        assert!((m.forward(&[3f64.ln()]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constant_network_is_half_with_zero_gradient() {
        let mut m = MlpModel::zeros(3, 2);
        m.hidden_weights = vec![0.3, -1.0, 2.0, 0.5, 0.5, -0.2];
        m.hidden_biases = vec![0.1, -0.4];
        let x = [0.2, -1.3, 4.0];
        assert_eq!(m.forward(&x).unwrap(), 0.5);
        assert_eq!(m.input_gradient(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = LogisticModel::zeros(2);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.forward(&[1.0, f64::NAN]), Err(Error::Argument(_))));
        assert!(m.input_gradient(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn predict_threshold_rule() {
        let half = Threshold::default();
        assert_eq!(predict(0.5, half), 1);
        assert_eq!(predict(0.49999, half), 0);
        assert_eq!(predict(1.0, Threshold::new(0.9).unwrap()), 1);
        assert!(Threshold::new(1.0).is_err());
        assert!(Threshold::new(0.0).is_err());
    }

    #[test]
    fn logistic_gradient_identity() {
        let m = LogisticModel::new(vec![2.5], 0.0);
        let x = [0.4];
        let s = m.forward(&x).unwrap();
        let g = m.input_gradient(&x).unwrap();
        assert!((g[0] - 2.5 * s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn parameter_round_trip() {
        let mut m = Model::Mlp(MlpModel::zeros(3, 2));
        let theta: Vec<f64> = (0..m.num_parameters()).map(|i| i as f64).collect();
        m.set_parameters(&theta);
        assert_eq!(m.parameters(), theta);
        let mlp = m.as_mlp().unwrap();
        assert_eq!(mlp.hidden_biases, vec![6.0, 7.0]);
        assert_eq!(mlp.output_bias, 10.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!(sigmoid(-30.0) > 0.0);
    }

    #[test]
    fn model_json_carries_kind_tag() {
        let m = Model::Logistic(LogisticModel::new(vec![1.0, -2.0], 0.5));
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"model_kind\":\"logistic\""));
        assert_eq!(serde_json::from_str::<Model>(&s).unwrap(), m);
    }
}
