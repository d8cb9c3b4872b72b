//! Hoeffding bounds on how far an empirical rejection rate can drift from the
//! population rate, and between a training and a test set.
//!
//! Bounds are returned as computed and may exceed 1; callers decide how to
//! label vacuous values (see [`is_vacuous`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_n(n: u64, what: &str) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument(format!("{what} must be at least 1")));
    }
    Ok(())
}

fn check_eps(eps: f64, what: &str) -> Result<()> {
    if !(eps > 0.0) || eps.is_nan() {
        return Err(Error::Argument(format!("{what} must be positive, got {eps}")));
    }
    Ok(())
}

/// `P(|gamma_train - gamma| >= epsilon) <= 2 exp(-2 n epsilon^2)`.
pub fn train_bound(n: u64, epsilon: f64) -> Result<f64> {
    check_n(n, "n")?;
    check_eps(epsilon, "epsilon")?;
    Ok(2.0 * (-2.0 * n as f64 * epsilon * epsilon).exp())
}

/// `P(|gamma_train - gamma_test| >= eps1 + eps2)` is at most the sum of the
/// two one-sample bounds.
pub fn train_test_bound(n_train: u64, n_test: u64, eps1: f64, eps2: f64) -> Result<f64> {
    check_n(n_test, "n_test")?;
    check_eps(eps2, "epsilon_2")?;
    Ok(train_bound(n_train, eps1)? + train_bound(n_test, eps2)?)
}

/// Smallest epsilon whose [`train_bound`] equals `delta`.
pub fn epsilon_for_confidence(n: u64, delta: f64) -> Result<f64> {
    check_n(n, "n")?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta {delta} must lie in (0, 1)")));
    }
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

pub fn is_vacuous(bound: f64) -> bool {
    bound >= 1.0
}

/// One evaluated bound, as printed by the `bounds` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n_train: u64,
    pub n_test: Option<u64>,
    pub epsilon_1: f64,
    pub epsilon_2: Option<f64>,
    pub bound: f64,
    pub vacuous: bool,
}

/// Inputs to a bound evaluation or inversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationQuery {
    pub n_train: u64,
    pub n_test: Option<u64>,
    pub epsilon_1: Option<f64>,
    pub epsilon_2: Option<f64>,
    pub delta: Option<f64>,
}

impl ConcentrationQuery {
    /// Evaluates the query. With `delta` the bound is inverted for each
    /// sample size present; otherwise the one- or two-sample bound is
    /// evaluated at the given epsilons.
    pub fn evaluate(&self) -> Result<Vec<BoundRow>> {
        if let Some(delta) = self.delta {
            let mut rows = Vec::new();
            for n in std::iter::once(self.n_train).chain(self.n_test) {
                let eps = epsilon_for_confidence(n, delta)?;
                rows.push(BoundRow {
                    n_train: n,
                    n_test: None,
                    epsilon_1: eps,
                    epsilon_2: None,
                    bound: train_bound(n, eps)?,
                    vacuous: false,
                });
            }
            return Ok(rows);
        }
        let eps1 = self
            .epsilon_1
            .ok_or_else(|| Error::Argument("either epsilon or delta is required".into()))?;
        let bound = match self.n_test {
            Some(m) => {
                let eps2 = self.epsilon_2.unwrap_or(eps1);
                train_test_bound(self.n_train, m, eps1, eps2)?
            }
            None => train_bound(self.n_train, eps1)?,
        };
        Ok(vec![BoundRow {
            n_train: self.n_train,
            n_test: self.n_test,
            epsilon_1: eps1,
            epsilon_2: self.n_test.map(|_| self.epsilon_2.unwrap_or(eps1)),
            bound,
            vacuous: is_vacuous(bound),
        }])
    }
}
