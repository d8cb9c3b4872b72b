//! Sensitivity-based explanations.
//!
//! * Global: root-mean-square input gradient per feature over the training
//!   set, normalised to sum to 100.
//! * Local feature-based: the input gradient at one sample, plus the output
//!   change from a unit step on each ordinal categorical feature.
//! * Local instance-based: value patterns shared by the rejected samples,
//!   with scatter data against the logistic model's output.
//!
//! Gradients are taken with respect to the inputs the model consumes, i.e.
//! standardised continuous features and raw categorical codes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::models::{check_input, forward_rows, Differentiable, Predictor, Threshold};
use crate::selective::predicted_rejections;
use crate::training::PROB_CLAMP;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub model_tag: String,
    pub feature_names: Vec<String>,
    /// Non-negative, summing to 100.
    pub lambdas: Vec<f64>,
    /// Unnormalised root-mean-square partial derivatives.
    pub rms_gradients: Vec<f64>,
}

impl GlobalImportance {
    /// Feature indices sorted by decreasing importance (stable on ties).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.lambdas.len()).collect();
        idx.sort_by(|&a, &b| self.lambdas[b].total_cmp(&self.lambdas[a]));
        idx
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("feature,name,lambda\n");
        for (j, (name, l)) in self.feature_names.iter().zip(&self.lambdas).enumerate() {
            s.push_str(&format!("x{},{name},{l}\n", j + 1));
        }
        write_file(path, &s)
    }
}

pub(crate) fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(content.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// `lambda_j = (100 / C) * sqrt(mean_i (d f(x_i) / d x_j)^2)`.
pub fn global_importance<M: Differentiable + ?Sized>(
    model: &M,
    data: &Dataset,
    model_tag: &str,
) -> Result<GlobalImportance> {
    let p = data.p();
    if model.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: p,
        });
    }
    let x = data.features();
    let parts = exec::map_chunks(data.n(), exec::CHUNK, |r| {
        let mut acc = vec![0.0; p];
        let mut g = vec![0.0; p];
        for i in r {
            model.input_gradient_unchecked(&x[i * p..(i + 1) * p], &mut g);
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v * v;
            }
        }
        acc
    });
    let sums = exec::sum_vectors(parts, p);
    let rms: Vec<f64> = sums.iter().map(|s| (s / data.n() as f64).sqrt()).collect();
    let total: f64 = rms.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Undefined(
            "model output does not vary with any input; importance is undefined".into(),
        ));
    }
    Ok(GlobalImportance {
        model_tag: model_tag.to_string(),
        feature_names: data.schema().iter().map(|s| s.name.clone()).collect(),
        lambdas: rms.iter().map(|r| 100.0 * r / total).collect(),
        rms_gradients: rms,
    })
}

/// Partial derivatives of the output at `x`.
pub fn local_gradient_importance<M: Differentiable + ?Sized>(model: &M, x: &[f64]) -> Result<Vec<f64>> {
    model.input_gradient(x)
}

/// `f(x with x_j + direction) - f(x)` for an ordinal categorical feature.
/// `None` when the step leaves the feature's valid range.
pub fn categorical_perturbation<M: Predictor + ?Sized>(
    model: &M,
    x: &[f64],
    schema: &[FeatureSpec],
    feature: usize,
    direction: i8,
) -> Result<Option<f64>> {
    check_input(model.dim(), x)?;
    let spec = schema
        .get(feature)
        .ok_or_else(|| Error::Argument(format!("feature {feature} out of range")))?;
    if !spec.is_categorical() {
        return Err(Error::Argument(format!(
            "feature {} is not ordinal categorical",
            spec.name
        )));
    }
    if direction != 1 && direction != -1 {
        return Err(Error::Argument("direction must be +1 or -1".into()));
    }
    let stepped = x[feature] + f64::from(direction);
    if !spec.valid_range.contains(stepped) {
        return Ok(None);
    }
    let mut xs = x.to_vec();
    xs[feature] = stepped;
    Ok(Some(model.forward_unchecked(&xs) - model.forward_unchecked(x)))
}

/// Mean `|delta f|` of a unit step over `indices`, skipping samples where the
/// step is out of range. `None` when no sample could be stepped.
pub fn mean_abs_perturbation<M: Predictor + ?Sized>(
    model: &M,
    data: &Dataset,
    indices: &[usize],
    feature: usize,
    direction: i8,
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut k = 0usize;
    for &i in indices {
        if let Some(d) = categorical_perturbation(model, data.row(i), data.schema(), feature, direction)? {
            sum += d.abs();
            k += 1;
        }
    }
    Ok((k > 0).then(|| sum / k as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDelta {
    pub feature: usize,
    pub name: String,
    pub step_down: Option<f64>,
    pub step_up: Option<f64>,
}

impl CategoricalDelta {
    /// The in-range direction with the larger magnitude.
    pub fn dominant(&self) -> Option<f64> {
        match (self.step_down, self.step_up) {
            (Some(a), Some(b)) => Some(if a.abs() >= b.abs() { a } else { b }),
            (a, b) => a.or(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub sample_index: usize,
    pub output: f64,
    pub gradient_importances: Vec<f64>,
    pub categorical_deltas: Vec<CategoricalDelta>,
}

pub fn local_explanation<M: Differentiable + ?Sized>(
    model: &M,
    data: &Dataset,
    sample_index: usize,
) -> Result<LocalExplanation> {
    if sample_index >= data.n() {
        return Err(Error::Argument(format!(
            "sample {sample_index} out of range (n = {})",
            data.n()
        )));
    }
    let x = data.row(sample_index);
    let gradient_importances = local_gradient_importance(model, x)?;
    let mut categorical_deltas = Vec::new();
    for (j, spec) in data.schema().iter().enumerate() {
        if spec.is_categorical() {
            categorical_deltas.push(CategoricalDelta {
                feature: j,
                name: spec.name.clone(),
                step_down: categorical_perturbation(model, x, data.schema(), j, -1)?,
                step_up: categorical_perturbation(model, x, data.schema(), j, 1)?,
            });
        }
    }
    Ok(LocalExplanation {
        sample_index,
        output: model.forward_unchecked(x),
        gradient_importances,
        categorical_deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueShare {
    pub feature: usize,
    pub name: String,
    pub value: f64,
    pub count: usize,
    pub share: f64,
    pub dominant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub index: usize,
    pub lr_output: f64,
    pub nn_output: f64,
    /// Values of [`PatternReport::scatter_features`], same order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub empty: bool,
    pub rejected_count: usize,
    pub dominance_threshold: f64,
    pub shares: Vec<ValueShare>,
    pub dominant: Vec<ValueShare>,
    pub scatter_features: Vec<usize>,
    pub scatter: Vec<ScatterRow>,
}

impl PatternReport {
    pub fn share_of(&self, feature: usize, value: f64) -> f64 {
        self.shares
            .iter()
            .find(|s| s.feature == feature && s.value == value)
            .map_or(0.0, |s| s.share)
    }

    pub fn write_scatter_csv(&self, path: &Path, schema: &[FeatureSpec]) -> Result<()> {
        let mut s = String::from("index,lr_output,nn_output");
        for &j in &self.scatter_features {
            s.push(',');
            s.push_str(&schema[j].name);
        }
        s.push('\n');
        for row in &self.scatter {
            s.push_str(&format!("{},{},{}", row.index, row.lr_output, row.nn_output));
            for v in &row.values {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        write_file(path, &s)
    }
}

/// Value shares among the samples the difference net rejects.
///
/// Every (categorical feature, value) pair observed in the rejected set gets
/// its share; pairs at or above `dominance_threshold` are flagged and their
/// features become the scatter columns. Pass `scatter_features` to choose the
/// scatter columns explicitly.
#[allow(clippy::too_many_arguments)]
pub fn pattern_report<D, N, L>(
    diffnet: &D,
    nn: &N,
    lr: &L,
    data: &Dataset,
    tau_g: Threshold,
    dominance_threshold: f64,
    scatter_features: Option<&[usize]>,
) -> Result<PatternReport>
where
    D: Predictor + ?Sized,
    N: Predictor + ?Sized,
    L: Predictor + ?Sized,
{
    if !(0.0..=1.0).contains(&dominance_threshold) {
        return Err(Error::Argument("dominance threshold must lie in [0, 1]".into()));
    }
    let rejected = predicted_rejections(diffnet, data, tau_g)?;
    pattern_report_for(&rejected, nn, lr, data, dominance_threshold, scatter_features)
}

/// [`pattern_report`] over an explicit rejected index set.
pub fn pattern_report_for<N, L>(
    rejected: &[usize],
    nn: &N,
    lr: &L,
    data: &Dataset,
    dominance_threshold: f64,
    scatter_features: Option<&[usize]>,
) -> Result<PatternReport>
where
    N: Predictor + ?Sized,
    L: Predictor + ?Sized,
{
    if rejected.is_empty() {
        return Ok(PatternReport {
            empty: true,
            rejected_count: 0,
            dominance_threshold,
            shares: Vec::new(),
            dominant: Vec::new(),
            scatter_features: scatter_features.map(<[usize]>::to_vec).unwrap_or_default(),
            scatter: Vec::new(),
        });
    }
    let k = rejected.len() as f64;
    let mut shares = Vec::new();
    for (j, spec) in data.schema().iter().enumerate() {
        if !spec.is_categorical() {
            continue;
        }
        let mut counts: std::collections::BTreeMap<i64, usize> = Default::default();
        for &i in rejected {
            *counts.entry(data.row(i)[j] as i64).or_default() += 1;
        }
        for (v, c) in counts {
            let share = c as f64 / k;
            shares.push(ValueShare {
                feature: j,
                name: spec.name.clone(),
                value: v as f64,
                count: c,
                share,
                dominant: share >= dominance_threshold,
            });
        }
    }
    let dominant: Vec<ValueShare> = shares.iter().filter(|s| s.dominant).cloned().collect();
    let scatter_features = match scatter_features {
        Some(f) => f.to_vec(),
        None => {
            let mut f: Vec<usize> = dominant.iter().map(|s| s.feature).collect();
            f.dedup();
            f
        }
    };
    if let Some(&bad) = scatter_features.iter().find(|&&j| j >= data.p()) {
        return Err(Error::Argument(format!("scatter feature {bad} out of range")));
    }
    let scatter = rejected
        .iter()
        .map(|&i| {
            let x = data.row(i);
            ScatterRow {
                index: i,
                lr_output: lr.forward_unchecked(x),
                nn_output: nn.forward_unchecked(x),
                values: scatter_features.iter().map(|&j| x[j]).collect(),
            }
        })
        .collect();
    Ok(PatternReport {
        empty: false,
        rejected_count: rejected.len(),
        dominance_threshold,
        shares,
        dominant,
        scatter_features,
        scatter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitPoint {
    pub value: f64,
    pub mean_logit: f64,
}

/// Partial-dependence sweep of the log-odds: for each grid value `v`, the
/// mean over samples of `ln(f / (1 - f))` with feature `j` set to `v`.
pub fn logit_shape<M: Predictor + ?Sized>(
    model: &M,
    data: &Dataset,
    feature: usize,
    grid: &[f64],
) -> Result<Vec<LogitPoint>> {
    if grid.is_empty() {
        return Err(Error::Argument("empty value grid".into()));
    }
    if model.dim() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: data.p(),
        });
    }
    let spec = data
        .schema()
        .get(feature)
        .ok_or_else(|| Error::Argument(format!("feature {feature} out of range")))?;
    if !spec.is_categorical() {
        return Err(Error::Argument(format!("feature {} is not ordinal categorical", spec.name)));
    }
    if let Some(v) = grid.iter().find(|v| !spec.valid_range.contains(**v)) {
        return Err(Error::Argument(format!("grid value {v} outside the valid range of {}", spec.name)));
    }
    let p = data.p();
    let x = data.features();
    grid.iter()
        .map(|&v| {
            let parts = exec::map_chunks(data.n(), exec::CHUNK, |r| {
                let mut row = vec![0.0; p];
                r.map(|i| {
                    row.copy_from_slice(&x[i * p..(i + 1) * p]);
                    row[feature] = v;
                    let f = model.forward_unchecked(&row).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    (f / (1.0 - f)).ln()
                })
                .sum::<f64>()
            });
            Ok(LogitPoint {
                value: v,
                mean_logit: parts.into_iter().sum::<f64>() / data.n() as f64,
            })
        })
        .collect()
}

/// Successive differences of a logit curve.
pub fn increments(curve: &[LogitPoint]) -> Vec<f64> {
    curve.windows(2).map(|w| w[1].mean_logit - w[0].mean_logit).collect()
}

pub fn write_logit_csv(path: &Path, curves: &[(String, Vec<LogitPoint>)]) -> Result<()> {
    let mut s = String::from("feature,value,mean_logit\n");
    for (name, curve) in curves {
        for pt in curve {
            s.push_str(&format!("{name},{},{}\n", pt.value, pt.mean_logit));
        }
    }
    write_file(path, &s)
}

/// Average network output on the given rows.
pub fn mean_output<M: Predictor + ?Sized>(model: &M, data: &Dataset, indices: &[usize]) -> f64 {
    let probs = forward_rows(model, data.features(), data.p());
    indices.iter().map(|&i| probs[i]).sum::<f64>() / indices.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, ValidRange};
    use crate::models::{FnPredictor, LogisticModel, MlpModel};

    fn mixed() -> Dataset {
        let schema = vec![
            FeatureSpec::continuous("a", 0, ValidRange::unbounded()),
            FeatureSpec::categorical("c", 1, -2, 9),
        ];
        let rows = vec![0.3, 2.0, -1.0, 9.0, 1.2, -2.0, 0.0, 2.0, 0.7, 1.0];
        Dataset::new(schema, rows, vec![1, 0, 1, 0, 1], Provenance::Synthetic).unwrap()
    }

    #[test]
    fn single_feature_model_gets_all_importance() {
        let m = LogisticModel::new(vec![0.8, 0.0], 0.1);
        let gi = global_importance(&m, &mixed(), "lr").unwrap();
        assert_eq!(gi.lambdas, vec![100.0, 0.0]);
    }

    #[test]
    fn constant_slope_gives_coefficient_ratio() {
        // every sample at logit 0 so the sigmoid slope is the same
        let schema = vec![
            FeatureSpec::continuous("a", 0, ValidRange::unbounded()),
            FeatureSpec::continuous("b", 1, ValidRange::unbounded()),
        ];
        let d = Dataset::new(schema, vec![4.0, -3.0, -4.0, 3.0, 0.0, 0.0], vec![0, 1, 0], Provenance::Synthetic)
            .unwrap();
        let gi = global_importance(&LogisticModel::new(vec![3.0, 4.0], 0.0), &d, "lr").unwrap();
        assert!((gi.lambdas[0] - 300.0 / 7.0).abs() < 1e-12);
        assert!((gi.lambdas[1] - 400.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn constant_model_importance_is_undefined() {
        let m = MlpModel::zeros(2, 5);
        assert!(matches!(global_importance(&m, &mixed(), "g"), Err(Error::Undefined(_))));
    }

    #[test]
    fn local_gradient_of_logistic_is_scaled_coefficients() {
        let m = LogisticModel::new(vec![1.5, -0.5], 0.2);
        let x = [0.3, 2.0];
        let f = m.forward(&x).unwrap();
        let g = local_gradient_importance(&m, &x).unwrap();
        assert!((g[0] - 1.5 * f * (1.0 - f)).abs() < 1e-15);
        assert!((g[1] + 0.5 * f * (1.0 - f)).abs() < 1e-15);
        assert_eq!(local_gradient_importance(&MlpModel::zeros(2, 2), &x).unwrap(), vec![0.0; 2]);
    }

    #[test]
    fn perturbation_cases() {
        let d = mixed();
        let constant = MlpModel::zeros(2, 2);
        assert_eq!(categorical_perturbation(&constant, d.row(0), d.schema(), 1, 1).unwrap(), Some(0.0));
        assert_eq!(categorical_perturbation(&constant, d.row(0), d.schema(), 1, -1).unwrap(), Some(0.0));
        // row 1 sits at the top of the range
        assert_eq!(categorical_perturbation(&constant, d.row(1), d.schema(), 1, 1).unwrap(), None);
        assert!(categorical_perturbation(&constant, d.row(0), d.schema(), 0, 1).is_err());
        let lr = LogisticModel::new(vec![0.0, 1.0], 0.0);
        let delta = categorical_perturbation(&lr, &[0.0, 0.0], d.schema(), 1, 1).unwrap().unwrap();
        assert!((delta - (crate::models::sigmoid(1.0) - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn local_explanation_reports_both_directions() {
        let d = mixed();
        let lr = LogisticModel::new(vec![0.5, 1.0], 0.0);
        let e = local_explanation(&lr, &d, 1).unwrap();
        assert_eq!(e.categorical_deltas.len(), 1);
        let c = &e.categorical_deltas[0];
        assert!(c.step_up.is_none());
        assert!(c.step_down.unwrap() < 0.0);
        assert_eq!(c.dominant(), c.step_down);
        assert!(local_explanation(&lr, &d, 99).is_err());
    }

    #[test]
    fn uniform_values_are_not_dominant() {
        let schema = vec![FeatureSpec::categorical("c", 0, 0, 3)];
        let feats: Vec<f64> = (0..400).map(|i| (i % 4) as f64).collect();
        let d = Dataset::new(schema, feats, vec![0; 400], Provenance::Synthetic).unwrap();
        let all: Vec<usize> = (0..400).collect();
        let m = LogisticModel::zeros(1);
        let r = pattern_report_for(&all, &m, &m, &d, 0.5, None).unwrap();
        assert_eq!(r.shares.len(), 4);
        assert!(r.shares.iter().all(|s| s.share == 0.25 && !s.dominant));
        assert!(r.dominant.is_empty());
        assert_eq!(r.scatter.len(), 400);
    }

    #[test]
    fn singleton_rejected_set_has_full_shares() {
        let d = mixed();
        let m = LogisticModel::zeros(2);
        let r = pattern_report_for(&[2], &m, &m, &d, 0.5, None).unwrap();
        assert_eq!(r.shares.len(), 1);
        assert_eq!(r.shares[0].share, 1.0);
        assert_eq!(r.share_of(1, -2.0), 1.0);
        assert_eq!(r.scatter_features, vec![1]);
        let empty = pattern_report_for(&[], &m, &m, &d, 0.5, None).unwrap();
        assert!(empty.empty);
    }

    #[test]
    fn pattern_report_from_difference_net() {
        let d = mixed();
        // rejects c >= 2
        let mut g = MlpModel::zeros(2, 5);
        g.hidden_weights[1] = 10.0;
        g.hidden_biases[0] = -15.0;
        g.output_weights[0] = -10.0;
        g.output_bias = 5.0;
        let m = LogisticModel::zeros(2);
        let r = pattern_report(&g, &m, &m, &d, Threshold::default(), 0.5, None).unwrap();
        assert_eq!(r.rejected_count, 3);
        assert!((r.share_of(1, 2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!(r.dominant.iter().any(|s| s.value == 2.0));
    }

    #[test]
    fn logit_shape_cases() {
        let d = mixed();
        let lr = LogisticModel::new(vec![0.4, 0.7], -0.3);
        let grid: Vec<f64> = (0..6).map(f64::from).collect();
        let curve = logit_shape(&lr, &d, 1, &grid).unwrap();
        for inc in increments(&curve) {
            assert!((inc - 0.7).abs() < 1e-12);
        }
        let flat = logit_shape(&MlpModel::zeros(2, 2), &d, 1, &grid).unwrap();
        assert!(flat.iter().all(|p| p.mean_logit == 0.0));
        assert!(logit_shape(&lr, &d, 1, &[]).is_err());
        assert!(logit_shape(&lr, &d, 0, &grid).is_err());
        assert!(logit_shape(&lr, &d, 1, &[12.0]).is_err());
    }

    #[test]
    fn saturating_logit_has_diminishing_increments() {
        let d = mixed();
        let f = FnPredictor::new(2, |x: &[f64]| crate::models::sigmoid(2.0 * x[1].min(1.5)));
        let grid: Vec<f64> = (0..6).map(f64::from).collect();
        let inc = increments(&logit_shape(&f, &d, 1, &grid).unwrap());
        assert!(inc[0] > inc[4]);
    }
}
