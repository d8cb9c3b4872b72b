//! Selective labels, the difference net, and rejection summaries.
//!
//! Stage one fits the logistic model and the network independently. Stage
//! two labels each sample `z = 0` ("reject") when the two predictions
//! disagree (ideal variant) or disagree with the network right (practical
//! variant), and trains a five-unit network on those labels. At test time a
//! sample is rejected when that network predicts `G(x) = 0`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{forward_rows, predict_all, Model, MlpModel, Predictor, Threshold};
use crate::training::{self, ModelKind, TrainConfig, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVariant {
    /// Reject whenever the two predictions differ.
    Ideal,
    /// Reject when they differ and the outcome matches the network.
    Practical,
}

impl std::str::FromStr for LabelVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(LabelVariant::Ideal),
            "practical" => Ok(LabelVariant::Practical),
            other => Err(Error::Argument(format!("unknown label variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectiveLabels {
    pub z: Vec<u8>,
    pub variant: LabelVariant,
}

impl SelectiveLabels {
    pub fn rejected_share(&self) -> f64 {
        self.z.iter().filter(|&&z| z == 0).count() as f64 / self.z.len().max(1) as f64
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Selective label for one sample from the two hard predictions and the
/// realised outcome.
#[inline]
pub fn selective_label(nn_pred: u8, lr_pred: u8, y: u8, variant: LabelVariant) -> u8 {
    let disagree = nn_pred != lr_pred;
    let reject = match variant {
        LabelVariant::Ideal => disagree,
        LabelVariant::Practical => disagree && y == nn_pred,
    };
    u8::from(!reject)
}

pub fn labels_from_predictions(
    nn_pred: &[u8],
    lr_pred: &[u8],
    labels: &[u8],
    variant: LabelVariant,
) -> Result<SelectiveLabels> {
    if nn_pred.len() != labels.len() || lr_pred.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: nn_pred.len().min(lr_pred.len()),
        });
    }
    let z = nn_pred
        .iter()
        .zip(lr_pred)
        .zip(labels)
        .map(|((&f, &l), &y)| selective_label(f, l, y, variant))
        .collect();
    Ok(SelectiveLabels { z, variant })
}

/// Probabilities and hard predictions of both stage-one models on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    pub nn_probability: Vec<f64>,
    pub lr_probability: Vec<f64>,
    pub nn_prediction: Vec<u8>,
    pub lr_prediction: Vec<u8>,
}

impl StageOutputs {
    pub fn compute<N, L>(nn: &N, lr: &L, data: &Dataset, tau: Threshold) -> Result<Self>
    where
        N: Predictor + ?Sized,
        L: Predictor + ?Sized,
    {
        for dim in [nn.dim(), lr.dim()] {
            if dim != data.p() {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: data.p(),
                });
            }
        }
        let nn_probability = forward_rows(nn, data.features(), data.p());
        let lr_probability = forward_rows(lr, data.features(), data.p());
        Ok(StageOutputs {
            nn_prediction: predict_all(&nn_probability, tau),
            lr_prediction: predict_all(&lr_probability, tau),
            nn_probability,
            lr_probability,
        })
    }
}

pub fn make_selective_labels<N, L>(
    nn: &N,
    lr: &L,
    data: &Dataset,
    tau: Threshold,
    variant: LabelVariant,
) -> Result<SelectiveLabels>
where
    N: Predictor + ?Sized,
    L: Predictor + ?Sized,
{
    let out = StageOutputs::compute(nn, lr, data, tau)?;
    labels_from_predictions(&out.nn_prediction, &out.lr_prediction, data.labels(), variant)
}

/// Fits the five-unit difference net on `labels`. Single-class labels give a
/// constant model, flagged in the trace.
pub fn train_difference_net(
    data: &Dataset,
    labels: &SelectiveLabels,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainTrace)> {
    if labels.z.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: labels.z.len(),
        });
    }
    let target = data.with_labels(labels.z.clone())?;
    let (model, trace) = training::train(ModelKind::Mlp5, &target, config)?;
    match model {
        Model::Mlp(m) => Ok((m, trace)),
        Model::Logistic(_) => unreachable!("Mlp5 trains a network"),
    }
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Argument(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}

/// `1 - |f - f_lr|`: the acceptance probability when the two models'
/// decisions are coupled randomisations of their outputs.
pub fn acceptance_oracle(f_value: f64, lr_value: f64) -> Result<f64> {
    check_unit(f_value, "network output")?;
    check_unit(lr_value, "logistic output")?;
    Ok(1.0 - (f_value - lr_value).abs())
}

/// Exact `P(z = 1 | x)` under the practical rule when the outcome is
/// Bernoulli(`p_true`).
pub fn practical_acceptance_oracle(p_true: f64, nn_pred: u8, lr_pred: u8) -> Result<f64> {
    check_unit(p_true, "probability")?;
    if nn_pred == lr_pred {
        return Ok(1.0);
    }
    let nn_right = if nn_pred == 1 { p_true } else { 1.0 - p_true };
    Ok(1.0 - nn_right)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionBreakdown {
    /// Network predicts default, logistic model does not.
    pub nn_default_lr_non_default: usize,
    /// Network predicts non-default, logistic model predicts default.
    pub nn_non_default_lr_default: usize,
    /// Rejected although the two models agree.
    pub models_agree: usize,
}

impl DirectionBreakdown {
    /// Share of rejected samples in the network-default direction.
    pub fn nn_default_share(&self) -> Option<f64> {
        let total =
            self.nn_default_lr_non_default + self.nn_non_default_lr_default + self.models_agree;
        (total > 0).then(|| self.nn_default_lr_non_default as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub n: usize,
    pub rejection_rate: f64,
    pub rejected_indices: Vec<usize>,
    pub direction_breakdown: DirectionBreakdown,
}

impl RejectionSummary {
    pub fn write_indices_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("index\n");
        for i in &self.rejected_indices {
            s.push_str(&format!("{i}\n"));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(s.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Indices where the difference net predicts `G(x) = 0`.
pub fn predicted_rejections<D: Predictor + ?Sized>(
    diffnet: &D,
    data: &Dataset,
    tau_g: Threshold,
) -> Result<Vec<usize>> {
    if diffnet.dim() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: diffnet.dim(),
            got: data.p(),
        });
    }
    let g = forward_rows(diffnet, data.features(), data.p());
    Ok(predict_all(&g, tau_g)
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| (v == 0).then_some(i))
        .collect())
}

/// Rejected set, rate and direction breakdown against stored stage-one
/// predictions.
pub fn rejection_summary<D: Predictor + ?Sized>(
    diffnet: &D,
    data: &Dataset,
    tau_g: Threshold,
    stage: &StageOutputs,
) -> Result<RejectionSummary> {
    if stage.nn_prediction.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: stage.nn_prediction.len(),
        });
    }
    let rejected = predicted_rejections(diffnet, data, tau_g)?;
    let mut dir = DirectionBreakdown::default();
    for &i in &rejected {
        match (stage.nn_prediction[i], stage.lr_prediction[i]) {
            (1, 0) => dir.nn_default_lr_non_default += 1,
            (0, 1) => dir.nn_non_default_lr_default += 1,
            _ => dir.models_agree += 1,
        }
    }
    Ok(RejectionSummary {
        n: data.n(),
        rejection_rate: rejected.len() as f64 / data.n() as f64,
        rejected_indices: rejected,
        direction_breakdown: dir,
    })
}
