//! End-to-end runs: ingest, split, scale, train the three models, build
//! selective labels, evaluate, explain, bound, and write every artifact with
//! a digest manifest.
//!
//! Exit codes used by the binary, one per stage:
//!
//! | code | stage     |
//! |------|-----------|
//! | 0    | success   |
//! | 2    | config    |
//! | 3    | ingest    |
//! | 4    | train     |
//! | 5    | selective |
//! | 6    | evaluate  |
//! | 7    | explain   |
//! | 8    | bounds    |
//! | 9    | output    |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{epsilon_for_confidence, train_test_bound};
use crate::data::{self, Dataset, ScalerParams};
use crate::error::{Error, Result};
use crate::explain::{self, GlobalImportance, LogitPoint, PatternReport};
use crate::metrics::{self, ModelEvaluation, RocCurve};
use crate::models::{forward_rows, predict, predict_all, Model, Predictor, Scaled, Threshold};
use crate::selective::{self, DirectionBreakdown, LabelVariant, SelectiveLabels, StageOutputs};
use crate::svg;
use crate::synth::{self, Estimate, Scenario};
use crate::training::{self, ModelKind, TrainConfig, TrainTrace};

pub const REPORT_SCHEMA: &str = "selective-credit/report/v1";
pub const MODEL_SCHEMA: &str = "selective-credit/model/v1";
pub const EXPLANATION_SCHEMA: &str = "selective-credit/explanations/v1";
pub const MANIFEST_SCHEMA: &str = "selective-credit/manifest/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetChoice {
    Taiwan,
    Gmsc,
    Generic,
    Synthetic,
}

impl std::str::FromStr for DatasetChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taiwan" => Ok(DatasetChoice::Taiwan),
            "gmsc" => Ok(DatasetChoice::Gmsc),
            "generic" => Ok(DatasetChoice::Generic),
            "synthetic" => Ok(DatasetChoice::Synthetic),
            other => Err(Error::Argument(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Loads one of the CSV datasets.
pub fn load_dataset(choice: DatasetChoice, path: &Path, no_header: bool) -> Result<Dataset> {
    match choice {
        DatasetChoice::Taiwan => data::load_taiwan(path, !no_header),
        DatasetChoice::Gmsc => data::load_gmsc(path, !no_header),
        DatasetChoice::Generic => data::load_generic(path, !no_header),
        DatasetChoice::Synthetic => Err(Error::Argument(
            "synthetic data is generated from a scenario, not read from CSV".into(),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetChoice,
    pub input: Option<PathBuf>,
    pub no_header: bool,
    /// Built-in scenario name for synthetic runs.
    pub scenario: Option<String>,
    pub scenario_file: Option<PathBuf>,
    pub synthetic_n: usize,
    pub synthetic_seed: u64,
    pub split_fraction: f64,
    pub split_seed: u64,
    pub lr: TrainConfig,
    pub nn: TrainConfig,
    pub diffnet: TrainConfig,
    pub tau: f64,
    pub tau_g: f64,
    pub variant: LabelVariant,
    pub output_dir: PathBuf,
    pub formats: Vec<Format>,
    pub dominance_threshold: f64,
    /// Confidence level for the reported rejection-rate intervals.
    pub bound_delta: f64,
    pub mc_samples: usize,
    /// Longest logit-shape sweep per categorical feature.
    pub logit_grid_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetChoice::Taiwan,
            input: None,
            no_header: false,
            scenario: None,
            scenario_file: None,
            synthetic_n: 100_000,
            synthetic_seed: 1,
            split_fraction: 0.75,
            split_seed: 0,
            lr: TrainConfig::default().with_seed(1),
            nn: TrainConfig::default().with_seed(2),
            diffnet: TrainConfig::default().with_seed(3),
            tau: 0.5,
            tau_g: 0.5,
            variant: LabelVariant::Practical,
            output_dir: PathBuf::from("out"),
            formats: vec![Format::Json, Format::Csv, Format::Svg],
            dominance_threshold: 0.5,
            bound_delta: 0.05,
            mc_samples: 1_000_000,
            logit_grid_steps: 10,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Argument("split_fraction must lie in (0, 1)".into()));
        }
        Threshold::new(self.tau)?;
        Threshold::new(self.tau_g)?;
        for c in [&self.lr, &self.nn, &self.diffnet] {
            c.validate()?;
        }
        if !(0.0..=1.0).contains(&self.dominance_threshold) {
            return Err(Error::Argument("dominance_threshold must lie in [0, 1]".into()));
        }
        if !(self.bound_delta > 0.0 && self.bound_delta < 1.0) {
            return Err(Error::Argument("bound_delta must lie in (0, 1)".into()));
        }
        match self.dataset {
            DatasetChoice::Synthetic => {
                if self.scenario.is_none() && self.scenario_file.is_none() {
                    return Err(Error::Argument("synthetic runs need scenario or scenario_file".into()));
                }
                if self.mc_samples < synth::MIN_MC_SAMPLES {
                    return Err(Error::Argument(format!(
                        "mc_samples must be at least {}",
                        synth::MIN_MC_SAMPLES
                    )));
                }
            }
            _ => match &self.input {
                None => return Err(Error::Argument("input path is required".into())),
                Some(p) if !p.is_file() => {
                    return Err(Error::Argument(format!("input {} does not exist", p.display())))
                }
                _ => {}
            },
        }
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    pub fn scenario(&self) -> Result<Option<Scenario>> {
        match (&self.scenario_file, &self.scenario) {
            (Some(p), _) => Scenario::from_json_file(p).map(Some),
            (None, Some(name)) => Scenario::named(name).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Train,
    Selective,
    Evaluate,
    Explain,
    Bounds,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Ingest => 3,
            Stage::Train => 4,
            Stage::Selective => 5,
            Stage::Evaluate => 6,
            Stage::Explain => 7,
            Stage::Bounds => 8,
            Stage::Output => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Selective => "selective",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Bounds => "bounds",
            Stage::Output => "output",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{} stage failed: {source}", stage.name())]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn at(stage: Stage) -> impl FnOnce(Error) -> PipelineError {
    move |source| PipelineError { stage, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub inputs: usize,
    pub hidden_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub max_epochs: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub degenerate: Option<String>,
}

impl TrainingMetadata {
    pub fn new(config: &TrainConfig, trace: &TrainTrace) -> Self {
        TrainingMetadata {
            seed: config.seed,
            max_epochs: config.max_epochs,
            epochs_run: trace.epochs_run,
            final_loss: trace.final_loss(),
            converged: trace.converged,
            degenerate: trace.degenerate.clone(),
        }
    }
}

/// A trained model with everything needed to apply it to raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    /// `lr`, `nn` or `diffnet`.
    pub role: String,
    pub model: Model,
    pub dimensions: Dimensions,
    pub feature_names: Vec<String>,
    pub schema_fingerprint: String,
    pub scaler: ScalerParams,
    pub threshold: f64,
    pub training: TrainingMetadata,
}

impl ModelFile {
    pub fn new(
        role: &str,
        model: Model,
        raw_schema: &Dataset,
        scaler: &ScalerParams,
        threshold: Threshold,
        training: TrainingMetadata,
    ) -> ModelFile {
        ModelFile {
            format: MODEL_SCHEMA.into(),
            role: role.into(),
            dimensions: Dimensions {
                inputs: model.dim(),
                hidden_units: model.hidden_units(),
            },
            model,
            feature_names: raw_schema.schema().iter().map(|s| s.name.clone()).collect(),
            schema_fingerprint: raw_schema.fingerprint(),
            scaler: scaler.clone(),
            threshold: threshold.value(),
            training,
        }
    }

    pub fn write(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes)
    }

    pub fn read(path: &Path) -> Result<ModelFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: ModelFile = serde_json::from_str(&text)?;
        if m.format != MODEL_SCHEMA {
            return Err(Error::Validation(format!("unsupported model format {:?}", m.format)));
        }
        if let Model::Mlp(net) = &m.model {
            net.validate()?;
        }
        if m.model.dim() != m.scaler.means.len() {
            return Err(Error::Validation("model and scaler dimensions differ".into()));
        }
        Ok(m)
    }

    /// Applies the stored scaling to a raw dataset with the training schema.
    pub fn prepare(&self, raw: &Dataset) -> Result<Dataset> {
        if raw.fingerprint() != self.schema_fingerprint {
            return Err(Error::Validation(format!(
                "dataset schema {} does not match the model's schema {}",
                raw.fingerprint(),
                self.schema_fingerprint
            )));
        }
        self.scaler.apply(raw)
    }

    pub fn on_raw(&self) -> Scaled<'_, Model> {
        Scaled {
            scaler: &self.scaler,
            model: &self.model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub provenance: data::Provenance,
    pub n: usize,
    pub p: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub default_share: f64,
    pub train_default_share: f64,
    pub test_default_share: f64,
    pub split_fraction: f64,
    pub split_seed: u64,
    pub schema_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedErrors {
    pub lr: f64,
    pub nn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveSummary {
    pub variant: LabelVariant,
    pub tau_g: f64,
    pub train_label_rejected_share: f64,
    pub test_label_rejected_share: f64,
    pub difference_net_train_error: f64,
    pub difference_net_test_error: f64,
    pub train_rejection_rate: f64,
    pub test_rejection_rate: f64,
    pub rejected_count: usize,
    pub direction_breakdown: DirectionBreakdown,
    pub nn_default_share_of_disagreements: Option<f64>,
    pub rejected_set_errors: Option<RejectedErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub delta: f64,
    pub epsilon_train: f64,
    pub epsilon_test: f64,
    /// Bound on `P(|gamma_train - gamma_test| >= eps_train + eps_test)`.
    pub train_test_bound: f64,
    pub observed_gap: f64,
    pub gap_within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSummary {
    pub scenario: Scenario,
    pub true_rejection_rate: Estimate,
    /// Share of test samples where the logistic model and the Bayes rule
    /// disagree.
    pub lr_bayes_disagreement: f64,
    pub nn_bayes_disagreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTraining {
    pub lr: TrainingMetadata,
    pub nn: TrainingMetadata,
    pub diffnet: TrainingMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub dataset: DatasetSummary,
    pub threshold: f64,
    pub lr: ModelEvaluation,
    pub nn: ModelEvaluation,
    pub lr_train_error: f64,
    pub nn_train_error: f64,
    pub selective: SelectiveSummary,
    pub bounds: BoundsSummary,
    pub synthetic: Option<SyntheticSummary>,
    pub training: StageTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSummary {
    pub feature: usize,
    pub name: String,
    /// Most common value of the feature among rejected samples.
    pub value: f64,
    pub count: usize,
    pub mean_abs_step_down: Option<f64>,
    pub mean_abs_step_up: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitCurve {
    pub feature: usize,
    pub name: String,
    pub points: Vec<LogitPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    pub schema: String,
    /// Importance per differentiated model; absent where undefined.
    pub global: Vec<GlobalImportance>,
    pub undefined_global: Vec<String>,
    pub patterns: PatternReport,
    pub perturbations: Vec<PerturbationSummary>,
    pub logit_shapes: Vec<LogitCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub complete: bool,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub synthetic: Option<u64>,
    pub lr: u64,
    pub nn: u64,
    pub diffnet: u64,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn digest(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == name).map(|f| f.sha256.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Records every file written under the output directory.
struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileEntry {
            path: name.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    /// Lets a function write a file by path, then records its digest.
    fn with_path(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        f(&path)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileEntry {
            path: name.into(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvaluationReport,
    pub explanations: ExplanationReport,
    pub manifest: Manifest,
}

/// Runs the full pipeline and writes all artifacts to `config.output_dir`.
/// On failure the manifest is still written, marked incomplete.
pub fn run_pipeline(config: &RunConfig) -> std::result::Result<PipelineOutcome, PipelineError> {
    config.validate().map_err(at(Stage::Config))?;
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))
        .map_err(at(Stage::Output))?;
    // the output location is not part of the experiment
    let identity = RunConfig {
        output_dir: PathBuf::new(),
        ..config.clone()
    };
    let config_bytes = serde_json::to_vec(&identity).map_err(Error::from).map_err(at(Stage::Config))?;
    let mut writer = Writer {
        dir: config.output_dir.clone(),
        files: Vec::new(),
    };
    let seeds = Seeds {
        split: config.split_seed,
        synthetic: (config.dataset == DatasetChoice::Synthetic).then_some(config.synthetic_seed),
        lr: config.lr.seed,
        nn: config.nn.seed,
        diffnet: config.diffnet.seed,
    };
    let mut manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(&config_bytes),
        seeds,
        complete: false,
        failed_stage: None,
        error: None,
        files: Vec::new(),
    };
    let result = run_stages(config, &mut writer);
    manifest.files = std::mem::take(&mut writer.files);
    match result {
        Ok((report, explanations)) => {
            manifest.complete = true;
            write_manifest(&config.output_dir, &manifest).map_err(at(Stage::Output))?;
            Ok(PipelineOutcome {
                report,
                explanations,
                manifest,
            })
        }
        Err(e) => {
            manifest.failed_stage = Some(e.stage);
            manifest.error = Some(e.source.to_string());
            // the stage error matters more than a failure to record it
            let _ = write_manifest(&config.output_dir, &manifest);
            Err(e)
        }
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

struct Trained {
    model: Model,
    trace: TrainTrace,
    meta: TrainingMetadata,
}

fn fit(kind: ModelKind, data: &Dataset, config: &TrainConfig) -> Result<Trained> {
    let (model, trace) = training::train(kind, data, config)?;
    if let Some(epoch) = trace.line_search_failure {
        log::warn!("{kind:?}: line search failed at epoch {epoch}, keeping the last iterate");
    }
    let meta = TrainingMetadata::new(config, &trace);
    Ok(Trained { model, trace, meta })
}

fn run_stages(
    config: &RunConfig,
    out: &mut Writer,
) -> std::result::Result<(EvaluationReport, ExplanationReport), PipelineError> {
    let tau = Threshold::new(config.tau).map_err(at(Stage::Config))?;
    let tau_g = Threshold::new(config.tau_g).map_err(at(Stage::Config))?;

    // ingest
    let scenario = config.scenario().map_err(at(Stage::Ingest))?;
    let raw = match (config.dataset, &scenario) {
        (DatasetChoice::Synthetic, Some(s)) => {
            synth::sample(s, config.synthetic_n, config.synthetic_seed).map_err(at(Stage::Ingest))?.dataset
        }
        _ => {
            let input = config.input.as_deref().expect("validated");
            load_dataset(config.dataset, input, config.no_header).map_err(at(Stage::Ingest))?
        }
    };
    log::info!("ingested {} samples with {} features", raw.n(), raw.p());
    let (train_raw, test_raw) =
        data::split(&raw, config.split_fraction, config.split_seed).map_err(at(Stage::Ingest))?;
    let (train, tests, scaler) = data::standardize(&train_raw, &[&test_raw]).map_err(at(Stage::Ingest))?;
    let test = &tests[0];

    // stage one
    let lr = fit(ModelKind::Logistic, &train, &config.lr).map_err(at(Stage::Train))?;
    log::info!("logistic model: loss {:.6}", lr.meta.final_loss);
    let nn = fit(ModelKind::Mlp2, &train, &config.nn).map_err(at(Stage::Train))?;
    log::info!("network: loss {:.6}", nn.meta.final_loss);

    // selective labels and difference net
    let stage_train = StageOutputs::compute(&nn.model, &lr.model, &train, tau).map_err(at(Stage::Selective))?;
    let stage_test = StageOutputs::compute(&nn.model, &lr.model, test, tau).map_err(at(Stage::Selective))?;
    let z_train = selective::labels_from_predictions(
        &stage_train.nn_prediction,
        &stage_train.lr_prediction,
        train.labels(),
        config.variant,
    )
    .map_err(at(Stage::Selective))?;
    let z_test = selective::labels_from_predictions(
        &stage_test.nn_prediction,
        &stage_test.lr_prediction,
        test.labels(),
        config.variant,
    )
    .map_err(at(Stage::Selective))?;
    let (g_model, g_trace) =
        selective::train_difference_net(&train, &z_train, &config.diffnet).map_err(at(Stage::Train))?;
    let g = Trained {
        meta: TrainingMetadata::new(&config.diffnet, &g_trace),
        model: Model::Mlp(g_model),
        trace: g_trace,
    };
    log::info!("difference net: loss {:.6}", g.meta.final_loss);

    // evaluation
    let (lr_eval, lr_roc) =
        metrics::evaluate_scores(&stage_test.lr_probability, test.labels(), tau).map_err(at(Stage::Evaluate))?;
    let (nn_eval, nn_roc) =
        metrics::evaluate_scores(&stage_test.nn_probability, test.labels(), tau).map_err(at(Stage::Evaluate))?;
    let lr_train_error = metrics::classification_error(&stage_train.lr_prediction, train.labels())
        .map_err(at(Stage::Evaluate))?;
    let nn_train_error = metrics::classification_error(&stage_train.nn_prediction, train.labels())
        .map_err(at(Stage::Evaluate))?;
    let g_test = predict_all(&forward_rows(&g.model, test.features(), test.p()), tau_g);
    let g_train = predict_all(&forward_rows(&g.model, train.features(), train.p()), tau_g);
    let summary = selective::rejection_summary(&g.model, test, tau_g, &stage_test).map_err(at(Stage::Evaluate))?;
    let rejected_errors = metrics::rejected_set_errors(
        &summary.rejected_indices,
        &stage_test.nn_prediction,
        &stage_test.lr_prediction,
        test.labels(),
    )
    .map_err(at(Stage::Evaluate))?;
    let train_rejection_rate = g_train.iter().filter(|&&v| v == 0).count() as f64 / train.n() as f64;
    let selective_summary = SelectiveSummary {
        variant: config.variant,
        tau_g: tau_g.value(),
        train_label_rejected_share: z_train.rejected_share(),
        test_label_rejected_share: z_test.rejected_share(),
        difference_net_train_error: metrics::classification_error(&g_train, &z_train.z).map_err(at(Stage::Evaluate))?,
        difference_net_test_error: metrics::classification_error(&g_test, &z_test.z).map_err(at(Stage::Evaluate))?,
        train_rejection_rate,
        test_rejection_rate: summary.rejection_rate,
        rejected_count: summary.rejected_indices.len(),
        nn_default_share_of_disagreements: summary.direction_breakdown.nn_default_share(),
        direction_breakdown: summary.direction_breakdown.clone(),
        rejected_set_errors: rejected_errors.map(|(lr, nn)| RejectedErrors { lr, nn }),
    };

    let synthetic = match (&scenario, config.dataset) {
        (Some(s), DatasetChoice::Synthetic) => {
            let nn_raw = Scaled {
                scaler: &scaler,
                model: &nn.model,
            };
            let lr_raw = Scaled {
                scaler: &scaler,
                model: &lr.model,
            };
            let truth = synth::true_rejection_rate(s, &nn_raw, &lr_raw, tau, config.mc_samples, config.synthetic_seed)
                .map_err(at(Stage::Evaluate))?;
            let bayes: Vec<u8> = test_raw.rows().map(|x| predict(s.probability(x), tau)).collect();
            let disagree = |pred: &[u8]| {
                pred.iter().zip(&bayes).filter(|(a, b)| a != b).count() as f64 / bayes.len() as f64
            };
            Some(SyntheticSummary {
                scenario: s.clone(),
                true_rejection_rate: truth,
                lr_bayes_disagreement: disagree(&stage_test.lr_prediction),
                nn_bayes_disagreement: disagree(&stage_test.nn_prediction),
            })
        }
        _ => None,
    };

    // bounds
    let eps_train = epsilon_for_confidence(train.n() as u64, config.bound_delta).map_err(at(Stage::Bounds))?;
    let eps_test = epsilon_for_confidence(test.n() as u64, config.bound_delta).map_err(at(Stage::Bounds))?;
    let gap = (train_rejection_rate - summary.rejection_rate).abs();
    let bounds = BoundsSummary {
        delta: config.bound_delta,
        epsilon_train: eps_train,
        epsilon_test: eps_test,
        train_test_bound: train_test_bound(train.n() as u64, test.n() as u64, eps_train, eps_test)
            .map_err(at(Stage::Bounds))?,
        observed_gap: gap,
        gap_within_tolerance: gap < eps_train + eps_test,
    };

    let report = EvaluationReport {
        schema: REPORT_SCHEMA.into(),
        dataset: DatasetSummary {
            provenance: raw.provenance(),
            n: raw.n(),
            p: raw.p(),
            n_train: train.n(),
            n_test: test.n(),
            default_share: raw.default_share(),
            train_default_share: train.default_share(),
            test_default_share: test.default_share(),
            split_fraction: config.split_fraction,
            split_seed: config.split_seed,
            schema_fingerprint: raw.fingerprint(),
        },
        threshold: tau.value(),
        lr: lr_eval,
        nn: nn_eval,
        lr_train_error,
        nn_train_error,
        selective: selective_summary,
        bounds,
        synthetic,
        training: StageTraining {
            lr: lr.meta.clone(),
            nn: nn.meta.clone(),
            diffnet: g.meta.clone(),
        },
    };

    // explanations
    let mut global = Vec::new();
    let mut undefined_global = Vec::new();
    for (tag, m) in [("lr", &lr.model), ("nn", &nn.model), ("diffnet", &g.model)] {
        match explain::global_importance(m, &train, tag) {
            Ok(gi) => global.push(gi),
            Err(Error::Undefined(_)) => undefined_global.push(tag.to_string()),
            Err(e) => return Err(at(Stage::Explain)(e)),
        }
    }
    let patterns = explain::pattern_report_for(
        &summary.rejected_indices,
        &nn.model,
        &lr.model,
        test,
        config.dominance_threshold,
        None,
    )
    .map_err(at(Stage::Explain))?;
    let perturbations =
        perturbation_summaries(&nn.model, test, &summary.rejected_indices).map_err(at(Stage::Explain))?;
    let logit_shapes = logit_curves(&nn.model, &train, config.logit_grid_steps).map_err(at(Stage::Explain))?;
    let explanations = ExplanationReport {
        schema: EXPLANATION_SCHEMA.into(),
        global,
        undefined_global,
        patterns,
        perturbations,
        logit_shapes,
    };

    // output
    write_outputs(
        config,
        out,
        &raw,
        &scaler,
        tau,
        [("lr", &lr), ("nn", &nn), ("diffnet", &g)],
        &report,
        &explanations,
        &z_train,
        &summary.rejected_indices,
        [("lr", lr_roc.as_ref()), ("nn", nn_roc.as_ref())],
        test,
    )
    .map_err(at(Stage::Output))?;
    Ok((report, explanations))
}

/// Mean `|delta f|` of unit steps on each categorical feature, over rejected
/// samples holding that feature's most common rejected value.
pub fn perturbation_summaries<M: Predictor + ?Sized>(
    model: &M,
    data: &Dataset,
    rejected: &[usize],
) -> Result<Vec<PerturbationSummary>> {
    let mut out = Vec::new();
    if rejected.is_empty() {
        return Ok(out);
    }
    for (j, spec) in data.schema().iter().enumerate() {
        if !spec.is_categorical() {
            continue;
        }
        let mut counts: std::collections::BTreeMap<i64, usize> = Default::default();
        for &i in rejected {
            *counts.entry(data.row(i)[j] as i64).or_default() += 1;
        }
        // ties go to the smaller value
        let (&value, &count) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("non-empty");
        let idx: Vec<usize> = rejected.iter().copied().filter(|&i| data.row(i)[j] as i64 == value).collect();
        out.push(PerturbationSummary {
            feature: j,
            name: spec.name.clone(),
            value: value as f64,
            count,
            mean_abs_step_down: explain::mean_abs_perturbation(model, data, &idx, j, -1)?,
            mean_abs_step_up: explain::mean_abs_perturbation(model, data, &idx, j, 1)?,
        });
    }
    Ok(out)
}

/// Logit sweeps for every categorical feature over integers from the range
/// minimum up to the largest observed value, at most `steps` steps.
pub fn logit_curves<M: Predictor + ?Sized>(model: &M, data: &Dataset, steps: usize) -> Result<Vec<LogitCurve>> {
    let mut out = Vec::new();
    for (j, spec) in data.schema().iter().enumerate() {
        if !spec.is_categorical() {
            continue;
        }
        let lo = spec.valid_range.min;
        let observed = data.rows().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        let hi = observed.min(spec.valid_range.max).min(lo + steps as f64).max(lo);
        let grid: Vec<f64> = (0..=((hi - lo) as usize)).map(|k| lo + k as f64).collect();
        out.push(LogitCurve {
            feature: j,
            name: spec.name.clone(),
            points: explain::logit_shape(model, data, j, &grid)?,
        });
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn write_outputs(
    config: &RunConfig,
    out: &mut Writer,
    raw: &Dataset,
    scaler: &ScalerParams,
    tau: Threshold,
    models: [(&str, &Trained); 3],
    report: &EvaluationReport,
    explanations: &ExplanationReport,
    z_train: &SelectiveLabels,
    rejected: &[usize],
    rocs: [(&str, Option<&RocCurve>); 2],
    test: &Dataset,
) -> Result<()> {
    for (role, t) in models {
        let file = ModelFile::new(role, t.model.clone(), raw, scaler, tau, t.meta.clone());
        out.json(&format!("{role}.json"), &file)?;
    }
    out.json("report.json", report)?;
    if config.wants(Format::Json) {
        out.json("explanations.json", explanations)?;
        out.json("bounds.json", &report.bounds)?;
        out.json("labels.json", z_train)?;
    }
    if config.wants(Format::Csv) {
        for (role, t) in models {
            out.with_path(&format!("trace_{role}.csv"), |p| t.trace.write_csv(p))?;
        }
        for (role, roc) in rocs {
            if let Some(roc) = roc {
                out.with_path(&format!("roc_{role}.csv"), |p| roc.write_csv(p))?;
            }
        }
        for gi in &explanations.global {
            out.with_path(&format!("importance_{}.csv", gi.model_tag), |p| gi.write_csv(p))?;
        }
        out.with_path("scatter.csv", |p| explanations.patterns.write_scatter_csv(p, test.schema()))?;
        let curves: Vec<(String, Vec<LogitPoint>)> =
            explanations.logit_shapes.iter().map(|c| (c.name.clone(), c.points.clone())).collect();
        out.with_path("logit_shape.csv", |p| explain::write_logit_csv(p, &curves))?;
        let mut s = String::from("index\n");
        for i in rejected {
            s.push_str(&format!("{i}\n"));
        }
        out.put("rejected.csv", s.as_bytes())?;
    }
    if config.wants(Format::Svg) {
        let curves: Vec<(String, Vec<(f64, f64)>)> = rocs
            .iter()
            .filter_map(|(role, roc)| {
                roc.map(|r| {
                    let auc = r.auc;
                    let pts = r.points.iter().map(|p| (p.false_positive_rate, p.true_positive_rate)).collect();
                    (format!("{role} (AUC {auc:.3})"), pts)
                })
            })
            .collect();
        out.put("roc.svg", svg::roc(&curves).as_bytes())?;
        if let Some(gi) = explanations.global.iter().find(|g| g.model_tag == "diffnet") {
            let labels: Vec<String> = (1..=gi.lambdas.len()).map(|j| format!("x{j}")).collect();
            out.put("importance_diffnet.svg", svg::bars("difference net importance", &labels, &gi.lambdas).as_bytes())?;
        }
        let pr = &explanations.patterns;
        if let Some(&j) = pr.scatter_features.first() {
            let pts: Vec<(f64, f64)> = pr.scatter.iter().map(|r| (r.lr_output, r.values[0])).collect();
            let name = &test.schema()[j].name;
            out.put(
                "scatter.svg",
                svg::scatter("rejected samples", "logistic output", name, &pts).as_bytes(),
            )?;
        }
        let series: Vec<(String, Vec<(f64, f64)>)> = explanations
            .logit_shapes
            .iter()
            .map(|c| (c.name.clone(), c.points.iter().map(|p| (p.value, p.mean_logit)).collect()))
            .collect();
        out.put("logit_shape.svg", svg::lines("network logit", "value", "mean logit", &series).as_bytes())?;
    }
    Ok(())
}
