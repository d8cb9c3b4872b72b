use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use selective_credit::bounds::ConcentrationQuery;
use selective_credit::data::{self, Dataset};
use selective_credit::explain;
use selective_credit::metrics::{self, ModelEvaluation};
use selective_credit::models::{forward_rows, predict_all, Model, Threshold};
use selective_credit::pipeline::{self, DatasetChoice, ModelFile, RunConfig, Stage, TrainingMetadata};
use selective_credit::selective::{self, LabelVariant, SelectiveLabels};
use selective_credit::synth::{self, Scenario};
use selective_credit::training::{self, ModelKind, TrainConfig};
use selective_credit::Error;

#[derive(Parser)]
#[command(name = "selcredit", version, about = "Selective credit-default models with a reject option")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a CSV into the canonical dataset format
    Ingest {
        #[arg(long, value_enum)]
        dataset: CsvKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        no_header: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into train and test files
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Fit a model; the scaler is fitted on the same data
    Train {
        #[arg(long, value_enum)]
        model: Role,
        #[arg(long)]
        data: PathBuf,
        /// Selective labels, required for the difference net
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss and gradient norm as CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Build selective labels from the two stage-one models
    Selective {
        #[arg(long)]
        lr: PathBuf,
        #[arg(long)]
        nn: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::Practical)]
        variant: Variant,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classification metrics, optionally split by a difference net
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Difference net whose rejections are reported separately
        #[arg(long)]
        reject: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// ROC points as CSV
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Sensitivity explanations
    Explain(ExplainArgs),
    /// Evaluate or invert the rejection-rate concentration bounds
    Bounds {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        n_test: Option<u64>,
        #[arg(long, num_args = 1..=2, conflicts_with = "delta", required_unless_present = "delta")]
        epsilon: Vec<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Sample a synthetic dataset
    Synth {
        /// Built-in name or path to a scenario JSON file
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// True probabilities as CSV
        #[arg(long)]
        probabilities: Option<PathBuf>,
    },
    /// Run every stage from a JSON config
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("kind").required(true).args(["global", "local_sample", "patterns"])))]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    global: bool,
    #[arg(long)]
    local_sample: Option<usize>,
    /// Pattern report of the samples rejected by `--model`
    #[arg(long, requires_all = ["lr", "nn"])]
    patterns: bool,
    #[arg(long)]
    lr: Option<PathBuf>,
    #[arg(long)]
    nn: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    dominance_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CsvKind {
    Taiwan,
    Gmsc,
    Generic,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Role {
    Lr,
    Nn,
    Diffnet,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Ideal,
    Practical,
}

struct Failure {
    stage: Stage,
    error: Error,
}

fn at(stage: Stage) -> impl FnOnce(Error) -> Failure {
    move |error| Failure { stage, error }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            dataset,
            input,
            no_header,
            out,
        } => ingest(dataset, &input, no_header, &out),
        Command::Split {
            data,
            fraction,
            seed,
            train_out,
            test_out,
        } => split(&data, fraction, seed, &train_out, &test_out),
        Command::Train {
            model,
            data,
            labels,
            seed,
            epochs,
            out,
            trace,
        } => train(model, &data, labels.as_deref(), seed, epochs, &out, trace.as_deref()),
        Command::Selective {
            lr,
            nn,
            data,
            variant,
            tau,
            out,
        } => selective_labels(&lr, &nn, &data, variant, tau, &out),
        Command::Evaluate {
            model,
            reject,
            data,
            report,
            roc,
        } => evaluate(&model, reject.as_deref(), &data, &report, roc.as_deref()),
        Command::Explain(args) => explain_cmd(&args),
        Command::Bounds {
            n,
            n_test,
            epsilon,
            delta,
        } => bounds(n, n_test, &epsilon, delta),
        Command::Synth {
            scenario,
            n,
            seed,
            out,
            probabilities,
        } => synth_cmd(&scenario, n, seed, &out, probabilities.as_deref()),
        Command::Pipeline {
            config,
            output_dir,
            input,
            split_seed,
        } => run_pipeline(&config, output_dir, input, split_seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {} stage: {}", f.stage.name(), f.error);
            ExitCode::from(f.stage.exit_code() as u8)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from).map_err(at(Stage::Output))?;
    std::fs::write(path, bytes)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .map_err(at(Stage::Output))
}

fn read_data(path: &Path) -> std::result::Result<Dataset, Failure> {
    Dataset::from_json_file(path).map_err(at(Stage::Ingest))
}

fn read_model(path: &Path) -> std::result::Result<ModelFile, Failure> {
    ModelFile::read(path).map_err(at(Stage::Ingest))
}

fn ingest(kind: CsvKind, input: &Path, no_header: bool, out: &Path) -> Outcome {
    let choice = match kind {
        CsvKind::Taiwan => DatasetChoice::Taiwan,
        CsvKind::Gmsc => DatasetChoice::Gmsc,
        CsvKind::Generic => DatasetChoice::Generic,
    };
    let d = pipeline::load_dataset(choice, input, no_header).map_err(at(Stage::Ingest))?;
    d.to_json_file(out).map_err(at(Stage::Output))?;
    println!("{} samples, {} features, default share {:.4}", d.n(), d.p(), d.default_share());
    Ok(())
}

fn split(data: &Path, fraction: f64, seed: u64, train_out: &Path, test_out: &Path) -> Outcome {
    let d = read_data(data)?;
    let (a, b) = data::split(&d, fraction, seed).map_err(at(Stage::Config))?;
    a.to_json_file(train_out).map_err(at(Stage::Output))?;
    b.to_json_file(test_out).map_err(at(Stage::Output))?;
    println!("train {} / test {}", a.n(), b.n());
    Ok(())
}

fn train(
    role: Role,
    data: &Path,
    labels: Option<&Path>,
    seed: u64,
    epochs: usize,
    out: &Path,
    trace_path: Option<&Path>,
) -> Outcome {
    let raw = read_data(data)?;
    let scaler = data::ScalerParams::fit(&raw);
    let scaled = scaler.apply(&raw).map_err(at(Stage::Ingest))?;
    let config = TrainConfig::default().with_seed(seed).with_epochs(epochs);
    config.validate().map_err(at(Stage::Config))?;
    let (model, trace, name) = match role {
        Role::Lr | Role::Nn => {
            if labels.is_some() {
                return Err(at(Stage::Config)(Error::Argument(
                    "--labels only applies to the difference net".into(),
                )));
            }
            let kind = if role == Role::Lr { ModelKind::Logistic } else { ModelKind::Mlp2 };
            let (m, t) = training::train(kind, &scaled, &config).map_err(at(Stage::Train))?;
            (m, t, if role == Role::Lr { "lr" } else { "nn" })
        }
        Role::Diffnet => {
            let path = labels.ok_or_else(|| {
                at(Stage::Config)(Error::Argument("the difference net needs --labels".into()))
            })?;
            let z = SelectiveLabels::from_json_file(path).map_err(at(Stage::Ingest))?;
            let (m, t) = selective::train_difference_net(&scaled, &z, &config).map_err(at(Stage::Train))?;
            (Model::Mlp(m), t, "diffnet")
        }
    };
    if let Some(p) = trace_path {
        trace.write_csv(p).map_err(at(Stage::Output))?;
    }
    let file = ModelFile::new(
        name,
        model,
        &raw,
        &scaler,
        Threshold::default(),
        TrainingMetadata::new(&config, &trace),
    );
    file.write(out).map_err(at(Stage::Output))?;
    println!(
        "{name}: final loss {:.6} after {} epochs{}",
        trace.final_loss(),
        trace.epochs_run,
        if trace.converged { " (converged)" } else { "" }
    );
    Ok(())
}

fn selective_labels(lr: &Path, nn: &Path, data: &Path, variant: Variant, tau: f64, out: &Path) -> Outcome {
    let raw = read_data(data)?;
    let (lr, nn) = (read_model(lr)?, read_model(nn)?);
    let tau = Threshold::new(tau).map_err(at(Stage::Config))?;
    let variant = match variant {
        Variant::Ideal => LabelVariant::Ideal,
        Variant::Practical => LabelVariant::Practical,
    };
    let z = selective::make_selective_labels(&nn.on_raw(), &lr.on_raw(), &raw, tau, variant)
        .map_err(at(Stage::Selective))?;
    z.to_json_file(out).map_err(at(Stage::Output))?;
    println!("rejected share {:.4}", z.rejected_share());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    schema: &'static str,
    role: String,
    overall: ModelEvaluation,
    rejection: Option<RejectionPart>,
}

#[derive(Serialize)]
struct RejectionPart {
    rejection_rate: f64,
    rejected_count: usize,
    rejected_error: Option<f64>,
    accepted_error: Option<f64>,
}

fn subset_error(pred: &[u8], labels: &[u8], idx: &[usize]) -> Option<f64> {
    (!idx.is_empty()).then(|| idx.iter().filter(|&&i| pred[i] != labels[i]).count() as f64 / idx.len() as f64)
}

fn evaluate(model: &Path, reject: Option<&Path>, data: &Path, report: &Path, roc_out: Option<&Path>) -> Outcome {
    let raw = read_data(data)?;
    let m = read_model(model)?;
    let tau = Threshold::new(m.threshold).map_err(at(Stage::Config))?;
    let scaled = m.prepare(&raw).map_err(at(Stage::Evaluate))?;
    let scores = forward_rows(&m.model, scaled.features(), scaled.p());
    let (overall, roc) = metrics::evaluate_scores(&scores, raw.labels(), tau).map_err(at(Stage::Evaluate))?;
    if let (Some(p), Some(roc)) = (roc_out, roc.as_ref()) {
        roc.write_csv(p).map_err(at(Stage::Output))?;
    }
    let rejection = match reject {
        None => None,
        Some(path) => {
            let g = read_model(path)?;
            let g_data = g.prepare(&raw).map_err(at(Stage::Evaluate))?;
            let tau_g = Threshold::new(g.threshold).map_err(at(Stage::Config))?;
            let rejected = selective::predicted_rejections(&g.model, &g_data, tau_g).map_err(at(Stage::Evaluate))?;
            let accepted: Vec<usize> = {
                let mut mask = vec![true; raw.n()];
                rejected.iter().for_each(|&i| mask[i] = false);
                (0..raw.n()).filter(|&i| mask[i]).collect()
            };
            let pred = predict_all(&scores, tau);
            Some(RejectionPart {
                rejection_rate: rejected.len() as f64 / raw.n() as f64,
                rejected_count: rejected.len(),
                rejected_error: subset_error(&pred, raw.labels(), &rejected),
                accepted_error: subset_error(&pred, raw.labels(), &accepted),
            })
        }
    };
    println!(
        "error {:.4}  recall {}  auc {}",
        overall.classification_error,
        fmt_opt(overall.recall),
        fmt_opt(overall.auc)
    );
    write_json(
        report,
        &EvaluateReport {
            schema: "selective-credit/evaluate/v1",
            role: m.role.clone(),
            overall,
            rejection,
        },
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn explain_cmd(args: &ExplainArgs) -> Outcome {
    let raw = read_data(&args.data)?;
    let m = read_model(&args.model)?;
    let scaled = m.prepare(&raw).map_err(at(Stage::Explain))?;
    if args.global {
        let gi = explain::global_importance(&m.model, &scaled, &m.role).map_err(at(Stage::Explain))?;
        for (name, l) in gi.feature_names.iter().zip(&gi.lambdas) {
            println!("{name:>40} {l:8.3}");
        }
        return write_json(&args.out, &gi);
    }
    if let Some(idx) = args.local_sample {
        let e = explain::local_explanation(&m.model, &scaled, idx).map_err(at(Stage::Explain))?;
        return write_json(&args.out, &e);
    }
    let (lr, nn) = match (&args.lr, &args.nn) {
        (Some(a), Some(b)) => (read_model(a)?, read_model(b)?),
        _ => unreachable!("clap enforces --lr and --nn"),
    };
    let tau_g = Threshold::new(m.threshold).map_err(at(Stage::Config))?;
    let lr_data = lr.prepare(&raw).map_err(at(Stage::Explain))?;
    let nn_data = nn.prepare(&raw).map_err(at(Stage::Explain))?;
    let rejected = selective::predicted_rejections(&m.model, &scaled, tau_g).map_err(at(Stage::Explain))?;
    // the report reads categorical values, which scaling leaves untouched
    let mut report = explain::pattern_report_for(
        &rejected,
        &nn.model,
        &lr.model,
        &scaled,
        args.dominance_threshold,
        None,
    )
    .map_err(at(Stage::Explain))?;
    for row in &mut report.scatter {
        row.lr_output = selective_credit::models::Predictor::forward_unchecked(&lr.model, lr_data.row(row.index));
        row.nn_output = selective_credit::models::Predictor::forward_unchecked(&nn.model, nn_data.row(row.index));
    }
    println!("{} rejected, {} dominant patterns", report.rejected_count, report.dominant.len());
    write_json(&args.out, &report)
}

fn bounds(n: u64, n_test: Option<u64>, epsilon: &[f64], delta: Option<f64>) -> Outcome {
    let q = ConcentrationQuery {
        n_train: n,
        n_test,
        epsilon_1: epsilon.first().copied(),
        epsilon_2: epsilon.get(1).copied(),
        delta,
    };
    let rows = q.evaluate().map_err(at(Stage::Bounds))?;
    println!("{:>10} {:>10} {:>12} {:>12} {:>14}", "n", "n_test", "epsilon_1", "epsilon_2", "bound");
    for r in &rows {
        println!(
            "{:>10} {:>10} {:>12.6} {:>12} {:>14.6e}{}",
            r.n_train,
            r.n_test.map_or_else(|| "-".into(), |m| m.to_string()),
            r.epsilon_1,
            r.epsilon_2.map_or_else(|| "-".into(), |e| format!("{e:.6}")),
            r.bound,
            if r.vacuous { "  (vacuous)" } else { "" }
        );
    }
    println!("{}", serde_json::to_string(&rows).map_err(Error::from).map_err(at(Stage::Output))?);
    Ok(())
}

fn synth_cmd(scenario: &str, n: usize, seed: u64, out: &Path, probabilities: Option<&Path>) -> Outcome {
    let s = if Path::new(scenario).is_file() {
        Scenario::from_json_file(Path::new(scenario))
    } else {
        Scenario::named(scenario)
    }
    .map_err(at(Stage::Config))?;
    let sample = synth::sample(&s, n, seed).map_err(at(Stage::Ingest))?;
    sample.dataset.to_json_file(out).map_err(at(Stage::Output))?;
    if let Some(p) = probabilities {
        let mut text = String::from("index,probability\n");
        for (i, v) in sample.probabilities.iter().enumerate() {
            text.push_str(&format!("{i},{v}\n"));
        }
        std::fs::write(p, text)
            .map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
            .map_err(at(Stage::Output))?;
    }
    println!("{} samples, default share {:.4}", n, sample.dataset.default_share());
    Ok(())
}

fn run_pipeline(path: &Path, output_dir: Option<PathBuf>, input: Option<PathBuf>, split_seed: Option<u64>) -> Outcome {
    let mut config = RunConfig::from_json_file(path).map_err(at(Stage::Config))?;
    if let Some(d) = output_dir {
        config.output_dir = d;
    }
    if let Some(i) = input {
        config.input = Some(i);
    }
    if let Some(s) = split_seed {
        config.split_seed = s;
    }
    let out = pipeline::run_pipeline(&config).map_err(|e| Failure {
        stage: e.stage,
        error: e.source,
    })?;
    let r = &out.report;
    println!("{:>28} {:>10} {:>10}", "", "logistic", "network");
    println!("{:>28} {:>10.4} {:>10.4}", "test error", r.lr.classification_error, r.nn.classification_error);
    println!("{:>28} {:>10} {:>10}", "AUC", fmt_opt(r.lr.auc), fmt_opt(r.nn.auc));
    println!("{:>28} {:>10} {:>10}", "recall", fmt_opt(r.lr.recall), fmt_opt(r.nn.recall));
    println!("{:>28} {:>10.4}", "rejection rate", r.selective.test_rejection_rate);
    println!("{:>28} {:>10.4}", "difference net error", r.selective.difference_net_test_error);
    if let Some(e) = &r.selective.rejected_set_errors {
        println!("{:>28} {:>10.4} {:>10.4}", "rejected-set error", e.lr, e.nn);
    }
    println!("outputs in {}", config.output_dir.display());
    Ok(())
}

