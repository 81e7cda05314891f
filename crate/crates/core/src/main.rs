use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dcws::constraints::BoundVector;
use dcws::data::{covered_rows, LabeledEval};
use dcws::io::{
    read_bounds, read_features, read_labels, read_signals, write_labels, write_matrix_csv, write_signals, SignalMeta,
};
use dcws::metrics::{accuracy, f1_score};
use dcws::model::Checkpoint;
use dcws::pipeline::{
    emit_ablation, emit_metrics, run_ablation, run_experiment, version_string, ExperimentConfig, FitConfig,
};
use dcws::prior::PriorMode;
use dcws::solver::{fit_dcws, predict, write_training_log, StopReason};
use dcws::synth::{generate, SyntheticSpec};
use dcws::{Error, Result};

#[derive(Parser)]
#[command(name = "dcws", version, about = "Train label models from weak signals under error-bound constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark as CSV files.
    Generate {
        /// Flat config file; synthetic keys and `seed` are used.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a label model on files and write its labels, checkpoint and log.
    Fit(FitArgs),
    /// Score a saved label model against known labels.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Run the trials of an experiment config and write metrics.json.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every ablation arm on the configured data and write ablation.json.
    Ablate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    signals: PathBuf,
    #[arg(long)]
    meta: PathBuf,
    /// One error bound per signal, one per line.
    #[arg(long, conflicts_with = "bounds_zero")]
    bounds: Option<PathBuf>,
    /// Use bound 0 for every signal (the default).
    #[arg(long)]
    bounds_zero: bool,
    /// Fit on all examples, not only covered ones.
    #[arg(long)]
    plus: bool,
    /// Overrides `prior_mode` from the config.
    #[arg(long)]
    prior: Option<PriorMode>,
    /// Flat file of solver and label-model keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// True class per example; adds label accuracy to metrics.json.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct Manifest {
    version: String,
    spec: SyntheticSpec,
    realized_errors: Vec<f64>,
    global_coverage: f64,
    fingerprint: String,
}

fn cmd_generate(spec: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::read(spec)?;
    let spec = SyntheticSpec { seed: config.seed, ..config.synthetic };
    let bundle = generate::<f64>(&spec)?;
    create_dir(out)?;
    write_matrix_csv(&out.join("train_features.csv"), bundle.train_x.view())?;
    write_labels(&out.join("train_labels.csv"), &bundle.train_truth)?;
    write_matrix_csv(&out.join("test_features.csv"), bundle.test_x.view())?;
    write_labels(&out.join("test_labels.csv"), &bundle.test_truth)?;
    write_signals(&out.join("signals.csv"), &bundle.signals)?;
    SignalMeta::binary(bundle.signals.n_signals()).write(&out.join("meta.json"))?;
    write_json(
        &Manifest {
            version: version_string(),
            fingerprint: bundle.fingerprint(),
            realized_errors: bundle.realized_errors,
            global_coverage: bundle.global_coverage,
            spec,
        },
        &out.join("manifest.json"),
    )?;
    println!("wrote benchmark to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitMetrics {
    version: String,
    n_examples: usize,
    /// Rows the model was fitted on; labels.csv covers every row.
    n_fit: usize,
    plus: bool,
    epochs: usize,
    stop_reason: StopReason,
    final_max_violation: f64,
    final_violations: Vec<f64>,
    lambda: Vec<f64>,
    xi: Vec<f64>,
    label_accuracy: Option<f64>,
    label_f1: Option<f64>,
    config: FitConfig,
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => FitConfig::read(path)?,
        None => FitConfig::default(),
    };
    if let Some(prior) = args.prior {
        config.solver.prior_mode = prior;
    }
    let meta = SignalMeta::read(&args.meta)?;
    let x = read_features(&args.features)?;
    let signals = read_signals(&args.signals, &meta)?;
    let bounds = match &args.bounds {
        Some(path) => read_bounds(path)?,
        None => BoundVector::zeros(signals.n_signals()),
    };
    let truth = match &args.truth {
        Some(path) => Some(read_labels(path, meta.n_classes)?),
        None => None,
    };
    let rows: Vec<usize> = if args.plus { (0..x.n_examples()).collect() } else { covered_rows(&signals) };
    if rows.is_empty() {
        return Err(Error::Empty("no weak signal covers any example"));
    }
    let spec = config.label_model.to_spec(signals.n_columns());
    let fit = fit_dcws(&x.select_rows(&rows), &signals.select_rows(&rows)?, &bounds, &spec, &config.solver)?;

    create_dir(&args.out)?;
    let labels = predict(&fit.state.params, &spec, &x)?;
    write_matrix_csv(&args.out.join("labels.csv"), labels.view())?;
    Checkpoint { spec, params: fit.state.params.clone() }.save(&args.out.join("model.json"))?;
    let log_path = args.out.join("train.log");
    let log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    write_training_log(&fit.state.dual.history, std::io::BufWriter::new(log)).map_err(|e| Error::io(&log_path, e))?;

    let (label_accuracy, label_f1) = match &truth {
        Some(t) => {
            let fitted = fit.labels.clone();
            let t = t.select_rows(&rows);
            (Some(accuracy(&fitted, &t)?), Some(f1_score(&fitted, &t)?))
        }
        None => (None, None),
    };
    let dual = &fit.state.dual;
    let metrics = FitMetrics {
        version: version_string(),
        n_examples: x.n_examples(),
        n_fit: rows.len(),
        plus: args.plus,
        epochs: dual.history.len(),
        stop_reason: dual.stop_reason,
        final_max_violation: fit.final_violations.fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        final_violations: fit.final_violations.to_vec(),
        lambda: dual.lambda.to_vec(),
        xi: dual.xi.to_vec(),
        label_accuracy,
        label_f1,
        config,
    };
    write_json(&metrics, &args.out.join("metrics.json"))?;
    if dual.stalled() {
        eprintln!("warning: constraint violations stopped decreasing; returned the lowest-violation state");
    }
    println!("fit {} of {} examples in {} epochs ({:?})", rows.len(), x.n_examples(), dual.history.len(), dual.stop_reason);
    Ok(())
}

#[derive(Serialize)]
struct EvalMetrics {
    accuracy: f64,
    macro_f1: f64,
    n_examples: usize,
}

fn cmd_eval(model: &Path, features: &Path, labels: &Path) -> Result<()> {
    let checkpoint = Checkpoint::<f64>::load(model)?;
    let x = read_features(features)?;
    let n_classes = checkpoint.spec.n_outputs.max(2);
    let truth: LabeledEval = read_labels(labels, n_classes)?;
    let preds = predict(&checkpoint.params, &checkpoint.spec, &x)?;
    let metrics = EvalMetrics {
        accuracy: accuracy(&preds, &truth)?,
        macro_f1: f1_score(&preds, &truth)?,
        n_examples: x.n_examples(),
    };
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn cmd_experiment(config: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::read(config)?;
    let report = run_experiment(&config)?;
    create_dir(out)?;
    emit_metrics(&report, &config, &out.join("metrics.json"))?;
    let test = report.test_accuracy.map_or("n/a".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
    println!(
        "label accuracy {:.4} ± {:.4}, test accuracy {test} ({:.1}s)",
        report.label_accuracy.mean, report.label_accuracy.std, report.wall_clock_seconds
    );
    Ok(())
}

fn cmd_ablate(spec: &Path, out: &Path) -> Result<()> {
    let config = ExperimentConfig::read(spec)?;
    let rows = run_ablation(&config)?;
    create_dir(out)?;
    emit_ablation(&rows, &config, &out.join("ablation.json"))?;
    for row in &rows {
        println!("{:<28} {:.4} ± {:.4}", row.arm.name(), row.report.label_accuracy.mean, row.report.label_accuracy.std);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, out } => cmd_generate(&spec, &out),
        Command::Fit(args) => cmd_fit(&args),
        Command::Eval { model, features, labels } => cmd_eval(&model, &features, &labels),
        Command::Experiment { config, out } => cmd_experiment(&config, &out),
        Command::Ablate { spec, out } => cmd_ablate(&spec, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
