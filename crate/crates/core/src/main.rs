//! `pgfa` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pgfa::embedding::EmbeddingTable;
use pgfa::error::{Error, Result, StageContext};
use pgfa::experiment::{
    self, anchors_for, label_rows, BiasRecoveryConfig, ExperimentConfig, SynthesisConfig,
    CHECKPOINT_FILE, CONFUSION_FILE, EVAL_REPORT_FILE, LABELS_FILE, LOSS_TRACE_FILE,
    PROTOTYPE_REPORT_FILE,
};
use pgfa::gradcheck::{run_gradcheck, GradcheckOptions};
use pgfa::io::{self, SplitManifest};
use pgfa::metrics::EvalReport;
use pgfa::prototype::{align_and_classify, AlignmentConfig, AnchorSet, Strategy};
use pgfa::trainer::{self, embed, read_checkpoint, write_checkpoint, Activation, TrainConfig};
use pgfa::vmf::TheoremConfig;

#[derive(Debug, Parser)]
#[command(
    name = "pgfa",
    version,
    about = "Zero-shot classification with prototype-guided anchor alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the encoder on labeled features against their class anchors.
    Train(TrainArgs),
    /// Classify features against anchors, then against aligned prototypes.
    Align(AlignArgs),
    /// Score a labels CSV against the true labels of the features.
    Eval(EvalArgs),
    /// Monte-Carlo check that prototype classification approaches the Bayes rule.
    SimulateVmf(SimulateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Full pipeline: train on the seen split, align and evaluate the unseen split.
    Run(RunArgs),
    /// Write a synthetic demo dataset (features, anchors, manifest).
    Synthesize(SynthesizeArgs),
    /// Baseline vs aligned accuracy on synthetic biased-anchor mixtures.
    BiasRecovery(BiasArgs),
}

#[derive(Debug, Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_LR)]
    lr: f64,
    /// Width of the two hidden encoder layers.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = Activation::Relu)]
    activation: Activation,
}

#[derive(Debug, Args)]
struct AlignOpts {
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    #[arg(long, default_value_t = Strategy::Argmax)]
    strategy: Strategy,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    /// Train on the seen split only.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    /// Embed the features with this checkpoint first.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Restrict to the unseen split and its classes.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    align: AlignOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Labels CSV to score; defaults to `<out>/labels.csv`.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    classes: usize,
    #[arg(long, default_value_t = 20.0)]
    kappa: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [10, 100, 1000, 10000])]
    n: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1000)]
    held_out: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    configs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb one analytic gradient tensor (negative control).
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    anchors: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Skip training and embed with this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    align: AlignOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 8)]
    seen: usize,
    #[arg(long, default_value_t = 4)]
    unseen: usize,
    #[arg(long, default_value_t = 30.0)]
    kappa: f64,
    #[arg(long, default_value_t = 64)]
    samples: usize,
    /// Degrees between each class mean and its anchor.
    #[arg(long, default_value_t = 25.0)]
    bias: f64,
    /// Degrees between each class mean and the center of all means.
    #[arg(long, default_value_t = 40.0)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BiasArgs {
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[command(flatten)]
    align: AlignOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            seed,
            hidden: self.hidden,
            activation: self.activation,
        }
    }
}

impl AlignOpts {
    fn config(&self) -> AlignmentConfig {
        AlignmentConfig {
            alpha: self.alpha,
            strategy: self.strategy,
        }
    }
}

/// Features, optionally embedded and restricted to the unseen split, with
/// their anchor set.
fn load_eval_inputs(
    features: &Path,
    anchors: &Path,
    checkpoint: Option<&Path>,
    manifest: Option<&Path>,
) -> Result<(EmbeddingTable, AnchorSet)> {
    let table = io::read_embedding_table(features).stage("read features")?;
    let anchor_table = io::read_embedding_table(anchors).stage("read anchors")?;
    let (table, classes) = match manifest {
        Some(path) => {
            let manifest = SplitManifest::read(path).stage("read manifest")?;
            let (_, unseen) = io::apply_split(&table, &manifest).stage("split")?;
            (unseen, manifest.unseen)
        }
        None => (table, anchor_table.classes()),
    };
    let table = match checkpoint {
        Some(path) => {
            embed(&read_checkpoint(path).stage("load checkpoint")?, &table).stage("embed")?
        }
        None => table,
    };
    let anchor_set = anchors_for(&anchor_table, &classes).stage("anchors")?;
    Ok((table, anchor_set))
}

fn train(args: &TrainArgs) -> Result<()> {
    let config = args.train.config(args.seed);
    let table = io::read_embedding_table(&args.features).stage("read features")?;
    let anchors = io::read_embedding_table(&args.anchors).stage("read anchors")?;
    let table = match &args.manifest {
        Some(path) => {
            let manifest = SplitManifest::read(path).stage("read manifest")?;
            io::apply_split(&table, &manifest).stage("split")?.0
        }
        None => table,
    };
    let outcome = trainer::fit(&table, &anchors, &config).stage("train")?;
    write_checkpoint(
        &io::output_path(&args.out, CHECKPOINT_FILE)?,
        &outcome.state,
    )
    .stage("write outputs")?;
    io::write_text(
        &args.out.join(LOSS_TRACE_FILE),
        &io::format_loss_trace(&outcome.loss_trace),
    )
    .stage("write outputs")?;
    if let (Some(first), Some(last)) = (outcome.loss_trace.first(), outcome.loss_trace.last()) {
        println!(
            "mean loss {first} -> {last} over {} epochs",
            outcome.loss_trace.len()
        );
    }
    Ok(())
}

fn align(args: &AlignArgs) -> Result<()> {
    let config = args.align.config();
    config.validate().stage("config")?;
    let (table, anchors) = load_eval_inputs(
        &args.features,
        &args.anchors,
        args.checkpoint.as_deref(),
        args.manifest.as_deref(),
    )?;
    let outcome = align_and_classify(&table, &anchors, &config).stage("align")?;
    let rows = label_rows(&outcome.pseudo, &outcome.final_labels);
    io::write_text(
        &io::output_path(&args.out, LABELS_FILE)?,
        &io::format_labels_csv(&rows),
    )
    .stage("write outputs")?;
    io::write_text(
        &args.out.join(PROTOTYPE_REPORT_FILE),
        &io::format_prototype_report(&outcome.report),
    )
    .stage("write outputs")?;
    let changed = outcome
        .final_labels
        .iter()
        .zip(&outcome.pseudo.pseudo_labels)
        .filter(|(a, b)| a != b)
        .count();
    println!(
        "{} rows aligned, {changed} labels changed by prototypes",
        rows.len()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (table, anchors) = load_eval_inputs(
        &args.features,
        &args.anchors,
        args.checkpoint.as_deref(),
        args.manifest.as_deref(),
    )?;
    let labels_path = args
        .labels
        .clone()
        .unwrap_or_else(|| args.out.join(LABELS_FILE));
    let rows = io::read_text(&labels_path)
        .and_then(|text| io::parse_labels_csv(&labels_path, &text))
        .stage("read labels")?;
    let by_id: HashMap<&str, &str> = rows
        .iter()
        .map(|r| (r.row_id.as_str(), r.final_label.as_str()))
        .collect();
    let predicted: Vec<String> = table
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|l| l.to_string())
                .ok_or_else(|| Error::MissingClass(format!("no prediction for row `{id}`")))
        })
        .collect::<Result<_>>()
        .stage("read labels")?;
    let truth = anchors.indices_of(table.labels()).stage("evaluate")?;
    let pred = anchors.indices_of(&predicted).stage("evaluate")?;
    let report =
        EvalReport::evaluate(&table, &truth, &pred, anchors.classes()).stage("evaluate")?;
    io::write_text(
        &io::output_path(&args.out, EVAL_REPORT_FILE)?,
        &report.to_json(),
    )
    .stage("write outputs")?;
    io::write_text(&args.out.join(CONFUSION_FILE), &report.confusion.to_csv())
        .stage("write outputs")?;
    println!("accuracy {}", report.accuracy);
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = TheoremConfig {
        dim: args.dim,
        classes: args.classes,
        kappa: args.kappa,
        n_list: args.n.clone(),
        trials: args.trials,
        held_out_per_class: args.held_out,
        seed: args.seed,
    };
    let report = experiment::run_simulation(&config, &args.out).stage("simulate")?;
    for (n, agreement) in report.mean_agreement() {
        println!(
            "n={n} mean agreement {agreement} resultant length {}",
            report.mean_resultant_length(n)
        );
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let report = run_gradcheck(&GradcheckOptions {
        configs: args.configs,
        seed: args.seed,
        corrupt: args.corrupt.clone(),
    })?;
    println!("{report}");
    report.into_result().map(|_| ())
}

fn run(args: &RunArgs) -> Result<()> {
    let config = ExperimentConfig {
        features: args.features.clone(),
        anchors: args.anchors.clone(),
        manifest: args.manifest.clone(),
        checkpoint: args.checkpoint.clone(),
        train: args.train.config(args.seed),
        alignment: args.align.config(),
        out: args.out.clone(),
    };
    let outcome = experiment::run_zero_shot(&config)?;
    println!(
        "baseline accuracy {} aligned accuracy {}",
        outcome.baseline_report.accuracy, outcome.aligned_report.accuracy
    );
    Ok(())
}

fn synthesize(args: &SynthesizeArgs) -> Result<()> {
    let config = SynthesisConfig {
        dim: args.dim,
        seen: args.seen,
        unseen: args.unseen,
        kappa: args.kappa,
        samples_per_class: args.samples,
        bias_degrees: args.bias,
        spread_degrees: args.spread,
    };
    let files = experiment::synthesize(&config, args.seed, &args.out).stage("synthesize")?;
    for path in [files.features, files.anchors, files.manifest] {
        println!("{}", path.display());
    }
    Ok(())
}

fn bias_recovery(args: &BiasArgs) -> Result<()> {
    let config = BiasRecoveryConfig {
        alignment: args.align.config(),
        ..BiasRecoveryConfig::default()
    };
    println!("seed,baseline_accuracy,aligned_accuracy");
    for s in 0..args.seeds {
        let row = experiment::bias_recovery(&config, args.seed + s).stage("bias recovery")?;
        println!(
            "{},{},{}",
            row.seed, row.baseline_accuracy, row.aligned_accuracy
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train(a),
        Command::Align(a) => align(a),
        Command::Eval(a) => eval(a),
        Command::SimulateVmf(a) => simulate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Run(a) => run(a),
        Command::Synthesize(a) => synthesize(a),
        Command::BiasRecovery(a) => bias_recovery(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
