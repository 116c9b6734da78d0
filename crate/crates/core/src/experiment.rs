//! End-to-end pipelines: zero-shot train/align/evaluate, the theorem
//! simulation, biased-anchor recovery on synthetic mixtures, and demo data
//! synthesis.
//!
//! Output trees depend only on the inputs and the seed; the output directory
//! itself is never written into any artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result, StageContext};
use crate::io::{self, LabelRow, SplitManifest};
use crate::metrics::{accuracy, EvalReport};
use crate::prototype::{
    align_and_classify, classify_with_anchors, AlignmentConfig, AlignmentOutcome, AnchorKind,
    AnchorSet, PrototypeReport, PseudoLabeledSet,
};
use crate::trainer::{self, embed, read_checkpoint, write_checkpoint, TrainConfig, TrainerState};
use crate::vmf::{
    make_mixture, verify_theorem1, Mixture, MixtureSpec, TheoremConfig, TheoremReport,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const PROTOTYPE_REPORT_FILE: &str = "prototype_report.txt";
pub const THEOREM_FILE: &str = "theorem.csv";
pub const BASELINE_DIR: &str = "baseline";
pub const ALIGNED_DIR: &str = "aligned";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub features: PathBuf,
    pub anchors: PathBuf,
    pub manifest: PathBuf,
    /// Skip training and load this checkpoint instead.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
    pub alignment: AlignmentConfig,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for path in [
            Some(&self.features),
            Some(&self.anchors),
            Some(&self.manifest),
            self.checkpoint.as_ref(),
        ]
        .into_iter()
        .flatten()
        {
            if !path.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "input file {} does not exist",
                    path.display()
                )));
            }
        }
        self.alignment.validate()?;
        self.train.validate()
    }
}

/// Both classification passes over the same embedded unseen rows.
#[derive(Debug, Clone)]
pub struct ZeroShotOutcome {
    pub classes: Vec<String>,
    pub truth: Vec<usize>,
    pub baseline: PseudoLabeledSet,
    pub aligned: AlignmentOutcome,
    pub baseline_report: EvalReport,
    pub aligned_report: EvalReport,
    pub loss_trace: Vec<f64>,
}

impl ZeroShotOutcome {
    pub fn prototype_report(&self) -> &PrototypeReport {
        &self.aligned.report
    }
}

/// Label rows for one pass: pseudo-labels from the text anchors and the
/// entropy of that pass, with `final_labels` as the prediction.
pub fn label_rows(pseudo: &PseudoLabeledSet, final_labels: &[usize]) -> Vec<LabelRow> {
    (0..pseudo.len())
        .map(|i| LabelRow {
            row_id: pseudo.features.ids()[i].clone(),
            pseudo_label: pseudo.classes[pseudo.pseudo_labels[i]].clone(),
            final_label: pseudo.classes[final_labels[i]].clone(),
            entropy: pseudo.entropies[i],
        })
        .collect()
}

fn write_pass(dir: &Path, rows: &[LabelRow], report: &EvalReport) -> Result<()> {
    io::write_text(
        &io::output_path(dir, LABELS_FILE)?,
        &io::format_labels_csv(rows),
    )?;
    io::write_text(&dir.join(EVAL_REPORT_FILE), &report.to_json())?;
    io::write_text(&dir.join(CONFUSION_FILE), &report.confusion.to_csv())
}

/// Text anchors of `classes`, taken from an anchor table keyed by label.
pub fn anchors_for(table: &EmbeddingTable, classes: &[String]) -> Result<AnchorSet> {
    AnchorSet::from_table_for(table, classes, AnchorKind::Text)
}

/// Classifies already-embedded unseen rows with and without alignment.
pub fn zero_shot_from_embedded(
    embedded: &EmbeddingTable,
    text_anchors: &AnchorSet,
    alignment: &AlignmentConfig,
) -> Result<(PseudoLabeledSet, AlignmentOutcome, Vec<usize>)> {
    let truth = text_anchors.indices_of(embedded.labels())?;
    let baseline = classify_with_anchors(embedded, text_anchors)?;
    let aligned = align_and_classify(embedded, text_anchors, alignment)?;
    Ok((baseline, aligned, truth))
}

/// Trains on the seen split (or loads a checkpoint), embeds the unseen split,
/// classifies it against the text anchors and against aligned prototypes, and
/// writes every artifact under `config.out`.
pub fn run_zero_shot(config: &ExperimentConfig) -> Result<ZeroShotOutcome> {
    config.validate().stage("config")?;
    let features = io::read_embedding_table(&config.features).stage("read features")?;
    let anchor_table = io::read_embedding_table(&config.anchors).stage("read anchors")?;
    let manifest = SplitManifest::read(&config.manifest).stage("read manifest")?;
    let (seen, unseen) = io::apply_split(&features, &manifest).stage("split")?;
    if unseen.is_empty() {
        return Err(Error::EmptyDataset.in_stage("split"));
    }

    let (state, loss_trace): (TrainerState, Vec<f64>) = match &config.checkpoint {
        Some(path) => (read_checkpoint(path).stage("load checkpoint")?, Vec::new()),
        None => {
            if seen.is_empty() {
                return Err(Error::EmptyDataset.in_stage("train"));
            }
            let seen_anchors = anchors_for(&anchor_table, &manifest.seen)
                .stage("train")?
                .to_table();
            let outcome = trainer::fit(&seen, &seen_anchors, &config.train).stage("train")?;
            (outcome.state, outcome.loss_trace)
        }
    };

    let text_anchors = anchors_for(&anchor_table, &manifest.unseen).stage("align")?;
    let embedded = embed(&state, &unseen).stage("embed")?;
    let (baseline, aligned, truth) =
        zero_shot_from_embedded(&embedded, &text_anchors, &config.alignment).stage("align")?;
    let classes = text_anchors.classes().to_vec();
    let baseline_report =
        EvalReport::evaluate(&embedded, &truth, &baseline.pseudo_labels, &classes)
            .stage("evaluate")?;
    let aligned_report = EvalReport::evaluate(&embedded, &truth, &aligned.final_labels, &classes)
        .stage("evaluate")?;

    write_zero_shot(
        config,
        &state,
        &loss_trace,
        &baseline,
        &aligned,
        &baseline_report,
        &aligned_report,
    )
    .stage("write outputs")?;

    Ok(ZeroShotOutcome {
        classes,
        truth,
        baseline,
        aligned,
        baseline_report,
        aligned_report,
        loss_trace,
    })
}

fn write_zero_shot(
    config: &ExperimentConfig,
    state: &TrainerState,
    loss_trace: &[f64],
    baseline: &PseudoLabeledSet,
    aligned: &AlignmentOutcome,
    baseline_report: &EvalReport,
    aligned_report: &EvalReport,
) -> Result<()> {
    let out = &config.out;
    write_checkpoint(&io::output_path(out, CHECKPOINT_FILE)?, state)?;
    if config.checkpoint.is_none() {
        io::write_text(
            &out.join(LOSS_TRACE_FILE),
            &io::format_loss_trace(loss_trace),
        )?;
    }
    write_pass(
        &out.join(BASELINE_DIR),
        &label_rows(baseline, &baseline.pseudo_labels),
        baseline_report,
    )?;
    write_pass(
        &out.join(ALIGNED_DIR),
        &label_rows(&aligned.pseudo, &aligned.final_labels),
        aligned_report,
    )?;
    io::write_text(
        &out.join(PROTOTYPE_REPORT_FILE),
        &io::format_prototype_report(&aligned.report),
    )
}

/// Runs the theorem check and writes its CSV under `out`.
pub fn run_simulation(config: &TheoremConfig, out: &Path) -> Result<TheoremReport> {
    let report = verify_theorem1(config)?;
    io::write_text(
        &io::output_path(out, THEOREM_FILE)?,
        &io::format_theorem_csv(&report),
    )?;
    Ok(report)
}

/// Synthetic biased-anchor setting on the hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecoveryConfig {
    pub dim: usize,
    pub classes: usize,
    pub kappa: f64,
    pub samples_per_class: usize,
    /// Degrees between each class mean and its anchor.
    pub bias_degrees: f64,
    /// Degrees between each class mean and the common center of all means.
    pub spread_degrees: f64,
    pub alignment: AlignmentConfig,
}

impl Default for BiasRecoveryConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            classes: 5,
            kappa: 30.0,
            samples_per_class: 500,
            bias_degrees: 25.0,
            spread_degrees: 30.0,
            alignment: AlignmentConfig::default(),
        }
    }
}

impl BiasRecoveryConfig {
    pub fn mixture(&self, seed: u64) -> Result<Mixture> {
        let spec = MixtureSpec::clustered(
            self.dim,
            self.classes,
            self.kappa,
            self.spread_degrees.to_radians(),
            self.samples_per_class,
            self.bias_degrees.to_radians(),
            seed,
        )?;
        make_mixture(&spec, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasRecoveryRow {
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub aligned_accuracy: f64,
}

/// Accuracy with the biased anchors versus after prototype alignment.
pub fn bias_recovery(config: &BiasRecoveryConfig, seed: u64) -> Result<BiasRecoveryRow> {
    let mixture = config.mixture(seed)?;
    let (baseline, aligned, truth) =
        zero_shot_from_embedded(&mixture.data, &mixture.biased_anchors, &config.alignment)?;
    Ok(BiasRecoveryRow {
        seed,
        baseline_accuracy: accuracy(&truth, &baseline.pseudo_labels)?,
        aligned_accuracy: accuracy(&truth, &aligned.final_labels)?,
    })
}

/// Demo dataset: a clustered vMF mixture whose first `seen` classes form the
/// seen split, with anchors rotated away from the class means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub dim: usize,
    pub seen: usize,
    pub unseen: usize,
    pub kappa: f64,
    pub samples_per_class: usize,
    pub bias_degrees: f64,
    pub spread_degrees: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            seen: 8,
            unseen: 4,
            kappa: 30.0,
            samples_per_class: 64,
            bias_degrees: 25.0,
            spread_degrees: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesizedFiles {
    pub features: PathBuf,
    pub anchors: PathBuf,
    pub manifest: PathBuf,
}

pub fn synthesize(config: &SynthesisConfig, seed: u64, out: &Path) -> Result<SynthesizedFiles> {
    if config.unseen < 2 || config.seen < 1 {
        return Err(Error::InvalidConfig(
            "synthesis needs at least one seen and two unseen classes".into(),
        ));
    }
    let spec = MixtureSpec::clustered(
        config.dim,
        config.seen + config.unseen,
        config.kappa,
        config.spread_degrees.to_radians(),
        config.samples_per_class,
        config.bias_degrees.to_radians(),
        seed,
    )?;
    let mixture = make_mixture(&spec, seed)?;
    let classes = mixture.biased_anchors.classes().to_vec();
    let manifest = SplitManifest {
        fold: 0,
        seen: classes[..config.seen].to_vec(),
        unseen: classes[config.seen..].to_vec(),
    };
    let files = SynthesizedFiles {
        features: io::output_path(out, "features.emb")?,
        anchors: out.join("anchors.emb"),
        manifest: out.join("manifest.toml"),
    };
    io::write_embedding_table(&files.features, &mixture.data)?;
    io::write_embedding_table(&files.anchors, &mixture.biased_anchors.to_table())?;
    io::write_text(&files.manifest, &manifest.to_toml())?;
    Ok(files)
}
