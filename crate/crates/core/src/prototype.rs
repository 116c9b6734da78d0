//! Test-time prototype alignment.
//!
//! Unseen samples are pseudo-labeled against the text anchors, grouped into
//! per-class support sets of unit-normalized features, filtered down to the
//! lowest-entropy fraction `alpha` of each set, and averaged into prototypes
//! that replace the anchors for a second classification pass. Classes whose
//! filtered set is empty keep their text anchor.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    dot, entropy_slice, l2_norm, l2_normalize, softmax_unchecked, EmbeddingTable,
    ProbabilityVector, NORM_EPS,
};
use crate::error::{Error, Result};

/// Slack absorbed before flooring `alpha * |S^k|`, so e.g. `0.29 * 100`
/// keeps 29 members rather than 28.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    Text,
    Prototype,
    Exemplar,
}

/// One reference vector per class. Position in the set is the class index
/// used everywhere else; lower index wins ties.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    classes: Vec<String>,
    anchors: Array2<f64>,
    kind: AnchorKind,
}

impl AnchorSet {
    pub fn new(classes: Vec<String>, anchors: Array2<f64>, kind: AnchorKind) -> Result<Self> {
        if classes.len() != anchors.nrows() {
            return Err(Error::LengthMismatch {
                left: classes.len(),
                right: anchors.nrows(),
            });
        }
        if classes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least two classes, got {}",
                classes.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = classes.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate class `{dup}`")));
        }
        for (i, row) in anchors.rows().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n.is_finite() && n > NORM_EPS) {
                return Err(Error::ZeroVector { row: Some(i) });
            }
        }
        Ok(Self {
            classes,
            anchors: anchors.as_standard_layout().into_owned(),
            kind,
        })
    }

    /// One anchor per distinct label, in order of first appearance.
    /// Duplicate labels are rejected.
    pub fn from_table(table: &EmbeddingTable, kind: AnchorKind) -> Result<Self> {
        Self::new(table.labels().to_vec(), table.data().clone(), kind)
    }

    /// Anchors for the listed classes only, in the listed order.
    pub fn from_table_for(
        table: &EmbeddingTable,
        classes: &[String],
        kind: AnchorKind,
    ) -> Result<Self> {
        let rows = classes
            .iter()
            .map(|c| {
                table
                    .labels()
                    .iter()
                    .position(|l| l == c)
                    .ok_or_else(|| Error::MissingClass(c.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes.to_vec(), table.select(&rows).data().clone(), kind)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors.ncols()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn kind(&self) -> AnchorKind {
        self.kind
    }

    pub fn anchors(&self) -> &Array2<f64> {
        &self.anchors
    }

    pub fn anchor(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.anchors.as_slice().expect("standard layout")[k * d..(k + 1) * d]
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    /// Same vectors tagged with another kind.
    pub fn with_kind(&self, kind: AnchorKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }

    /// Class indices of the table labels; unknown labels are an error.
    pub fn indices_of(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.class_index(l)
                    .ok_or_else(|| Error::MissingClass(l.clone()))
            })
            .collect()
    }

    pub fn to_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(
            self.classes.clone(),
            self.classes.clone(),
            self.anchors.clone(),
        )
        .expect("anchor set invariants imply a valid table")
    }
}

/// Output of one classification pass against an anchor set.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    pub features: EmbeddingTable,
    pub classes: Vec<String>,
    pub pseudo_labels: Vec<usize>,
    pub probs: Vec<ProbabilityVector>,
    pub entropies: Vec<f64>,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.pseudo_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Softmax at temperature one over cosine similarities to each anchor, argmax
/// with lowest-index tie-break, and the entropy of each row's distribution.
pub fn classify_with_anchors(
    features: &EmbeddingTable,
    anchors: &AnchorSet,
) -> Result<PseudoLabeledSet> {
    if features.dim() != anchors.dim() {
        return Err(Error::DimensionMismatch {
            context: "features vs anchors",
            expected: anchors.dim(),
            found: features.dim(),
        });
    }
    let k = anchors.len();
    let anchor_norms: Vec<f64> = (0..k).map(|j| l2_norm(anchors.anchor(j))).collect();
    let mut pseudo_labels = Vec::with_capacity(features.len());
    let mut probs = Vec::with_capacity(features.len());
    let mut entropies = Vec::with_capacity(features.len());
    for i in 0..features.len() {
        let v = features.row(i);
        let norm = l2_norm(v);
        if norm.is_nan() || norm <= NORM_EPS {
            return Err(Error::ZeroVector { row: Some(i) });
        }
        let sims: Vec<f64> = (0..k)
            .map(|j| dot(v, anchors.anchor(j)) / (norm * anchor_norms[j]))
            .collect();
        let p = ProbabilityVector::new(softmax_unchecked(&sims, 1.0))?;
        entropies.push(entropy_slice(p.as_slice()));
        pseudo_labels.push(p.argmax());
        probs.push(p);
    }
    Ok(PseudoLabeledSet {
        features: features.clone(),
        classes: anchors.classes().to_vec(),
        pseudo_labels,
        probs,
        entropies,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMember {
    /// Unit-normalized feature.
    pub feature: Vec<f64>,
    pub entropy: f64,
    /// Row index in the classified table.
    pub row: usize,
}

/// Per-class members, in increasing row order within each class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub members: Vec<Vec<SupportMember>>,
}

impl SupportSet {
    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn rows(&self, k: usize) -> Vec<usize> {
        self.members[k].iter().map(|m| m.row).collect()
    }

    pub fn total(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }
}

/// Partitions the normalized rows by pseudo label.
pub fn build_support_sets(pl: &PseudoLabeledSet) -> Result<SupportSet> {
    let mut members = vec![Vec::new(); pl.num_classes()];
    for (row, &label) in pl.pseudo_labels.iter().enumerate() {
        if label >= members.len() {
            return Err(Error::OutOfRangeLabel {
                label,
                classes: members.len(),
            });
        }
        let feature =
            l2_normalize(pl.features.row(row)).map_err(|_| Error::ZeroVector { row: Some(row) })?;
        members[label].push(SupportMember {
            feature,
            entropy: pl.entropies[row],
            row,
        });
    }
    Ok(SupportSet { members })
}

pub fn validate_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Number of members the filter keeps out of `size`.
pub fn filtered_size(alpha: f64, size: usize) -> usize {
    (((alpha * size as f64) + FLOOR_SLACK).floor() as usize).min(size)
}

/// Keeps the `floor(alpha * |S^k|)` lowest-entropy members of every class;
/// equal entropies are ordered by row index.
pub fn entropy_filter(support: &SupportSet, alpha: f64) -> Result<SupportSet> {
    validate_alpha(alpha)?;
    let members = support
        .members
        .iter()
        .map(|class| {
            let keep = filtered_size(alpha, class.len());
            let mut ranked: Vec<&SupportMember> = class.iter().collect();
            ranked.sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then(a.row.cmp(&b.row)));
            let mut kept: Vec<SupportMember> = ranked.into_iter().take(keep).cloned().collect();
            kept.sort_by_key(|m| m.row);
            kept
        })
        .collect();
    Ok(SupportSet { members })
}

/// Centroid of each filtered set (not renormalized), or the fallback anchor
/// when the set is empty.
pub fn compute_prototypes(filtered: &SupportSet, fallback: &AnchorSet) -> Result<AnchorSet> {
    if filtered.num_classes() != fallback.len() {
        return Err(Error::LengthMismatch {
            left: filtered.num_classes(),
            right: fallback.len(),
        });
    }
    let mut out = fallback.anchors().clone();
    for (k, class) in filtered.members.iter().enumerate() {
        if class.is_empty() {
            continue;
        }
        let mut row = out.row_mut(k);
        row.fill(0.0);
        for m in class {
            row.iter_mut().zip(&m.feature).for_each(|(c, z)| *c += z);
        }
        row.mapv_inplace(|c| c / class.len() as f64);
    }
    AnchorSet::new(fallback.classes().to_vec(), out, AnchorKind::Prototype)
}

/// Probability-weighted mean of every normalized row, per class, over the
/// whole unfiltered set.
pub fn weighted_prototypes(pl: &PseudoLabeledSet) -> Result<AnchorSet> {
    if pl.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = pl.num_classes();
    let d = pl.features.dim();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut weights = vec![0.0; k];
    for i in 0..pl.len() {
        let z = l2_normalize(pl.features.row(i)).map_err(|_| Error::ZeroVector { row: Some(i) })?;
        for (c, &p) in pl.probs[i].as_slice().iter().enumerate() {
            weights[c] += p;
            sums.row_mut(c)
                .iter_mut()
                .zip(&z)
                .for_each(|(s, x)| *s += p * x);
        }
    }
    for (c, w) in weights.iter().enumerate() {
        sums.row_mut(c).mapv_inplace(|s| s / w);
    }
    AnchorSet::new(pl.classes.clone(), sums, AnchorKind::Prototype)
}

/// Final labels: argmax against the given anchors, whatever their kind.
pub fn reclassify(features: &EmbeddingTable, prototypes: &AnchorSet) -> Result<Vec<usize>> {
    classify_with_anchors(features, prototypes).map(|pl| pl.pseudo_labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Argmax,
    Weighted,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Argmax => "argmax",
            Strategy::Weighted => "weighted",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Strategy::Argmax),
            "weighted" => Ok(Strategy::Weighted),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub alpha: f64,
    pub strategy: Strategy,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            strategy: Strategy::Argmax,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        validate_alpha(self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeReport {
    pub config: AlignmentConfig,
    pub classes: Vec<String>,
    pub support_sizes: Vec<usize>,
    /// `None` for the weighted strategy, which does not filter.
    pub filtered_sizes: Option<Vec<usize>>,
    pub fallback: Vec<bool>,
    pub pseudo_labels: Vec<usize>,
    pub final_labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub pseudo: PseudoLabeledSet,
    pub prototypes: AnchorSet,
    pub filtered: Option<SupportSet>,
    pub final_labels: Vec<usize>,
    pub report: PrototypeReport,
}

/// Pseudo-label, build and filter support sets, form prototypes, reclassify.
pub fn align_and_classify(
    features: &EmbeddingTable,
    text_anchors: &AnchorSet,
    config: &AlignmentConfig,
) -> Result<AlignmentOutcome> {
    config.validate()?;
    let pseudo = classify_with_anchors(features, text_anchors)?;
    let support = build_support_sets(&pseudo)?;
    let (prototypes, filtered) = match config.strategy {
        Strategy::Argmax => {
            let filtered = entropy_filter(&support, config.alpha)?;
            (compute_prototypes(&filtered, text_anchors)?, Some(filtered))
        }
        Strategy::Weighted => (weighted_prototypes(&pseudo)?, None),
    };
    let final_labels = reclassify(features, &prototypes)?;
    let report = PrototypeReport {
        config: *config,
        classes: text_anchors.classes().to_vec(),
        support_sizes: support.sizes(),
        filtered_sizes: filtered.as_ref().map(SupportSet::sizes),
        fallback: match &filtered {
            Some(f) => f.members.iter().map(Vec::is_empty).collect(),
            None => vec![false; text_anchors.len()],
        },
        pseudo_labels: pseudo.pseudo_labels.clone(),
        final_labels: final_labels.clone(),
    };
    Ok(AlignmentOutcome {
        pseudo,
        prototypes,
        filtered,
        final_labels,
        report,
    })
}

/// Anchor per class from labeled exemplar embeddings: the normalized mean of
/// that class's rows.
pub fn prototypes_from_exemplars(
    exemplars: &EmbeddingTable,
    classes: &[String],
) -> Result<AnchorSet> {
    let d = exemplars.dim();
    let mut anchors = Array2::zeros((classes.len(), d));
    for (k, class) in classes.iter().enumerate() {
        let rows: Vec<usize> = (0..exemplars.len())
            .filter(|&i| &exemplars.labels()[i] == class)
            .collect();
        if rows.is_empty() {
            return Err(Error::MissingClass(class.clone()));
        }
        let mut mean = vec![0.0; d];
        for &i in &rows {
            mean.iter_mut()
                .zip(exemplars.row(i))
                .for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        let unit = l2_normalize(&mean)?;
        anchors.row_mut(k).assign(&ndarray::Array1::from(unit));
    }
    AnchorSet::new(classes.to_vec(), anchors, AnchorKind::Exemplar)
}
