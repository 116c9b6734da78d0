//! Accuracy, confusion matrices, Fisher discrimination ratio and cosine
//! silhouette.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::embedding::{dot, l2_norm, EmbeddingTable, NORM_EPS};
use crate::error::{Error, Result};

pub fn accuracy<T: PartialEq>(truth: &[T], pred: &[T]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `counts[t][p]` = number of samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Correct / total per true class; `NaN` for classes with no samples.
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    f64::NAN
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect()
    }

    /// Header row and first column carry class names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            out.push_str(c);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], classes: &[String]) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= k) {
            return Err(Error::OutOfRangeLabel { label, classes: k });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

/// Label groups in order of first appearance.
fn groups(features: &EmbeddingTable) -> Vec<Vec<usize>> {
    let classes = features.classes();
    classes
        .iter()
        .map(|c| {
            (0..features.len())
                .filter(|&i| &features.labels()[i] == c)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fdr {
    pub ratio: f64,
    pub ridge_lambda: f64,
}

const RIDGE_SCALE: f64 = 1e-8;
const RIDGE_FLOOR: f64 = 1e-12;

/// `tr((S_w + lambda I)^-1 S_b)` with `lambda = 1e-8 * tr(S_w) / d`, solved by
/// Cholesky factorization.
pub fn fisher_discrimination_ratio(features: &EmbeddingTable) -> Result<Fdr> {
    let classes = groups(features);
    if classes.len() < 2 {
        return Err(Error::SingleCluster(classes.len()));
    }
    let d = features.dim();
    let n = features.len() as f64;
    let global: Vec<f64> = (0..d)
        .map(|j| (0..features.len()).map(|i| features.row(i)[j]).sum::<f64>() / n)
        .collect();

    let mut s_w = DMatrix::<f64>::zeros(d, d);
    let mut s_b = DMatrix::<f64>::zeros(d, d);
    for members in &classes {
        let nk = members.len() as f64;
        let mean: Vec<f64> = (0..d)
            .map(|j| members.iter().map(|&i| features.row(i)[j]).sum::<f64>() / nk)
            .collect();
        for &i in members {
            let x = features.row(i);
            for a in 0..d {
                for b in 0..d {
                    s_w[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                s_b[(a, b)] += nk * (mean[a] - global[a]) * (mean[b] - global[b]);
            }
        }
    }

    let trace_w = s_w.trace();
    if trace_w.is_nan() || trace_w <= 0.0 {
        return Err(Error::SingularScatter);
    }
    let ridge_lambda = (RIDGE_SCALE * trace_w / d as f64).max(RIDGE_FLOOR);
    for a in 0..d {
        s_w[(a, a)] += ridge_lambda;
    }
    let chol = s_w.cholesky().ok_or(Error::SingularScatter)?;
    let ratio = chol.solve(&s_b).trace();
    if !ratio.is_finite() {
        return Err(Error::SingularScatter);
    }
    Ok(Fdr {
        ratio,
        ridge_lambda,
    })
}

/// Mean silhouette under cosine distance `1 - cos`. Members of singleton
/// clusters score 0, as do points with `a = b = 0`.
pub fn silhouette_cosine(features: &EmbeddingTable) -> Result<f64> {
    let classes = groups(features);
    if classes.len() < 2 {
        return Err(Error::SingleCluster(classes.len()));
    }
    let n = features.len();
    let norms: Vec<f64> = (0..n).map(|i| l2_norm(features.row(i))).collect();
    if let Some(row) = norms.iter().position(|&x| x.is_nan() || x <= NORM_EPS) {
        return Err(Error::ZeroVector { row: Some(row) });
    }
    let dist =
        |i: usize, j: usize| 1.0 - dot(features.row(i), features.row(j)) / (norms[i] * norms[j]);

    let mut cluster_of = vec![0usize; n];
    for (c, members) in classes.iter().enumerate() {
        for &i in members {
            cluster_of[i] = c;
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = &classes[cluster_of[i]];
        if own.len() == 1 {
            continue;
        }
        let a = own
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| dist(i, j))
            .sum::<f64>()
            / (own.len() - 1) as f64;
        let b = classes
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != cluster_of[i])
            .map(|(_, m)| m.iter().map(|&j| dist(i, j)).sum::<f64>() / m.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub accuracy: Option<f64>,
}

/// Serialized as the evaluation JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub fdr: f64,
    pub silhouette: f64,
    pub ridge_lambda: f64,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// Scores predictions against the table's labels and measures feature
    /// separability under those labels.
    pub fn evaluate(
        features: &EmbeddingTable,
        truth: &[usize],
        pred: &[usize],
        classes: &[String],
    ) -> Result<Self> {
        let confusion = confusion(truth, pred, classes)?;
        let accuracy = accuracy(truth, pred)?;
        let per_class = classes
            .iter()
            .zip(confusion.per_class_accuracy())
            .map(|(c, a)| ClassAccuracy {
                class: c.clone(),
                accuracy: (!a.is_nan()).then_some(a),
            })
            .collect();
        let fdr = fisher_discrimination_ratio(features)?;
        let silhouette = silhouette_cosine(features)?;
        Ok(Self {
            accuracy,
            per_class,
            fdr: fdr.ratio,
            silhouette,
            ridge_lambda: fdr.ridge_lambda,
            confusion,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
