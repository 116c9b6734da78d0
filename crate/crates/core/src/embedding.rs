//! Numerical primitives on embedding vectors.
//!
//! Everything here is a pure function over borrowed slices: normalization,
//! cosine similarity, tempered softmax, entropy and KL divergence (both in
//! nats), and the batched cosine similarity matrix. [`EmbeddingTable`] is the
//! labeled row container passed between the other modules.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Norm at or below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

const PROB_SUM_TOL: f64 = 1e-9;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Returns `v / ||v||`.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm <= NORM_EPS || !norm.is_finite() {
        return Err(Error::ZeroVector { row: None });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "cosine_sim",
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Err(Error::ZeroVector { row: None });
    }
    Ok(dot(a, b) / (na * nb))
}

/// A discrete distribution: entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbability("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbability(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `exp(s_i / tau) / sum_j exp(s_j / tau)`, shifted by the max score.
pub fn softmax(scores: &[f64], tau: f64) -> Result<ProbabilityVector> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    if scores.is_empty() {
        return Err(Error::InvalidProbability("empty".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { stage: "softmax" });
    }
    Ok(ProbabilityVector(softmax_unchecked(scores, tau)))
}

pub(crate) fn softmax_unchecked(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &ProbabilityVector) -> f64 {
    entropy_slice(p.as_slice())
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// `KL(target || pred) = sum_k target_k ln(target_k / pred_k)` in nats.
///
/// `pred` must be strictly positive wherever `target` is; softmax outputs
/// always are.
pub fn kl_divergence(target: &ProbabilityVector, pred: &ProbabilityVector) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::DimensionMismatch {
            context: "kl_divergence",
            expected: target.len(),
            found: pred.len(),
        });
    }
    Ok(kl_slice(target.as_slice(), pred.as_slice()))
}

pub(crate) fn kl_slice(target: &[f64], pred: &[f64]) -> f64 {
    target
        .iter()
        .zip(pred)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &p)| t * (t / p).ln())
        .sum()
}

/// Dense row-major feature rows with an id and a class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    labels: Vec<String>,
    data: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, labels: Vec<String>, data: Array2<f64>) -> Result<Self> {
        let n = data.nrows();
        if ids.len() != n {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: n,
            });
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: n,
            });
        }
        if n > 0 && data.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                context: "embedding table width",
                expected: 1,
                found: 0,
            });
        }
        if let Some((row, _)) = data
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::InvalidConfig(format!(
                "row {row} has a non-finite entry"
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::InvalidConfig(format!("duplicate row id `{dup}`")));
        }
        let data = data.as_standard_layout().into_owned();
        Ok(Self { ids, labels, data })
    }

    /// Builds a table with ids `"{prefix}{i}"`.
    pub fn with_generated_ids(
        prefix: &str,
        labels: Vec<String>,
        data: Array2<f64>,
    ) -> Result<Self> {
        let ids = (0..data.nrows()).map(|i| format!("{prefix}{i}")).collect();
        Self::new(ids, labels, data)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.dim();
        &self.data.as_slice().expect("standard layout")[i * width..(i + 1) * width]
    }

    pub fn row_view(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    /// Distinct labels in order of first appearance.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.labels
            .iter()
            .filter(|l| seen.insert(l.as_str()))
            .cloned()
            .collect()
    }

    /// Rows whose label satisfies `keep`, in original order.
    pub fn filter_by_label(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.labels[i])).collect();
        self.select(&idx)
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            data: self.data.select(ndarray::Axis(0), indices),
        }
    }

    /// Same ids and labels with new row data.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        Self::new(self.ids.clone(), self.labels.clone(), data)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            ids: self.ids.clone(),
            labels: self.labels.clone(),
            data: &self.data * factor,
        }
    }
}

/// Cosine similarities between the rows of two tables.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Array2<f64>);

impl SimilarityMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Unit-normalized copy of each row; errors name the offending row.
pub(crate) fn normalize_rows(data: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = data.as_standard_layout().into_owned();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm <= NORM_EPS || !norm.is_finite() {
            return Err(Error::ZeroVector { row: Some(i) });
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(out)
}

/// Dot products of every row of `a` with every row of `b`, summed in index
/// order so results do not depend on how the product is blocked.
pub(crate) fn row_dots(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let width = a.ncols();
    let (sa, sb) = (
        a.as_slice().expect("standard layout"),
        b.as_slice().expect("standard layout"),
    );
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        dot(
            &sa[i * width..(i + 1) * width],
            &sb[j * width..(j + 1) * width],
        )
    })
}

pub fn similarity_matrix(x: &EmbeddingTable, y: &EmbeddingTable) -> Result<SimilarityMatrix> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            context: "similarity_matrix",
            expected: x.dim(),
            found: y.dim(),
        });
    }
    let xn = normalize_rows(x.data())?;
    let yn = normalize_rows(y.data())?;
    Ok(SimilarityMatrix(row_dots(&xn, &yn)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!(close(v[0], 0.6, 1e-15) && close(v[1], 0.8, 1e-15));
        let u = l2_normalize(&[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(
            cosine_sim(&[1.0, 2.0, -3.0], &[2.0, 4.0, -6.0]).unwrap(),
            1.0,
            1e-15
        ));
        assert_eq!(cosine_sim(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine_sim(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroVector { .. })
        ));
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        p.as_slice()
            .iter()
            .for_each(|&x| assert!(close(x, 1.0 / 3.0, 1e-15)));
        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(p.as_slice()[0], 2.0 / 3.0, 1e-15));
        assert!(close(p.as_slice()[1], 1.0 / 3.0, 1e-15));
        let p = softmax(&[10.0, 0.0], 0.01).unwrap();
        assert!(p.as_slice()[0] > 1.0 - 1e-10);
        assert!(matches!(
            softmax(&[1.0], 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(matches!(
            softmax(&[1.0], -1.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        // overflow safety
        let p = softmax(&[1e308, 1e308], 1e-3).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn entropy_cases() {
        let onehot = ProbabilityVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(shannon_entropy(&onehot), 0.0);
        assert!(close(
            shannon_entropy(&ProbabilityVector::uniform(4)),
            4f64.ln(),
            1e-15
        ));
        let two = ProbabilityVector::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!(close(shannon_entropy(&two), 2f64.ln(), 1e-15));
    }

    #[test]
    fn kl_cases() {
        let p = ProbabilityVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let t = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        let q = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert!(close(kl_divergence(&t, &q).unwrap(), 2f64.ln(), 1e-15));
        let t = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        let q = ProbabilityVector::new(vec![0.75, 0.25]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!(close(expected, 0.143841, 1e-6));
        assert!(close(kl_divergence(&t, &q).unwrap(), expected, 1e-15));
        assert!(matches!(
            kl_divergence(&t, &ProbabilityVector::uniform(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn probability_vector_validation() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![]).is_err());
        assert_eq!(
            ProbabilityVector::new(vec![0.4, 0.4, 0.2])
                .unwrap()
                .argmax(),
            0
        );
    }

    fn table(data: Array2<f64>) -> EmbeddingTable {
        let labels = vec!["a".to_string(); data.nrows()];
        EmbeddingTable::with_generated_ids("r", labels, data).unwrap()
    }

    #[test]
    fn similarity_matrix_cases() {
        let eye = table(array![[1.0, 0.0], [0.0, 1.0]]);
        let s = similarity_matrix(&eye, &eye).unwrap();
        assert_eq!(s.entries(), &array![[1.0, 0.0], [0.0, 1.0]]);

        let x = table(array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0], [0.3, 0.3, -4.0]]);
        let s = similarity_matrix(&x, &x).unwrap();
        for i in 0..3 {
            assert!(close(s.get(i, i), 1.0, 1e-15));
        }

        let bad = table(array![[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(
            similarity_matrix(&eye, &bad),
            Err(Error::ZeroVector { row: Some(1) })
        ));
        assert!(matches!(
            similarity_matrix(&eye, &x),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn table_rejects_duplicates_and_bad_lengths() {
        let data = array![[1.0], [2.0]];
        let dup = EmbeddingTable::new(
            vec!["x".into(), "x".into()],
            vec!["a".into(), "b".into()],
            data.clone(),
        );
        assert!(dup.is_err());
        assert!(EmbeddingTable::new(vec!["x".into()], vec!["a".into()], data).is_err());
    }

    fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|w| {
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_on_diagonal(p in distribution(5), q in distribution(5)) {
            let p = ProbabilityVector::new(p).unwrap();
            let q = ProbabilityVector::new(q).unwrap();
            prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-10);
            prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-10);
        }

        #[test]
        fn softmax_shift_invariant(
            scores in prop::collection::vec(-5.0f64..5.0, 1..8),
            shift in -100.0f64..100.0,
            tau in 0.05f64..5.0,
        ) {
            let a = softmax(&scores, tau).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = softmax(&shifted, tau).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_argmax_independent_of_tau(
            scores in prop::collection::vec(-5.0f64..5.0, 2..8),
            t1 in 0.01f64..10.0,
            t2 in 0.01f64..10.0,
        ) {
            let raw = argmax(&scores);
            prop_assume!(scores.iter().enumerate().all(|(i, &s)| i == raw || s < scores[raw] - 1e-6));
            prop_assert_eq!(softmax(&scores, t1).unwrap().argmax(), raw);
            prop_assert_eq!(softmax(&scores, t2).unwrap().argmax(), raw);
        }

        #[test]
        fn cosine_scale_invariant(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
            let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
            let c = cosine_sim(&a, &b).unwrap();
            prop_assert!((c - cosine_sim(&sa, &sb).unwrap()).abs() <= 1e-9);
            prop_assert!(c.abs() <= 1.0 + 1e-9);
            prop_assert!((c - cosine_sim(&b, &a).unwrap()).abs() <= 1e-15);
        }

        #[test]
        fn entropy_bounded_by_uniform(p in distribution(6)) {
            let h = shannon_entropy(&ProbabilityVector::new(p).unwrap());
            prop_assert!(h >= 0.0);
            prop_assert!(h <= 6f64.ln() + 1e-12);
        }

        #[test]
        fn similarity_matrix_transpose(
            x in prop::collection::vec(0.1f64..2.0, 12),
            y in prop::collection::vec(-2.0f64..-0.1, 8),
        ) {
            let xt = table(Array2::from_shape_vec((3, 4), x).unwrap());
            let yt = table(Array2::from_shape_vec((2, 4), y).unwrap());
            let xy = similarity_matrix(&xt, &yt).unwrap();
            let yx = similarity_matrix(&yt, &xt).unwrap();
            prop_assert_eq!(xy.entries(), &yx.entries().t().to_owned());
        }
    }
}
