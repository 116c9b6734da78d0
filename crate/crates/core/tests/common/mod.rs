//! Brute-force reference implementations on plain `Vec`s and the random
//! instances they are compared on.
#![allow(dead_code)]

use ndarray::Array2;
use pgfa::embedding::{similarity_matrix, EmbeddingTable};
use pgfa::metrics::silhouette_cosine;
use pgfa::prototype::{
    build_support_sets, classify_with_anchors, entropy_filter, weighted_prototypes, AnchorKind,
    AnchorSet,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const ORACLE_TOL: f64 = 1e-9;
pub const ORACLE_INSTANCES: u64 = 200;

pub mod oracle {
    pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let mut ab = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (aa.sqrt() * bb.sqrt())
    }

    pub fn unit(v: &[f64]) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    /// Cosine scores lie in [-1, 1], so no max shift is needed.
    pub fn softmax(scores: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|x| x / z).collect()
    }

    pub fn first_argmax(p: &[f64]) -> usize {
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        best
    }

    pub fn entropy(p: &[f64]) -> f64 {
        -p.iter()
            .filter(|&&x| x > 0.0)
            .map(|x| x * x.ln())
            .sum::<f64>()
    }

    pub struct Classified {
        pub labels: Vec<usize>,
        pub probs: Vec<Vec<f64>>,
        pub entropies: Vec<f64>,
    }

    pub fn classify(features: &[Vec<f64>], anchors: &[Vec<f64>]) -> Classified {
        let probs: Vec<Vec<f64>> = features
            .iter()
            .map(|v| softmax(&anchors.iter().map(|a| cosine(v, a)).collect::<Vec<_>>()))
            .collect();
        Classified {
            labels: probs.iter().map(|p| first_argmax(p)).collect(),
            entropies: probs.iter().map(|p| entropy(p)).collect(),
            probs,
        }
    }

    /// Rows kept per class, ascending. A member is kept iff fewer than
    /// `floor(alpha * |S|)` members precede it in (entropy, row) order.
    pub fn entropy_filter(
        labels: &[usize],
        entropies: &[f64],
        k: usize,
        alpha: f64,
    ) -> Vec<Vec<usize>> {
        (0..k)
            .map(|c| {
                let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                let n = members.len();
                let keep = (0..=n)
                    .filter(|&r| r as f64 <= alpha * n as f64 + 1e-9)
                    .max()
                    .unwrap();
                members
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let ahead = members
                            .iter()
                            .filter(|&&j| {
                                entropies[j] < entropies[i]
                                    || (entropies[j] == entropies[i] && j < i)
                            })
                            .count();
                        ahead < keep
                    })
                    .collect()
            })
            .collect()
    }

    pub fn weighted_prototypes(
        features: &[Vec<f64>],
        probs: &[Vec<f64>],
        k: usize,
    ) -> Vec<Vec<f64>> {
        let d = features[0].len();
        (0..k)
            .map(|c| {
                let mut num = vec![0.0; d];
                let mut den = 0.0;
                for (v, p) in features.iter().zip(probs) {
                    let z = unit(v);
                    for j in 0..d {
                        num[j] += p[c] * z[j];
                    }
                    den += p[c];
                }
                num.iter().map(|x| x / den).collect()
            })
            .collect()
    }

    pub fn silhouette(features: &[Vec<f64>], labels: &[String]) -> f64 {
        let n = features.len();
        let dist = |i: usize, j: usize| 1.0 - cosine(&features[i], &features[j]);
        let mut distinct: Vec<&String> = Vec::new();
        for l in labels {
            if !distinct.contains(&l) {
                distinct.push(l);
            }
        }
        let mut total = 0.0;
        for i in 0..n {
            let same: Vec<usize> = (0..n)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| dist(i, j)).sum::<f64>() / same.len() as f64;
            let mut b = f64::INFINITY;
            for other in distinct.iter().filter(|l| ***l != labels[i]) {
                let m: Vec<usize> = (0..n).filter(|&j| &labels[j] == *other).collect();
                b = b.min(m.iter().map(|&j| dist(i, j)).sum::<f64>() / m.len() as f64);
            }
            let s = if a.max(b) > 0.0 {
                (b - a) / a.max(b)
            } else {
                0.0
            };
            total += s;
        }
        total / n as f64
    }

    pub fn similarity(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|a| y.iter().map(|b| cosine(a, b)).collect())
            .collect()
    }
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_vector(d: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-4 {
            return v;
        }
    }
}

/// Random rows, some repeated verbatim so that entropies tie.
pub fn random_rows(n: usize, d: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        if !rows.is_empty() && rng.random_bool(0.2) {
            let j = rng.random_range(0..rows.len());
            rows.push(rows[j].clone());
        } else {
            rows.push(random_vector(d, rng));
        }
    }
    rows
}

pub fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows[0].len();
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

pub fn table(rows: &[Vec<f64>], labels: Vec<String>) -> EmbeddingTable {
    EmbeddingTable::with_generated_ids("r", labels, to_array(rows)).unwrap()
}

pub fn anchor_set(rows: &[Vec<f64>]) -> AnchorSet {
    let classes = (0..rows.len()).map(|k| format!("k{k}")).collect();
    AnchorSet::new(classes, to_array(rows), AnchorKind::Text).unwrap()
}

pub struct Instance {
    pub features: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<f64>>,
}

pub fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let d = r.random_range(2..=6);
    let n = r.random_range(1..=30);
    let k = r.random_range(2..=5);
    Instance {
        features: random_rows(n, d, &mut r),
        anchors: random_rows(k, d, &mut r),
    }
}

fn close(a: f64, b: f64, what: &str) -> Result<(), String> {
    if (a - b).abs() <= ORACLE_TOL {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs oracle {b}"))
    }
}

fn unlabeled(rows: &[Vec<f64>]) -> EmbeddingTable {
    table(rows, vec!["u".to_string(); rows.len()])
}

pub fn check_classify(seed: u64) -> Result<(), String> {
    let inst = instance(seed);
    let got = classify_with_anchors(&unlabeled(&inst.features), &anchor_set(&inst.anchors))
        .map_err(|e| e.to_string())?;
    let want = oracle::classify(&inst.features, &inst.anchors);
    if got.pseudo_labels != want.labels {
        return Err(format!(
            "labels {:?} vs oracle {:?}",
            got.pseudo_labels, want.labels
        ));
    }
    for i in 0..want.labels.len() {
        close(got.entropies[i], want.entropies[i], "entropy")?;
        for (a, b) in got.probs[i].as_slice().iter().zip(&want.probs[i]) {
            close(*a, *b, "probability")?;
        }
    }
    Ok(())
}

pub fn check_entropy_filter(seed: u64) -> Result<(), String> {
    let inst = instance(seed);
    let alpha = match seed % 4 {
        0 => rng(seed ^ 0xa1fa).random_range(0.0..=1.0),
        1 => [0.0, 0.25, 0.5, 0.75, 1.0][(seed / 4 % 5) as usize],
        _ => (seed % 11) as f64 / 10.0,
    };
    let anchors = anchor_set(&inst.anchors);
    let pl =
        classify_with_anchors(&unlabeled(&inst.features), &anchors).map_err(|e| e.to_string())?;
    let support = build_support_sets(&pl).map_err(|e| e.to_string())?;
    let filtered = entropy_filter(&support, alpha).map_err(|e| e.to_string())?;
    let want = oracle::classify(&inst.features, &inst.anchors);
    let kept = oracle::entropy_filter(&want.labels, &want.entropies, inst.anchors.len(), alpha);
    for (c, rows) in kept.iter().enumerate() {
        if &filtered.rows(c) != rows {
            return Err(format!(
                "class {c} alpha {alpha}: {:?} vs oracle {rows:?}",
                filtered.rows(c)
            ));
        }
        for m in &filtered.members[c] {
            for (a, b) in m.feature.iter().zip(oracle::unit(&inst.features[m.row])) {
                close(*a, b, "normalized member")?;
            }
        }
    }
    Ok(())
}

pub fn check_weighted_prototypes(seed: u64) -> Result<(), String> {
    let inst = instance(seed);
    let pl = classify_with_anchors(&unlabeled(&inst.features), &anchor_set(&inst.anchors))
        .map_err(|e| e.to_string())?;
    let got = weighted_prototypes(&pl).map_err(|e| e.to_string())?;
    let want = oracle::classify(&inst.features, &inst.anchors);
    let protos = oracle::weighted_prototypes(&inst.features, &want.probs, inst.anchors.len());
    for (k, p) in protos.iter().enumerate() {
        for (a, b) in got.anchor(k).iter().zip(p) {
            close(*a, *b, "weighted prototype")?;
        }
    }
    Ok(())
}

pub fn check_silhouette(seed: u64) -> Result<(), String> {
    let mut r = rng(seed ^ 0x5115);
    let d = r.random_range(2..=6);
    let n = r.random_range(2..=30);
    let k = r.random_range(2..=n.min(5));
    let rows = random_rows(n, d, &mut r);
    // First k rows cover every cluster; the rest are random, so singletons occur.
    let labels: Vec<String> = (0..n)
        .map(|i| format!("c{}", if i < k { i } else { r.random_range(0..k) }))
        .collect();
    let got = silhouette_cosine(&table(&rows, labels.clone())).map_err(|e| e.to_string())?;
    close(got, oracle::silhouette(&rows, &labels), "silhouette")
}

pub fn check_similarity_matrix(seed: u64) -> Result<(), String> {
    let mut r = rng(seed ^ 0x51a1);
    let d = r.random_range(1..=6);
    let x = random_rows(r.random_range(1..=12), d, &mut r);
    let y = random_rows(r.random_range(1..=12), d, &mut r);
    let got = similarity_matrix(&unlabeled(&x), &unlabeled(&y)).map_err(|e| e.to_string())?;
    let want = oracle::similarity(&x, &y);
    if got.shape() != (x.len(), y.len()) {
        return Err(format!("shape {:?}", got.shape()));
    }
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            close(got.get(i, j), w, "similarity")?;
        }
    }
    Ok(())
}

pub type Check = fn(u64) -> Result<(), String>;

pub const ORACLE_CHECKS: [(&str, Check); 5] = [
    ("classify_with_anchors", check_classify),
    ("entropy_filter", check_entropy_filter),
    ("weighted_prototypes", check_weighted_prototypes),
    ("silhouette_cosine", check_silhouette),
    ("similarity_matrix", check_similarity_matrix),
];

/// Runs one check over every instance; returns the first failure.
pub fn run_oracle(check: Check) -> Result<u64, String> {
    for seed in 0..ORACLE_INSTANCES {
        check(seed).map_err(|e| format!("instance {seed}: {e}"))?;
    }
    Ok(ORACLE_INSTANCES)
}

/// Every file under `root`, as sorted `(relative path, bytes)`.
pub fn read_tree(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &std::path::Path, root: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
