//! Von Mises-Fisher sampling and Monte-Carlo checks on the unit hypersphere.
//!
//! [`Vmf`] draws samples with Wood's rejection scheme: the cosine `w` to the
//! mean direction is drawn from a Beta-based envelope and accepted against
//! the exact marginal, then combined with a uniform tangent direction as
//! `w * mu + sqrt(1 - w^2) * v_perp`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::Serialize;

use crate::embedding::{argmax, dot, l2_norm, l2_normalize, EmbeddingTable};
use crate::error::{Error, Result};
use crate::prototype::{AnchorKind, AnchorSet};
use crate::rng::{self, stream_id};

const BESSEL_TOL: f64 = 1e-12;
const BESSEL_MAX_TERMS: usize = 10_000_000;
const SMALL_KAPPA: f64 = 1e-6;

/// Mean direction (unit norm) and concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mu: Vec<f64>,
    kappa: f64,
}

impl VmfParams {
    /// `mu` is normalized on construction.
    pub fn new(mu: &[f64], kappa: f64) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::BadDimension(mu.len()));
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kappa must be finite and >= 0, got {kappa}"
            )));
        }
        Ok(Self {
            mu: l2_normalize(mu)?,
            kappa,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// The vMF distribution with precomputed envelope constants.
#[derive(Debug, Clone)]
pub struct Vmf {
    params: VmfParams,
    b: f64,
    x0: f64,
    c: f64,
    envelope: Beta<f64>,
}

impl Vmf {
    pub fn new(params: VmfParams) -> Result<Self> {
        let m1 = (params.dim() - 1) as f64;
        let kappa = params.kappa;
        // (-2k + sqrt(4k^2 + m1^2)) / m1 without the cancellation
        let b = m1 / (2.0 * kappa + (4.0 * kappa * kappa + m1 * m1).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + m1 * (1.0 - x0 * x0).ln();
        let envelope =
            Beta::new(m1 / 2.0, m1 / 2.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self {
            params,
            b,
            x0,
            c,
            envelope,
        })
    }

    pub fn params(&self) -> &VmfParams {
        &self.params
    }

    fn sample_cosine<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let m1 = (self.params.dim() - 1) as f64;
        loop {
            let z: f64 = self.envelope.sample(rng);
            let w = (1.0 - (1.0 + self.b) * z) / (1.0 - (1.0 - self.b) * z);
            let u: f64 = rng.random();
            if self.params.kappa * w + m1 * (1.0 - self.x0 * w).ln() - self.c >= u.ln() {
                return w;
            }
        }
    }
}

/// Uniform direction orthogonal to the unit vector `mu`.
fn orthogonal_direction<R: Rng + ?Sized>(mu: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&g, mu);
        g.iter_mut().zip(mu).for_each(|(x, m)| *x -= along * m);
        if let Ok(unit) = l2_normalize(&g) {
            return unit;
        }
    }
}

/// Uniform direction on the sphere in `d` dimensions.
pub fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(unit) = l2_normalize(&g) {
            return unit;
        }
    }
}

impl Distribution<Vec<f64>> for Vmf {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mu = &self.params.mu;
        let w = self.sample_cosine(rng);
        let perp = orthogonal_direction(mu, rng);
        let t = (1.0 - w * w).max(0.0).sqrt();
        let x: Vec<f64> = mu.iter().zip(&perp).map(|(m, p)| w * m + t * p).collect();
        let n = l2_norm(&x);
        x.into_iter().map(|v| v / n).collect()
    }
}

fn sample_rows<R: Rng + ?Sized>(vmf: &Vmf, n: usize, rng: &mut R) -> Array2<f64> {
    let d = vmf.params.dim();
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        row.assign(&Array1::from(vmf.sample(rng)));
    }
    out
}

/// `n` i.i.d. unit rows from `vMF(mu, kappa)`, labeled `"vmf"`.
pub fn sample_vmf(params: &VmfParams, n: usize, seed: u64) -> Result<EmbeddingTable> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let vmf = Vmf::new(params.clone())?;
    let mut rng = rng::stream(seed, stream_id(3, 0, 0));
    let rows = sample_rows(&vmf, n, &mut rng);
    EmbeddingTable::with_generated_ids("s", vec!["vmf".to_string(); n], rows)
}

/// Mean resultant length of a vMF sample: `I_{d/2}(kappa) / I_{d/2-1}(kappa)`.
///
/// Evaluated as a continued fraction with modified Lentz iteration; a first
/// order series is used below `kappa = 1e-6`.
pub fn a_d(kappa: f64, d: usize) -> f64 {
    assert!(d >= 2, "a_d needs d >= 2");
    assert!(kappa >= 0.0, "a_d needs kappa >= 0");
    let d = d as f64;
    if kappa < SMALL_KAPPA {
        return kappa / d;
    }
    let nu = d / 2.0;
    // I_nu / I_{nu-1} = 1 / (b_1 + 1 / (b_2 + ...)),  b_j = 2 (nu + j - 1) / kappa
    let term = |j: usize| 2.0 * (nu + (j - 1) as f64) / kappa;
    let tiny = 1e-300;
    let mut f = term(1);
    let (mut c, mut dd) = (f, 0.0);
    for j in 2..BESSEL_MAX_TERMS {
        let b = term(j);
        dd += b;
        if dd.abs() < tiny {
            dd = tiny;
        }
        dd = 1.0 / dd;
        c = b + 1.0 / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * dd;
        f *= delta;
        if (delta - 1.0).abs() < BESSEL_TOL {
            break;
        }
    }
    1.0 / f
}

/// Rotates the unit vector `mu` by `angle` toward a random orthogonal direction.
pub fn rotate_toward_random<R: Rng + ?Sized>(mu: &[f64], angle: f64, rng: &mut R) -> Vec<f64> {
    let u = orthogonal_direction(mu, rng);
    mu.iter()
        .zip(&u)
        .map(|(m, p)| angle.cos() * m + angle.sin() * p)
        .collect()
}

#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub components: Vec<(String, VmfParams)>,
    pub samples_per_class: usize,
    /// Angle in radians between each mean and its fabricated text anchor.
    pub anchor_bias_angle: f64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.components.len() < 2 {
            return Err(Error::InvalidConfig(
                "mixture needs at least two classes".into(),
            ));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig(
                "samples per class must be >= 1".into(),
            ));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.anchor_bias_angle) {
            return Err(Error::InvalidConfig(format!(
                "bias angle must lie in [0, pi], got {}",
                self.anchor_bias_angle
            )));
        }
        let d = self.components[0].1.dim();
        if let Some((_, p)) = self.components.iter().find(|(_, p)| p.dim() != d) {
            return Err(Error::DimensionMismatch {
                context: "mixture component",
                expected: d,
                found: p.dim(),
            });
        }
        Ok(())
    }

    /// `classes` components sharing one `kappa`, with means spread at angle
    /// `spread` around a common random center. Classes are named `c0, c1, ...`.
    pub fn clustered(
        dim: usize,
        classes: usize,
        kappa: f64,
        spread: f64,
        samples_per_class: usize,
        anchor_bias_angle: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::BadDimension(dim));
        }
        let mut rng = rng::stream(seed, stream_id(8, 0, 0));
        let center = random_unit(dim, &mut rng);
        let components = (0..classes)
            .map(|k| {
                let mu = rotate_toward_random(&center, spread, &mut rng);
                Ok((format!("c{k}"), VmfParams::new(&mu, kappa)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            samples_per_class,
            anchor_bias_angle,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub data: EmbeddingTable,
    pub true_anchors: AnchorSet,
    pub biased_anchors: AnchorSet,
}

/// Labeled samples of every component (class-major order) plus the true
/// means and the rotated, biased anchors.
pub fn make_mixture(spec: &MixtureSpec, seed: u64) -> Result<Mixture> {
    spec.validate()?;
    let d = spec.components[0].1.dim();
    let n = spec.samples_per_class;
    let k = spec.components.len();
    let mut rows = Array2::zeros((k * n, d));
    let mut ids = Vec::with_capacity(k * n);
    let mut labels = Vec::with_capacity(k * n);
    let mut means = Array2::zeros((k, d));
    let mut biased = Array2::zeros((k, d));
    for (c, (name, params)) in spec.components.iter().enumerate() {
        let vmf = Vmf::new(params.clone())?;
        let mut sample_rng = rng::stream(seed, stream_id(6, c as u64, 0));
        let block = sample_rows(&vmf, n, &mut sample_rng);
        rows.slice_mut(ndarray::s![c * n..(c + 1) * n, ..])
            .assign(&block);
        ids.extend((0..n).map(|i| format!("{name}_{i}")));
        labels.extend(std::iter::repeat_n(name.clone(), n));
        means.row_mut(c).assign(&Array1::from(params.mu.clone()));
        let anchor = if spec.anchor_bias_angle == 0.0 {
            params.mu.clone()
        } else {
            let mut bias_rng = rng::stream(seed, stream_id(7, c as u64, 0));
            rotate_toward_random(&params.mu, spec.anchor_bias_angle, &mut bias_rng)
        };
        biased.row_mut(c).assign(&Array1::from(anchor));
    }
    let classes: Vec<String> = spec.components.iter().map(|(n, _)| n.clone()).collect();
    Ok(Mixture {
        data: EmbeddingTable::new(ids, labels, rows)?,
        true_anchors: AnchorSet::new(classes.clone(), means, AnchorKind::Text)?,
        biased_anchors: AnchorSet::new(classes, biased, AnchorKind::Text)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremConfig {
    pub dim: usize,
    pub classes: usize,
    pub kappa: f64,
    pub n_list: Vec<usize>,
    pub trials: usize,
    /// Fresh evaluation samples per class and trial.
    pub held_out_per_class: usize,
    pub seed: u64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            classes: 5,
            kappa: 20.0,
            n_list: vec![10, 100, 1_000, 10_000],
            trials: 20,
            held_out_per_class: 1_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremRow {
    pub n: usize,
    pub trial: usize,
    /// Fraction of held-out samples where the prototype argmax equals the
    /// true-mean argmax.
    pub agreement: f64,
    /// Mean over classes of the norm of the sample mean.
    pub mean_resultant_length: f64,
    pub a_d_reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub config: TheoremConfig,
    pub rows: Vec<TheoremRow>,
    pub a_d_reference: f64,
}

impl TheoremReport {
    fn mean_over_trials(&self, n: usize, field: impl Fn(&TheoremRow) -> f64) -> f64 {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.n == n).map(field).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// `(n, mean agreement)` in the configured order of `n`.
    pub fn mean_agreement(&self) -> Vec<(usize, f64)> {
        self.config
            .n_list
            .iter()
            .map(|&n| (n, self.mean_over_trials(n, |r| r.agreement)))
            .collect()
    }

    pub fn mean_resultant_length(&self, n: usize) -> f64 {
        self.mean_over_trials(n, |r| r.mean_resultant_length)
    }
}

fn argmax_dot(v: &[f64], directions: &[Vec<f64>]) -> usize {
    let scores: Vec<f64> = directions.iter().map(|m| dot(v, m)).collect();
    argmax(&scores)
}

/// Monte-Carlo check that nearest-prototype classification converges to the
/// equal-`kappa` Bayes rule `argmax_k mu_k . v` as prototypes use more samples.
pub fn verify_theorem1(config: &TheoremConfig) -> Result<TheoremReport> {
    let TheoremConfig {
        dim,
        classes,
        kappa,
        ref n_list,
        trials,
        held_out_per_class,
        seed,
    } = *config;
    if dim < 2 {
        return Err(Error::BadDimension(dim));
    }
    if classes < 2 {
        return Err(Error::InvalidConfig("need at least two classes".into()));
    }
    if kappa.is_nan() || kappa <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    if n_list.is_empty() || n_list.contains(&0) || trials == 0 || held_out_per_class == 0 {
        return Err(Error::InvalidConfig(
            "sample counts and trials must be >= 1".into(),
        ));
    }
    let reference = a_d(kappa, dim);
    let mut rows = Vec::with_capacity(trials * n_list.len());
    for trial in 0..trials {
        let t = trial as u64;
        let mut mean_rng = rng::stream(seed, stream_id(9, t, 0));
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| random_unit(dim, &mut mean_rng))
            .collect();
        let dists = means
            .iter()
            .map(|m| VmfParams::new(m, kappa).and_then(Vmf::new))
            .collect::<Result<Vec<_>>>()?;

        let held_out: Vec<Vec<f64>> = dists
            .iter()
            .enumerate()
            .flat_map(|(c, vmf)| {
                let mut r = rng::stream(seed, stream_id(10, t, c as u64));
                (0..held_out_per_class)
                    .map(move |_| vmf.sample(&mut r))
                    .collect::<Vec<_>>()
            })
            .collect();
        let bayes: Vec<usize> = held_out.iter().map(|v| argmax_dot(v, &means)).collect();

        for (ni, &n) in n_list.iter().enumerate() {
            let mut prototypes = Vec::with_capacity(classes);
            let mut resultant = 0.0;
            for (c, vmf) in dists.iter().enumerate() {
                let mut r = rng::stream(seed, stream_id(11, t, (ni * 4096 + c) as u64));
                let mut sum = vec![0.0; dim];
                for _ in 0..n {
                    let v = vmf.sample(&mut r);
                    sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
                resultant += l2_norm(&mean);
                prototypes.push(l2_normalize(&mean)?);
            }
            let agree = held_out
                .iter()
                .zip(&bayes)
                .filter(|(v, &b)| argmax_dot(v, &prototypes) == b)
                .count();
            rows.push(TheoremRow {
                n,
                trial,
                agreement: agree as f64 / held_out.len() as f64,
                mean_resultant_length: resultant / classes as f64,
                a_d_reference: reference,
            });
        }
    }
    Ok(TheoremReport {
        config: config.clone(),
        rows,
        a_d_reference: reference,
    })
}
