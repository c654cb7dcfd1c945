//! Model containers and the exact generative sampler.
//!
//! Observations are per-subject nonnegative matrices `X_l` (M features by
//! N_l frames). Each frame has a class label `y` in `1..=K`; the class
//! indicator activation is never materialized, the label vector stands in
//! for it. The exponential likelihood is parameterized by its MEAN:
//! `X_{lmn} ~ Exponential(mean = Lambda_{lmn})` with
//! `Lambda_{lmn} = (A_C)_{m, y_{ln}} + sum_j (A_I)_{lmj} (S_I)_{ljn}`.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Prior and structure hyperparameters.
///
/// All Gamma priors use shape = rate, so every latent entry has prior mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Common-basis Gamma shape = rate.
    pub a: f64,
    /// Individual-basis Gamma shape = rate.
    pub b: f64,
    /// Per-class activation shape = rate, indexed by class id - 1.
    pub c: Vec<f64>,
    /// Number of common bases = number of classes.
    pub k: usize,
    /// Number of individual bases per subject.
    pub j: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { a: 0.1, b: 0.1, c: vec![0.1; 3], k: 3, j: 1 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.j < 1 {
            return Err(Error::Config(format!("K and J must be >= 1, got K={}, J={}", self.k, self.j)));
        }
        if self.c.len() != self.k {
            return Err(Error::Config(format!(
                "c must have one entry per class: K={}, |c|={}",
                self.k,
                self.c.len()
            )));
        }
        let all_pos = self.a > 0.0
            && self.b > 0.0
            && self.c.iter().all(|&v| v > 0.0 && v.is_finite())
            && self.a.is_finite()
            && self.b.is_finite();
        if !all_pos {
            return Err(Error::Config("hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Per-subject feature matrices with optional frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    /// `X[l]` is M x N_l, entries >= 0 and finite.
    pub features: Vec<Array2<f64>>,
    /// `labels[l][n]` in `1..=K`; `None` for unlabeled (test) data.
    pub labels: Option<Vec<Vec<usize>>>,
}

/// Shape summary used by loaders and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub num_subjects: usize,
    pub num_features: usize,
    pub frames_per_subject: Vec<usize>,
    /// Per-class frame counts over all subjects; empty when unlabeled.
    pub class_histogram: Vec<usize>,
}

impl GroupedDataset {
    pub fn new(features: Vec<Array2<f64>>, labels: Option<Vec<Vec<usize>>>) -> Result<Self> {
        let ds = GroupedDataset { features, labels };
        ds.validate(None)?;
        Ok(ds)
    }

    pub fn num_subjects(&self) -> usize {
        self.features.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.first().map_or(0, |x| x.nrows())
    }

    pub fn frames(&self, subject: usize) -> usize {
        self.features[subject].ncols()
    }

    /// Checks nonnegativity, consistent feature count, and (when labeled and
    /// `num_classes` given) label range.
    pub fn validate(&self, num_classes: Option<usize>) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Data { path: "<dataset>".into(), message: "no subjects".into() });
        }
        let m = self.features[0].nrows();
        for (l, x) in self.features.iter().enumerate() {
            if x.nrows() != m {
                return Err(Error::DimensionMismatch {
                    context: "GroupedDataset",
                    expected: format!("{m} features (subject 1)"),
                    got: format!("{} features (subject {})", x.nrows(), l + 1),
                });
            }
            for ((i, n), &v) in x.indexed_iter() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data {
                        path: format!("subject {}", l + 1),
                        message: format!("feature ({}, {}) = {v} is negative or non-finite", i + 1, n + 1),
                    });
                }
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.features.len() {
                return Err(Error::DimensionMismatch {
                    context: "GroupedDataset labels",
                    expected: format!("{} subjects", self.features.len()),
                    got: format!("{} label vectors", labels.len()),
                });
            }
            for (l, (x, y)) in self.features.iter().zip(labels).enumerate() {
                if x.ncols() != y.len() {
                    return Err(Error::DimensionMismatch {
                        context: "GroupedDataset labels",
                        expected: format!("{} frames for subject {}", x.ncols(), l + 1),
                        got: format!("{} labels", y.len()),
                    });
                }
                if let Some(k) = num_classes {
                    for (n, &lab) in y.iter().enumerate() {
                        if lab < 1 || lab > k {
                            return Err(Error::InvalidLabel {
                                subject: l + 1,
                                frame: n + 1,
                                label: lab as i64,
                                num_classes: k,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self, num_classes: usize) -> DatasetSummary {
        let mut hist = vec![0usize; if self.labels.is_some() { num_classes } else { 0 }];
        if let Some(labels) = &self.labels {
            for y in labels {
                for &lab in y {
                    if lab >= 1 && lab <= num_classes {
                        hist[lab - 1] += 1;
                    }
                }
            }
        }
        DatasetSummary {
            num_subjects: self.num_subjects(),
            num_features: self.num_features(),
            frames_per_subject: self.features.iter().map(|x| x.ncols()).collect(),
            class_histogram: hist,
        }
    }
}

/// Ground-truth latent variables of the generative process.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// M x K common basis.
    pub a_c: Array2<f64>,
    /// Per-subject M x J individual bases.
    pub a_i: Vec<Array2<f64>>,
    /// Per-subject J x N_l activations.
    pub s_i: Vec<Array2<f64>>,
}

/// Exponential mean field `Lambda`, one M x N_l matrix per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct RateField {
    pub lambda: Vec<Array2<f64>>,
}

/// Mean parameter of the likelihood:
/// `Lambda_{lmn} = (A_C)_{m, y_{ln}} + sum_j (A_I)_{lmj} (S_I)_{ljn}`.
pub fn reconstruct(latent: &LatentState, labels: &[Vec<usize>]) -> Result<RateField> {
    let k = latent.a_c.ncols();
    let m = latent.a_c.nrows();
    if latent.a_i.len() != labels.len() || latent.s_i.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "reconstruct",
            expected: format!("{} subjects", labels.len()),
            got: format!("{} / {} latent blocks", latent.a_i.len(), latent.s_i.len()),
        });
    }
    let mut lambda = Vec::with_capacity(labels.len());
    for (l, y) in labels.iter().enumerate() {
        let a_i = &latent.a_i[l];
        let s_i = &latent.s_i[l];
        if a_i.nrows() != m || a_i.ncols() != s_i.nrows() || s_i.ncols() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "reconstruct",
                expected: format!("A_I {}x{}, S_I {}x{}", m, a_i.ncols(), a_i.ncols(), y.len()),
                got: format!(
                    "A_I {}x{}, S_I {}x{} (subject {})",
                    a_i.nrows(),
                    a_i.ncols(),
                    s_i.nrows(),
                    s_i.ncols(),
                    l + 1
                ),
            });
        }
        let mut lam = a_i.dot(s_i);
        for (n, &lab) in y.iter().enumerate() {
            if lab < 1 || lab > k {
                return Err(Error::InvalidLabel {
                    subject: l + 1,
                    frame: n + 1,
                    label: lab as i64,
                    num_classes: k,
                });
            }
            for i in 0..m {
                lam[[i, n]] += latent.a_c[[i, lab - 1]];
            }
        }
        lambda.push(lam);
    }
    Ok(RateField { lambda })
}

/// Draws a Gamma(shape, rate) variate, rejecting the measure-zero underflow
/// to exactly 0.0 so sampled latents are strictly positive.
fn draw_gamma<R: Rng>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    let dist = Gamma::new(shape, 1.0 / rate).expect("validated hyperparams");
    loop {
        let v = dist.sample(rng);
        if v > 0.0 && v.is_finite() {
            return v;
        }
    }
}

fn draw_exponential_mean<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    // inverse CDF on (0, 1); u = 0 excluded by construction of gen
    loop {
        let u: f64 = rng.gen::<f64>();
        let v = -mean * (1.0 - u).ln();
        if v > 0.0 && v.is_finite() {
            return v;
        }
    }
}

/// Samples a full dataset from the generative process. Deterministic per seed.
pub fn sample_dataset(
    h: &Hyperparams,
    labels: &[Vec<usize>],
    num_features: usize,
    seed: u64,
) -> Result<(GroupedDataset, LatentState)> {
    sample_dataset_with_basis(h, labels, num_features, seed, None)
}

/// Like [`sample_dataset`], but an externally fixed common basis can be
/// supplied (used to share ground truth across generated groups).
pub fn sample_dataset_with_basis(
    h: &Hyperparams,
    labels: &[Vec<usize>],
    num_features: usize,
    seed: u64,
    a_c: Option<Array2<f64>>,
) -> Result<(GroupedDataset, LatentState)> {
    h.validate()?;
    if labels.is_empty() || num_features == 0 {
        return Err(Error::Config("need at least one subject and one feature".into()));
    }
    for (l, y) in labels.iter().enumerate() {
        for (n, &lab) in y.iter().enumerate() {
            if lab < 1 || lab > h.k {
                return Err(Error::InvalidLabel {
                    subject: l + 1,
                    frame: n + 1,
                    label: lab as i64,
                    num_classes: h.k,
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = num_features;
    let a_c = match a_c {
        Some(b) => {
            if b.nrows() != m || b.ncols() != h.k {
                return Err(Error::DimensionMismatch {
                    context: "sample_dataset_with_basis",
                    expected: format!("{}x{} common basis", m, h.k),
                    got: format!("{}x{}", b.nrows(), b.ncols()),
                });
            }
            b
        }
        None => Array2::from_shape_fn((m, h.k), |_| draw_gamma(&mut rng, h.a, h.a)),
    };
    let mut a_i = Vec::with_capacity(labels.len());
    let mut s_i = Vec::with_capacity(labels.len());
    for y in labels {
        a_i.push(Array2::from_shape_fn((m, h.j), |_| draw_gamma(&mut rng, h.b, h.b)));
        let mut s = Array2::zeros((h.j, y.len()));
        for n in 0..y.len() {
            let c = h.c[y[n] - 1];
            for j in 0..h.j {
                s[[j, n]] = draw_gamma(&mut rng, c, c);
            }
        }
        s_i.push(s);
    }
    let latent = LatentState { a_c, a_i, s_i };
    let rates = reconstruct(&latent, labels)?;
    let features = rates
        .lambda
        .iter()
        .map(|lam| lam.map(|&mean| draw_exponential_mean(&mut rng, mean)))
        .collect();
    let ds = GroupedDataset { features, labels: Some(labels.to_vec()) };
    ds.validate(Some(h.k))?;
    Ok((ds, latent))
}
