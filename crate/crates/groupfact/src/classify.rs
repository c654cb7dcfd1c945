//! Label prediction from the learned common basis, accuracy metrics, and the
//! training-size sensitivity harness.
//!
//! A test frame is compared against each column of the posterior-mean common
//! basis; the default rule picks the nearest column in squared Euclidean
//! distance. The farthest-column variant (argmax of the same distances) is
//! kept behind a flag for comparison runs, and a scaled rule first fits a
//! nonnegative per-frame gain onto each column before measuring distance.
//! Splits for the sensitivity harness are contiguous in time: EEG frames are
//! autocorrelated, so shuffled splits would leak.

use crate::error::{Error, Result};
use crate::inference::{fit, FitOptions, Posterior};
use crate::model::{GroupedDataset, Hyperparams};
use ndarray::Array2;
use serde::Serialize;

/// How a frame's distance scores turn into a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    /// argmin_k ||x - E[A_C]_k||^2 (default).
    NearestBasis,
    /// argmax of the same distances.
    FarthestBasis,
    /// argmin_k ||x - alpha_k E[A_C]_k||^2 with
    /// alpha_k = max(0, <x, a_k> / <a_k, a_k>).
    ScaledNearestBasis,
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::NearestBasis
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmin" | "nearest-basis" => Ok(DecisionRule::NearestBasis),
            "argmax" | "farthest-basis" => Ok(DecisionRule::FarthestBasis),
            "scaled" | "scaled-nearest-basis" => Ok(DecisionRule::ScaledNearestBasis),
            other => Err(Error::Config(format!(
                "unknown decision rule {other:?} (expected argmin, argmax, or scaled)"
            ))),
        }
    }
}

/// Predicted labels plus the full distance table behind each decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per-subject label vectors, entries in 1..=K.
    pub labels: Vec<Vec<usize>>,
    /// Per-subject (N_l, K) squared distances d_k.
    pub scores: Vec<Array2<f64>>,
}

/// Accuracy metrics for one prediction run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_subject_accuracy: Vec<f64>,
    /// Frame-weighted accuracy over all subjects.
    pub pooled_accuracy: f64,
    /// confusion[truth - 1][pred - 1] counts.
    pub confusion: Vec<Vec<usize>>,
    pub total_frames: usize,
}

/// One row of the training-size sensitivity table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurvePoint {
    pub fraction: f64,
    pub per_subject_accuracy: Vec<f64>,
    pub pooled_accuracy: f64,
}

fn squared_distance(
    x: ndarray::ArrayView1<f64>,
    basis: ndarray::ArrayView1<f64>,
    rule: DecisionRule,
) -> f64 {
    let alpha = match rule {
        DecisionRule::ScaledNearestBasis => {
            let num: f64 = x.iter().zip(basis).map(|(a, b)| a * b).sum();
            let den: f64 = basis.iter().map(|b| b * b).sum();
            if den > 0.0 {
                (num / den).max(0.0)
            } else {
                0.0
            }
        }
        _ => 1.0,
    };
    x.iter().zip(basis).map(|(a, b)| (a - alpha * b) * (a - alpha * b)).sum()
}

/// Classifies every frame against the columns of `basis` (M x K).
/// Pure in (features, basis, rule); ties go to the smallest class id.
pub fn predict_with_basis(
    x_test: &GroupedDataset,
    basis: &Array2<f64>,
    rule: DecisionRule,
) -> Result<Prediction> {
    x_test.validate(None)?;
    let m = basis.nrows();
    let k = basis.ncols();
    if x_test.num_features() != m {
        return Err(Error::DimensionMismatch {
            context: "predict",
            expected: format!("{m} features (posterior)"),
            got: format!("{} features (test set)", x_test.num_features()),
        });
    }
    let mut labels = Vec::with_capacity(x_test.num_subjects());
    let mut scores = Vec::with_capacity(x_test.num_subjects());
    for x in &x_test.features {
        let n_l = x.ncols();
        let mut d = Array2::zeros((n_l, k));
        let mut y = Vec::with_capacity(n_l);
        for n in 0..n_l {
            let frame = x.column(n);
            for kk in 0..k {
                d[[n, kk]] = squared_distance(frame, basis.column(kk), rule);
            }
            let mut best = 0usize;
            for kk in 1..k {
                let better = match rule {
                    DecisionRule::FarthestBasis => d[[n, kk]] > d[[n, best]],
                    _ => d[[n, kk]] < d[[n, best]],
                };
                if better {
                    best = kk;
                }
            }
            y.push(best + 1);
        }
        labels.push(y);
        scores.push(d);
    }
    Ok(Prediction { labels, scores })
}

/// Classifies against the posterior-mean common basis E[A_C].
pub fn predict(x_test: &GroupedDataset, post: &Posterior, rule: DecisionRule) -> Result<Prediction> {
    predict_with_basis(x_test, &post.mean_common_basis(), rule)
}

/// Exact accuracy counts against ground-truth labels.
pub fn evaluate(pred: &Prediction, truth: &[Vec<usize>]) -> Result<EvalReport> {
    if pred.labels.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate",
            expected: format!("{} subjects (prediction)", pred.labels.len()),
            got: format!("{} label vectors", truth.len()),
        });
    }
    let k = pred.scores.first().map_or(0, |s| s.ncols());
    let mut confusion = vec![vec![0usize; k]; k];
    let mut per_subject = Vec::with_capacity(truth.len());
    let mut hits = 0usize;
    let mut total = 0usize;
    for (l, (p, t)) in pred.labels.iter().zip(truth).enumerate() {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch {
                context: "evaluate",
                expected: format!("{} frames for subject {}", p.len(), l + 1),
                got: format!("{} truth labels", t.len()),
            });
        }
        let mut sub_hits = 0usize;
        for (n, (&pi, &ti)) in p.iter().zip(t).enumerate() {
            if ti < 1 || ti > k {
                return Err(Error::InvalidLabel {
                    subject: l + 1,
                    frame: n + 1,
                    label: ti as i64,
                    num_classes: k,
                });
            }
            confusion[ti - 1][pi - 1] += 1;
            if pi == ti {
                sub_hits += 1;
            }
        }
        per_subject.push(if p.is_empty() { 0.0 } else { sub_hits as f64 / p.len() as f64 });
        hits += sub_hits;
        total += p.len();
    }
    Ok(EvalReport {
        per_subject_accuracy: per_subject,
        pooled_accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        confusion,
        total_frames: total,
    })
}

fn check_class_coverage(labels: &[Vec<usize>], k: usize, what: &str) -> Result<()> {
    for (l, y) in labels.iter().enumerate() {
        for class in 1..=k {
            if !y.iter().any(|&v| v == class) {
                log::error!("{what}: subject {} has no frames of class {class}", l + 1);
                return Err(Error::EmptyClass { subject: l + 1, class });
            }
        }
    }
    Ok(())
}

fn subset(data: &GroupedDataset, range: impl Fn(usize) -> std::ops::Range<usize>) -> GroupedDataset {
    let labels = data.labels.as_ref().expect("labeled dataset");
    let mut features = Vec::with_capacity(data.num_subjects());
    let mut labs = Vec::with_capacity(data.num_subjects());
    for (l, x) in data.features.iter().enumerate() {
        let r = range(l);
        features.push(x.slice(ndarray::s![.., r.clone()]).to_owned());
        labs.push(labels[l][r].to_vec());
    }
    GroupedDataset { features, labels: Some(labs) }
}

/// Accuracy as a function of training-set size.
///
/// The last `ceil(test_fraction * N_l)` frames of every subject form a fixed
/// held-out suffix. For each fraction f the model is fit on the first
/// `ceil(f * train_l)` frames of the remaining prefix (temporal order kept)
/// and evaluated on the suffix. Fractions must be ascending and in (0, 1];
/// every training prefix must contain all K classes for every subject.
pub fn learning_curve(
    data: &GroupedDataset,
    h: &Hyperparams,
    opts: &FitOptions,
    fractions: &[f64],
    test_fraction: f64,
    rule: DecisionRule,
) -> Result<Vec<LearningCurvePoint>> {
    h.validate()?;
    opts.validate()?;
    data.validate(Some(h.k))?;
    if data.labels.is_none() {
        return Err(Error::Config("learning_curve requires labeled data".into()));
    }
    if fractions.is_empty() {
        return Err(Error::Config("need at least one training fraction".into()));
    }
    for pair in fractions.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config("fractions must be strictly ascending".into()));
        }
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::Config("fractions must lie in (0, 1]".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
    }
    let train_len: Vec<usize> = data
        .features
        .iter()
        .map(|x| {
            let n = x.ncols();
            n - ((n as f64 * test_fraction).ceil() as usize).min(n - 1)
        })
        .collect();
    let test = subset(data, |l| train_len[l]..data.features[l].ncols());
    check_class_coverage(test.labels.as_ref().unwrap(), h.k, "held-out suffix")?;

    let mut out = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let train = subset(data, |l| {
            let used = ((f * train_len[l] as f64).ceil() as usize).clamp(1, train_len[l]);
            0..used
        });
        check_class_coverage(
            train.labels.as_ref().unwrap(),
            h.k,
            &format!("training prefix (fraction {f})"),
        )?;
        let fitted = fit(&train, h, opts)?;
        let pred = predict(&test, &fitted.posterior, rule)?;
        let report = evaluate(&pred, test.labels.as_ref().unwrap())?;
        out.push(LearningCurvePoint {
            fraction: f,
            per_subject_accuracy: report.per_subject_accuracy,
            pooled_accuracy: report.pooled_accuracy,
        });
    }
    Ok(out)
}

/// CSV table for [`learning_curve`] output: one row per (fraction, subject)
/// plus a pooled row per fraction.
pub fn write_learning_curve_csv<W: std::io::Write>(
    points: &[LearningCurvePoint],
    mut out: W,
) -> Result<()> {
    let werr = |e| Error::io("<learning-curve csv>", e);
    writeln!(out, "fraction,subject,accuracy").map_err(werr)?;
    for p in points {
        for (l, acc) in p.per_subject_accuracy.iter().enumerate() {
            writeln!(out, "{},{},{}", p.fraction, l + 1, acc).map_err(werr)?;
        }
        writeln!(out, "{},pooled,{}", p.fraction, p.pooled_accuracy).map_err(werr)?;
    }
    Ok(())
}
