//! 1-nearest-neighbor evaluation on selected features.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DiscreteDataset;
use crate::error::{Error, Result};
use crate::tensor::FeatureSubset;

/// Distance between coded rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Number of differing codes.
    #[default]
    Hamming,
    /// Sum of absolute code differences; meaningful for ordered bin indices.
    Manhattan,
}

impl Metric {
    #[inline]
    fn distance(self, a: &[usize], b: &[usize], subset: &[usize]) -> usize {
        match self {
            Metric::Hamming => subset.iter().filter(|&&k| a[k] != b[k]).count(),
            Metric::Manhattan => subset.iter().map(|&k| a[k].abs_diff(b[k])).sum(),
        }
    }
}

/// Predict each test label from its nearest training row over `subset`.
/// Distance ties go to the smallest training-row index.
pub fn knn_classify(
    train: &DiscreteDataset,
    test: &DiscreteDataset,
    subset: &FeatureSubset,
    metric: Metric,
) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(Error::arg("1-NN needs a nonempty feature subset"));
    }
    if train.num_samples() == 0 {
        return Err(Error::arg("1-NN needs at least one training row"));
    }
    if train.feature_cardinalities() != test.feature_cardinalities() {
        return Err(Error::arg("train and test cardinalities differ"));
    }
    if let Some(&k) = subset.indices().iter().find(|&&k| k >= train.num_features()) {
        return Err(Error::arg(format!("feature {k} out of range")));
    }
    let idx = subset.indices();
    Ok(test
        .rows()
        .par_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_d = usize::MAX;
            for (i, cand) in train.rows().iter().enumerate() {
                let d = metric.distance(row, cand, idx);
                if d < best_d {
                    best_d = d;
                    best = i;
                    if d == 0 {
                        break;
                    }
                }
            }
            train.labels()[best]
        })
        .collect())
}

/// Fraction of exact matches.
pub fn accuracy(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} predictions, {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::arg("accuracy of an empty prediction set"));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// One point on an accuracy-versus-K curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub mean_accuracy: f64,
    pub std: f64,
}

/// Mean accuracy by number of selected features, with the random-subset control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub points: Vec<CurvePoint>,
    pub control: Vec<CurvePoint>,
}

impl AccuracyCurve {
    pub fn new(points: Vec<CurvePoint>, control: Vec<CurvePoint>) -> Result<Self> {
        for series in [&points, &control] {
            if series.windows(2).any(|w| w[0].k >= w[1].k) {
                return Err(Error::arg("curve K values must be strictly increasing"));
            }
            if series.iter().any(|p| !(0.0..=1.0).contains(&p.mean_accuracy)) {
                return Err(Error::arg("accuracies must lie in [0, 1]"));
            }
        }
        Ok(Self { points, control })
    }

    /// Tab-separated `K, mean_acc, std, control_acc` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("K\tmean_acc\tstd\tcontrol_acc\n");
        for (p, c) in self.points.iter().zip(&self.control) {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", p.k, p.mean_accuracy, p.std, c.mean_accuracy));
        }
        out
    }
}
