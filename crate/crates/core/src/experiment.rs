//! Monte-Carlo train/test experiments: split, discretize on the training rows,
//! pick the rank by cross-validation, fit, select, and score 1-NN accuracy
//! for every prefix of the selection against a random-subset control.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{discretize_equal_width, split_indices, DiscreteDataset, RawTable, SplitSpec, DEFAULT_BINS};
use crate::em::{cross_validate_rank, em_fit, CvConfig, CvPredictor, CvReport, FitConfig};
use crate::error::{Error, Result};
use crate::knn::{accuracy, knn_classify, AccuracyCurve, CurvePoint, Metric};
use crate::rng::{derive_seed, derived_rng};
use crate::selection::{
    greedy_select_with, lazy_greedy_select_with, remodeling_select, EntropyMode, SelectOptions, SelectionResult,
    Strategy, DEFAULT_SAMPLES,
};
use crate::tensor::{build_empirical_pmf, FeatureSubset};

/// Rank grid searched by default.
pub const DEFAULT_RANKS: [usize; 5] = [5, 10, 15, 20, 30];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub split: SplitSpec,
    pub bins: usize,
    pub ranks: Vec<usize>,
    pub cv_folds: usize,
    pub cv_predictor: CvPredictor,
    pub k_max: usize,
    pub strategy: Strategy,
    pub entropy_mode: EntropyMode,
    pub samples: usize,
    pub max_iterations: usize,
    pub relative_kl_tolerance: f64,
    pub metric: Metric,
    /// Run Monte-Carlo runs concurrently. Output is identical either way.
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(k_max: usize, seed: u64) -> Self {
        Self {
            split: SplitSpec {
                seed,
                ..SplitSpec::default()
            },
            bins: DEFAULT_BINS,
            ranks: DEFAULT_RANKS.to_vec(),
            cv_folds: 5,
            cv_predictor: CvPredictor::Posterior,
            k_max,
            strategy: Strategy::LazyGreedy,
            entropy_mode: EntropyMode::Auto,
            samples: DEFAULT_SAMPLES,
            max_iterations: 500,
            relative_kl_tolerance: 1e-6,
            metric: Metric::Hamming,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run: usize,
    pub rank: usize,
    pub cv: Option<CvReport>,
    /// EM sweeps and final KL of the global fit; absent for remodeling runs.
    pub fit_iterations: Option<usize>,
    pub final_kl: Option<f64>,
    pub selection: SelectionResult,
    /// Entry `k - 1` is the test accuracy using the first `k` selected features.
    pub accuracy_by_k: Vec<f64>,
    pub control_by_k: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_run: Vec<RunReport>,
    pub mean_accuracy_by_k: Vec<f64>,
    pub std_by_k: Vec<f64>,
    pub random_control_by_k: Vec<f64>,
    pub curve: AccuracyCurve,
}

impl ExperimentReport {
    pub fn to_tsv(&self) -> String {
        self.curve.to_tsv()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// 1-NN test accuracy of every prefix of `order`, and of the same-length
/// prefixes of a random permutation drawn for `run`.
fn score_prefixes(
    train: &DiscreteDataset,
    test: &DiscreteDataset,
    order: &[usize],
    seed: u64,
    run: usize,
    metric: Metric,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = train.num_features();
    let mut control: Vec<usize> = (0..n).collect();
    control.shuffle(&mut derived_rng(seed, "control", &[run as u64]));
    let score = |features: &[usize]| -> Result<f64> {
        let subset = FeatureSubset::of(features.to_vec(), n)?;
        accuracy(&knn_classify(train, test, &subset, metric)?, test.labels())
    };
    let acc = (1..=order.len()).map(|k| score(&order[..k])).collect::<Result<_>>()?;
    let ctl = (1..=order.len()).map(|k| score(&control[..k])).collect::<Result<_>>()?;
    Ok((acc, ctl))
}

type Aggregate = (Vec<f64>, Vec<f64>, Vec<f64>, AccuracyCurve);

fn aggregate(per_run: &[(&[f64], &[f64])], k_max: usize) -> Result<Aggregate> {
    let mut mean_accuracy_by_k = Vec::new();
    let mut std_by_k = Vec::new();
    let mut random_control_by_k = Vec::new();
    let mut points = Vec::new();
    let mut control = Vec::new();
    for k in 0..k_max {
        let acc: Vec<f64> = per_run.iter().map(|r| r.0[k]).collect();
        let ctl: Vec<f64> = per_run.iter().map(|r| r.1[k]).collect();
        let (m, s) = mean_std(&acc);
        let (cm, cs) = mean_std(&ctl);
        mean_accuracy_by_k.push(m);
        std_by_k.push(s);
        random_control_by_k.push(cm);
        points.push(CurvePoint {
            k: k + 1,
            mean_accuracy: m,
            std: s,
        });
        control.push(CurvePoint {
            k: k + 1,
            mean_accuracy: cm,
            std: cs,
        });
    }
    Ok((mean_accuracy_by_k, std_by_k, random_control_by_k, AccuracyCurve::new(points, control)?))
}

fn run_once(table: &RawTable, config: &ExperimentConfig, run: usize) -> Result<RunReport> {
    let seed = config.split.seed;
    let (train_rows, test_rows) = split_indices(table.num_rows(), &config.split, run)?;
    let dataset = discretize_equal_width(table, config.bins, &train_rows)?;
    let train = dataset.select_rows(&train_rows);
    let test = dataset.select_rows(&test_rows);
    let n = train.num_features();
    let k_max = config.k_max;
    if k_max == 0 || k_max > n {
        return Err(Error::arg(format!("k_max = {k_max} must be in 1..={n}")));
    }

    let cv = if config.ranks.len() > 1 {
        Some(cross_validate_rank(
            &train,
            &CvConfig {
                ranks: config.ranks.clone(),
                folds: config.cv_folds,
                seed: derive_seed(seed, "cv", &[run as u64]),
                max_iterations: config.max_iterations,
                relative_kl_tolerance: config.relative_kl_tolerance,
                predictor: config.cv_predictor,
            },
        )?)
    } else {
        None
    };
    let rank = match &cv {
        Some(r) => r.best_rank,
        None => *config.ranks.first().ok_or_else(|| Error::arg("no candidate ranks"))?,
    };
    let fit = FitConfig {
        max_iterations: config.max_iterations,
        relative_kl_tolerance: config.relative_kl_tolerance,
        ..FitConfig::new(rank, derive_seed(seed, "fit", &[run as u64]))
    };
    let options = SelectOptions::new(config.entropy_mode, config.samples, derive_seed(seed, "select", &[run as u64]));

    let (selection, fit_iterations, final_kl) = match config.strategy {
        Strategy::Remodeling => (remodeling_select(&train, k_max, &fit, &options)?, None, None),
        Strategy::Greedy | Strategy::LazyGreedy | Strategy::Exhaustive => {
            let (model, report) = em_fit(&build_empirical_pmf(&train)?, &fit)?;
            let sel = match config.strategy {
                Strategy::Greedy => greedy_select_with(&model, k_max, &options)?,
                Strategy::LazyGreedy => lazy_greedy_select_with(&model, k_max, &options)?,
                _ => crate::selection::exhaustive_select(&model, k_max)?,
            };
            (sel, Some(report.iterations_run), report.kl_trace.last().copied())
        }
    };

    let (accuracy_by_k, control_by_k) = score_prefixes(&train, &test, &selection.order[..k_max], seed, run, config.metric)?;

    Ok(RunReport {
        run,
        rank,
        cv,
        fit_iterations,
        final_kl,
        selection,
        accuracy_by_k,
        control_by_k,
    })
}

/// Run every Monte-Carlo split and aggregate accuracy curves.
pub fn run_experiment(table: &RawTable, config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.split.validate()?;
    let runs: Vec<usize> = (0..config.split.monte_carlo_runs).collect();
    let job = |&run: &usize| {
        run_once(table, config, run).map_err(|e| Error::Experiment {
            run,
            source: Box::new(e),
        })
    };
    let per_run: Vec<RunReport> = if config.parallel {
        runs.par_iter().map(job).collect::<Result<_>>()?
    } else {
        runs.iter().map(job).collect::<Result<_>>()?
    };

    let (mean_accuracy_by_k, std_by_k, random_control_by_k, curve) =
        aggregate(&per_run.iter().map(|r| (&r.accuracy_by_k[..], &r.control_by_k[..])).collect::<Vec<_>>(), config.k_max)?;
    Ok(ExperimentReport {
        config: config.clone(),
        per_run,
        mean_accuracy_by_k,
        std_by_k,
        random_control_by_k,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    pub split: SplitSpec,
    pub bins: usize,
    pub metric: Metric,
}

impl EvaluationConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            split: SplitSpec {
                seed,
                ..SplitSpec::default()
            },
            bins: DEFAULT_BINS,
            metric: Metric::Hamming,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: EvaluationConfig,
    pub order: Vec<usize>,
    /// Per run, entry `k - 1` is the accuracy of the first `k` features of `order`.
    pub accuracy_by_run: Vec<Vec<f64>>,
    pub control_by_run: Vec<Vec<f64>>,
    pub mean_accuracy_by_k: Vec<f64>,
    pub std_by_k: Vec<f64>,
    pub random_control_by_k: Vec<f64>,
    pub curve: AccuracyCurve,
}

/// Score a fixed feature order with the experiment's split, binning, and
/// 1-NN protocol. Splits match [`run_experiment`] under the same seed.
pub fn evaluate_feature_order(table: &RawTable, order: &[usize], config: &EvaluationConfig) -> Result<EvaluationReport> {
    config.split.validate()?;
    let n = table.num_features();
    if order.is_empty() {
        return Err(Error::arg("feature order is empty"));
    }
    FeatureSubset::of(order.to_vec(), n)?;
    let seed = config.split.seed;
    let mut accuracy_by_run = Vec::new();
    let mut control_by_run = Vec::new();
    for run in 0..config.split.monte_carlo_runs {
        let (train_rows, test_rows) = split_indices(table.num_rows(), &config.split, run)?;
        let dataset = discretize_equal_width(table, config.bins, &train_rows)?;
        let train = dataset.select_rows(&train_rows);
        let test = dataset.select_rows(&test_rows);
        let (acc, ctl) = score_prefixes(&train, &test, order, seed, run, config.metric)?;
        accuracy_by_run.push(acc);
        control_by_run.push(ctl);
    }
    let runs: Vec<(&[f64], &[f64])> = accuracy_by_run
        .iter()
        .zip(&control_by_run)
        .map(|(a, c)| (&a[..], &c[..]))
        .collect();
    let (mean_accuracy_by_k, std_by_k, random_control_by_k, curve) = aggregate(&runs, order.len())?;
    Ok(EvaluationReport {
        config: config.clone(),
        order: order.to_vec(),
        accuracy_by_run,
        control_by_run,
        mean_accuracy_by_k,
        std_by_k,
        random_control_by_k,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Schema;
    use crate::rng::rng_from;
    use rand::Rng;

    fn planted_table(m: usize, seed: u64) -> RawTable {
        let mut rng = rng_from(seed);
        let mut csv = String::from("a,b,c,d,y\n");
        for _ in 0..m {
            let z: u8 = rng.gen_range(0..2);
            let a = z as f64 + rng.gen::<f64>() * 0.3;
            let (b, c, d): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
            csv.push_str(&format!("{a},{b},{c},{d},{}\n", if z == 1 { "pos" } else { "neg" }));
        }
        let schema = Schema::from_json_str(
            r#"{"a":"continuous","b":"continuous","c":"continuous","d":"continuous","y":"label"}"#,
        )
        .unwrap();
        RawTable::from_reader(csv.as_bytes(), &schema).unwrap()
    }

    fn small_config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            ranks: vec![2],
            split: SplitSpec {
                monte_carlo_runs: 3,
                seed,
                ..SplitSpec::default()
            },
            ..ExperimentConfig::new(2, seed)
        }
    }

    #[test]
    fn informative_feature_comes_first() {
        let report = run_experiment(&planted_table(300, 1), &small_config(9)).unwrap();
        for run in &report.per_run {
            assert_eq!(run.selection.order[0], 0);
            assert!(run.accuracy_by_k[0] > 0.95, "{:?}", run.accuracy_by_k);
        }
        assert_eq!(report.curve.points.len(), 2);
    }

    #[test]
    fn parallel_and_sequential_reports_match() {
        let table = planted_table(200, 2);
        let par = run_experiment(&table, &small_config(4)).unwrap();
        let seq = run_experiment(
            &table,
            &ExperimentConfig {
                parallel: false,
                ..small_config(4)
            },
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&par.per_run).unwrap(),
            serde_json::to_string(&seq.per_run).unwrap()
        );
        assert_eq!(par.curve, seq.curve);
    }

    #[test]
    fn evaluation_reproduces_experiment_scores() {
        let table = planted_table(200, 3);
        let report = run_experiment(&table, &small_config(5)).unwrap();
        let order = &report.per_run[1].selection.order;
        let eval = evaluate_feature_order(
            &table,
            order,
            &EvaluationConfig {
                split: report.config.split.clone(),
                ..EvaluationConfig::new(5)
            },
        )
        .unwrap();
        assert_eq!(eval.accuracy_by_run[1], report.per_run[1].accuracy_by_k);
        assert_eq!(eval.control_by_run[1], report.per_run[1].control_by_k);
    }

    #[test]
    fn k_max_out_of_range_is_rejected() {
        let table = planted_table(50, 4);
        let err = run_experiment(&table, &ExperimentConfig { k_max: 5, ..small_config(1) }).unwrap_err();
        assert!(matches!(err.root(), Error::InvalidArgument(_)), "{err}");
    }
}
