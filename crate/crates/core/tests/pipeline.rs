mod common;

use common::{model_from_seed, planted_csv, sample_dataset};
use cpdsel::em::{CvConfig, CvPredictor};
use cpdsel::experiment::DEFAULT_RANKS;
use cpdsel::selection::SelectOptions;
use cpdsel::{
    accuracy, cross_validate_rank, knn_classify, remodeling_select, run_experiment, split, CpdModel, DiscreteDataset,
    EntropyMode, ExperimentConfig, Factor, FeatureSubset, FitConfig, Metric, RawTable, SplitSpec, Strategy,
};

fn cv(ranks: Vec<usize>, seed: u64) -> CvConfig {
    CvConfig {
        max_iterations: 200,
        ..CvConfig::new(ranks, seed)
    }
}

/// Rank-3 model over four 3-level features and a 3-level label, where
/// column `f` of every factor puts mass 0.7 on level `f`.
fn planted_rank_three() -> CpdModel {
    let peaked: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|f| if i == f { 0.7 } else { 0.15 }).collect()).collect();
    let factor = Factor::from_rows(&peaked).unwrap();
    CpdModel::new(vec![0.3, 0.3, 0.4], vec![factor; 5], Some(4)).unwrap()
}

#[test]
fn cv_prefers_planted_rank_over_rank_one() {
    let data = sample_dataset(&planted_rank_three(), 2000, 5);
    let report = cross_validate_rank(&data, &cv(vec![1, 2, 3, 4], 1)).unwrap();
    let best = report.ranks[&report.best_rank].mean_error;
    let one = report.ranks[&1].mean_error;
    assert!(best < one - 0.1, "best {} ({best}) vs rank 1 ({one})", report.best_rank);
    assert!(report.best_rank >= 2);
    for r in report.ranks.values() {
        assert_eq!(r.per_fold_errors.len(), 5);
    }
}

#[test]
fn cv_singleton_and_ties() {
    let planted = model_from_seed(&[3, 3, 2], 2, 3);
    let data = sample_dataset(&planted, 200, 2);
    assert_eq!(cross_validate_rank(&data, &cv(vec![4], 0)).unwrap().best_rank, 4);

    // a constant label gives zero error at every rank
    let constant = DiscreteDataset::new(data.rows().to_vec(), vec![0; 200], data.feature_cardinalities().to_vec(), 2).unwrap();
    let report = cross_validate_rank(&constant, &cv(vec![4, 2, 3], 0)).unwrap();
    assert!(report.ranks.values().all(|r| r.mean_error == 0.0));
    assert_eq!(report.best_rank, 2);
}

#[test]
fn cv_with_nearest_neighbor_predictor_runs() {
    let planted = model_from_seed(&[3, 3, 3, 2], 2, 4);
    let data = sample_dataset(&planted, 300, 9);
    let config = CvConfig {
        predictor: CvPredictor::NearestNeighbor { budget: 2 },
        folds: 3,
        ..cv(vec![1, 2], 3)
    };
    let report = cross_validate_rank(&data, &config).unwrap();
    assert!(report.ranks.values().all(|r| (0.0..=1.0).contains(&r.mean_error)));
}

/// Feature 0 equals the latent class (4 states), feature 1 is uniform noise,
/// the label is a noisy copy of the latent class.
fn two_feature_planted() -> CpdModel {
    let eye: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|f| if i == f { 1.0 } else { 0.0 }).collect()).collect();
    let flat = vec![vec![1.0 / 3.0; 4]; 3];
    let label: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|f| if i == f { 0.85 } else { 0.05 }).collect()).collect();
    CpdModel::new(
        vec![0.25; 4],
        vec![
            Factor::from_rows(&eye).unwrap(),
            Factor::from_rows(&flat).unwrap(),
            Factor::from_rows(&label).unwrap(),
        ],
        Some(2),
    )
    .unwrap()
}

#[test]
fn remodeling_picks_the_planted_feature() {
    let data = sample_dataset(&two_feature_planted(), 1000, 1);
    let fit = FitConfig::new(4, 2);
    let options = SelectOptions::new(EntropyMode::Exact, 1, 3);
    let res = remodeling_select(&data, 1, &fit, &options).unwrap();
    assert_eq!(res.order, [0]);
    assert_eq!(res.strategy, Strategy::Remodeling);
    assert!(res.gains[0] > 1.0, "{:?}", res.gains);
}

#[test]
fn remodeling_full_budget_is_a_permutation_and_reproducible() {
    let planted = model_from_seed(&[3, 2, 3, 2, 2], 3, 6);
    let data = sample_dataset(&planted, 400, 2);
    let fit = FitConfig {
        max_iterations: 100,
        ..FitConfig::new(3, 8)
    };
    let options = SelectOptions::new(EntropyMode::Exact, 1, 5);
    let a = remodeling_select(&data, 4, &fit, &options).unwrap();
    let mut order = a.order.clone();
    order.sort();
    assert_eq!(order, [0, 1, 2, 3]);
    let b = remodeling_select(&data, 4, &fit, &options).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn planted_table(m: usize, seed: u64) -> RawTable {
    let (csv, schema) = planted_csv(m, 5, &[1, 3], seed);
    RawTable::from_reader(csv.as_bytes(), &schema).unwrap()
}

#[test]
fn experiment_full_budget_matches_plain_nearest_neighbor() {
    let table = planted_table(150, 3);
    let config = ExperimentConfig {
        ranks: vec![4],
        split: SplitSpec {
            monte_carlo_runs: 2,
            seed: 7,
            ..SplitSpec::default()
        },
        ..ExperimentConfig::new(5, 7)
    };
    let report = run_experiment(&table, &config).unwrap();
    for run in &report.per_run {
        let (tr, te) = cpdsel::data::split_indices(150, &config.split, run.run).unwrap();
        let ds = cpdsel::discretize_equal_width(&table, 5, &tr).unwrap();
        let (train, test) = (ds.select_rows(&tr), ds.select_rows(&te));
        let all = FeatureSubset::all(5);
        let acc = accuracy(&knn_classify(&train, &test, &all, Metric::Hamming).unwrap(), test.labels()).unwrap();
        assert_eq!(run.accuracy_by_k[4], acc);
    }
}

#[test]
fn experiment_is_reproducible() {
    let table = planted_table(200, 4);
    let config = ExperimentConfig {
        ranks: vec![2, 4],
        split: SplitSpec {
            monte_carlo_runs: 3,
            seed: 1,
            ..SplitSpec::default()
        },
        ..ExperimentConfig::new(3, 1)
    };
    let a = run_experiment(&table, &config).unwrap();
    let b = run_experiment(&table, &config).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for run in &a.per_run {
        let mut first: Vec<usize> = run.selection.order[..2].to_vec();
        first.sort();
        assert_eq!(first, [1, 3], "run {}", run.run);
    }
}

#[test]
fn split_shapes() {
    let data = sample_dataset(&model_from_seed(&[2, 2, 2], 1, 1), 10, 1);
    let (tr, te) = split(&data, &SplitSpec::default(), 0).unwrap();
    assert_eq!((tr.num_samples(), te.num_samples()), (7, 3));
    assert_eq!(DEFAULT_RANKS, [5, 10, 15, 20, 30]);
}
