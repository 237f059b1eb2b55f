//! KL-divergence EM for the simplex-constrained CPD, label prediction, and
//! rank selection by cross-validation.
//!
//! One EM sweep makes a single pass over the empirical support. For every
//! support tuple `t` it forms `q(t, f) = Π_n A_n(t_n, f)` and the ratio
//! `Ŷ(t) = X̂(t) / Σ_f λ(f) q(t, f)`, then accumulates
//!
//! ```text
//! λ(f)       <- λ(f) Σ_t Ŷ(t) q(t, f)
//! A_n(i, f)  <- Σ_{t: t_n = i} Ŷ(t) q(t, f)      (= A_n(i, f) * MTTKRP)
//! ```
//!
//! and finally renormalizes λ and every factor column onto the simplex. All
//! factor updates read the same pre-sweep model and the same `Ŷ`, so they are
//! computed independently (and in parallel when enabled) without changing the
//! summation order.

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DiscreteDataset;
use crate::error::{Error, Result};
use crate::knn::{accuracy, knn_classify, Metric};
use crate::rng::{derive_seed, derived_rng, rng_from};
use crate::selection::{greedy_select, EntropyMode};
use crate::tensor::{build_empirical_pmf, CpdModel, Factor, FeatureSubset, SparseCountTensor};

/// Model mass below this value at a support point is clamped before division.
pub const MASS_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub enum Initialization {
    /// λ and every factor column drawn uniform and normalized, from the config seed.
    RandomStochastic,
    Provided(CpdModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub rank: usize,
    pub max_iterations: usize,
    pub relative_kl_tolerance: f64,
    pub seed: u64,
    pub initialization: Initialization,
    /// Update factors concurrently. Results are identical either way.
    pub parallel: bool,
}

impl FitConfig {
    pub fn new(rank: usize, seed: u64) -> Self {
        Self {
            rank,
            max_iterations: 500,
            relative_kl_tolerance: 1e-6,
            seed,
            initialization: Initialization::RandomStochastic,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::arg("rank must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::arg("max_iterations must be >= 1"));
        }
        if !(self.relative_kl_tolerance > 0.0) {
            return Err(Error::arg("relative_kl_tolerance must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Tolerance,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// KL of the initial model followed by the KL after every sweep.
    pub kl_trace: Vec<f64>,
    pub iterations_run: usize,
    pub termination_reason: TerminationReason,
    pub seed: u64,
    /// Support evaluations whose model mass was clamped to [`MASS_FLOOR`].
    #[serde(default)]
    pub clamped_evaluations: usize,
}

/// KL divergence together with the number of support points the model
/// assigns zero mass to (in which case `value` is `+inf`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlDivergence {
    pub value: f64,
    pub zero_mass_points: usize,
}

impl KlDivergence {
    pub fn is_finite(&self) -> bool {
        self.zero_mass_points == 0
    }
}

fn check_dims(empirical: &SparseCountTensor, model: &CpdModel) -> Result<()> {
    if empirical.dims() != model.dims().as_slice() {
        return Err(Error::arg(format!(
            "empirical dims {:?} do not match model dims {:?}",
            empirical.dims(),
            model.dims()
        )));
    }
    Ok(())
}

/// `Σ_{t in support} X̂(t) log(X̂(t) / model(t))`.
pub fn kl_divergence(empirical: &SparseCountTensor, model: &CpdModel) -> Result<KlDivergence> {
    check_dims(empirical, model)?;
    let mut value = 0.0;
    let mut zero_mass_points = 0;
    for (t, x) in empirical.iter() {
        let p = model.eval_unchecked(t);
        if p <= 0.0 {
            zero_mass_points += 1;
        } else {
            value += x * (x / p).ln();
        }
    }
    if zero_mass_points > 0 {
        value = f64::INFINITY;
    }
    Ok(KlDivergence {
        value: value.max(0.0),
        zero_mass_points,
    })
}

struct Pass {
    kl: f64,
    clamped: usize,
    lambda: Vec<f64>,
    factors: Vec<Factor>,
}

/// One pass over the support: KL of `model` plus the EM-updated model.
fn em_pass(empirical: &SparseCountTensor, model: &CpdModel, parallel: bool) -> Pass {
    let rank = model.rank();
    let nnz = empirical.nnz();
    let lambda = model.lambda();
    let mut q = vec![0.0; nnz * rank];
    let mut ratio = vec![0.0; nnz];
    let mut kl = 0.0;
    let mut clamped = 0;
    let tuples: Vec<&[usize]> = empirical.iter().map(|(t, _)| t).collect();
    for (s, (t, x)) in empirical.iter().enumerate() {
        let qs = &mut q[s * rank..(s + 1) * rank];
        qs.fill(1.0);
        for (&i, a) in t.iter().zip(model.factors()) {
            for (qf, &af) in qs.iter_mut().zip(a.row(i)) {
                *qf *= af;
            }
        }
        let mut p: f64 = qs.iter().zip(lambda).map(|(qf, l)| qf * l).sum();
        if p.is_nan() {
            kl = f64::NAN;
        } else if p < MASS_FLOOR {
            clamped += 1;
            p = MASS_FLOOR;
        }
        kl += x * (x / p).ln();
        ratio[s] = x / p;
    }

    let mut new_lambda = vec![0.0; rank];
    for s in 0..nnz {
        for f in 0..rank {
            new_lambda[f] += ratio[s] * q[s * rank + f];
        }
    }
    for (nl, &l) in new_lambda.iter_mut().zip(lambda) {
        *nl *= l;
    }
    normalize_simplex(&mut new_lambda, lambda);

    let update_factor = |n: usize| -> Factor {
        let old = model.factor(n);
        let rows = old.rows();
        let mut acc = vec![0.0; rows * rank];
        for (s, t) in tuples.iter().enumerate() {
            let dst = &mut acc[t[n] * rank..(t[n] + 1) * rank];
            for (d, &qf) in dst.iter_mut().zip(&q[s * rank..(s + 1) * rank]) {
                *d += ratio[s] * qf;
            }
        }
        normalize_columns(rows, rank, &mut acc, old.data());
        Factor::from_data(rows, rank, acc)
    };
    let n_factors = model.num_factors();
    let factors: Vec<Factor> = if parallel {
        (0..n_factors).into_par_iter().map(update_factor).collect()
    } else {
        (0..n_factors).map(update_factor).collect()
    };

    Pass {
        kl: if kl.is_nan() { kl } else { kl.max(0.0) },
        clamped,
        lambda: new_lambda,
        factors,
    }
}

/// Normalize to the simplex; an all-zero vector keeps `fallback`.
fn normalize_simplex(v: &mut [f64], fallback: &[f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        v.copy_from_slice(fallback);
    }
}

fn normalize_columns(rows: usize, rank: usize, data: &mut [f64], fallback: &[f64]) {
    for f in 0..rank {
        let s: f64 = (0..rows).map(|i| data[i * rank + f]).sum();
        if s > 0.0 && s.is_finite() {
            for i in 0..rows {
                data[i * rank + f] /= s;
            }
        } else {
            for i in 0..rows {
                data[i * rank + f] = fallback[i * rank + f];
            }
        }
    }
}

/// Fit a rank-F CPD to `empirical` by EM.
///
/// Stops when `|KL_t - KL_{t-1}| / max(KL_{t-1}, 1e-15)` falls below the
/// tolerance or after `max_iterations` sweeps.
pub fn em_fit(empirical: &SparseCountTensor, config: &FitConfig) -> Result<(CpdModel, FitReport)> {
    em_fit_observed(empirical, config, |_, _| {})
}

/// [`em_fit`] that hands `observe` the initial model (sweep 0) and the model
/// after every completed sweep.
pub fn em_fit_observed(
    empirical: &SparseCountTensor,
    config: &FitConfig,
    mut observe: impl FnMut(usize, &CpdModel),
) -> Result<(CpdModel, FitReport)> {
    config.validate()?;
    if !empirical.is_normalized(1e-12) {
        return Err(Error::arg(format!(
            "empirical PMF sums to {}, expected 1",
            empirical.total_mass()
        )));
    }
    let dims = empirical.dims().to_vec();
    let mut model = match &config.initialization {
        Initialization::RandomStochastic => {
            CpdModel::random(&dims, config.rank, Some(dims.len() - 1), &mut derived_rng(config.seed, "em-init", &[]))?
        }
        Initialization::Provided(m) => {
            check_dims(empirical, m)?;
            if m.rank() != config.rank {
                return Err(Error::arg(format!(
                    "provided model has rank {}, config says {}",
                    m.rank(),
                    config.rank
                )));
            }
            m.clone()
        }
    };
    let label = model.label_index();
    observe(0, &model);

    let mut trace: Vec<f64> = Vec::new();
    let mut clamped_total = 0;
    let mut iteration = 0;
    let reason = loop {
        let pass = em_pass(empirical, &model, config.parallel);
        clamped_total += pass.clamped;
        if !pass.kl.is_finite() {
            return Err(Error::Numerical {
                iteration,
                message: format!("KL divergence is {}", pass.kl),
            });
        }
        trace.push(pass.kl);
        if iteration > 0 {
            let prev = trace[iteration - 1];
            let change = (pass.kl - prev).abs() / prev.max(1e-15);
            if change < config.relative_kl_tolerance {
                break TerminationReason::Tolerance;
            }
        }
        if iteration == config.max_iterations {
            break TerminationReason::MaxIterations;
        }
        if pass.lambda.iter().any(|x| !x.is_finite())
            || pass.factors.iter().any(|a| a.data().iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Numerical {
                iteration,
                message: "NaN in updated parameters".into(),
            });
        }
        model = CpdModel::from_parts_unchecked(pass.lambda, pass.factors, label)?;
        iteration += 1;
        observe(iteration, &model);
    };
    if clamped_total > 0 {
        warn!("{clamped_total} support evaluations clamped to {MASS_FLOOR:e} during EM");
    }
    debug!(
        "em_fit rank {} stopped after {iteration} sweeps ({reason:?}), KL {:e}",
        config.rank,
        trace.last().unwrap()
    );
    Ok((
        model,
        FitReport {
            kl_trace: trace,
            iterations_run: iteration,
            termination_reason: reason,
            seed: config.seed,
            clamped_evaluations: clamped_total,
        },
    ))
}

/// `P(Y | observed features)`; `None` entries are marginalized out.
///
/// With every feature missing this is the label marginal. If the observed
/// values have zero probability under every component the label marginal is
/// returned as well.
pub fn predict_label_posterior(model: &CpdModel, feature_codes: &[Option<usize>]) -> Result<Vec<f64>> {
    let label = model
        .label_index()
        .ok_or_else(|| Error::arg("model has no label factor"))?;
    if feature_codes.len() != model.num_features() {
        return Err(Error::arg(format!(
            "{} feature codes given, model has {} features",
            feature_codes.len(),
            model.num_features()
        )));
    }
    let rank = model.rank();
    let mut weights = model.lambda().to_vec();
    for (k, code) in feature_codes.iter().enumerate() {
        if let Some(x) = *code {
            let a = model.factor(model.feature_factor(k));
            if x >= a.rows() {
                return Err(Error::IndexBounds {
                    variable: k,
                    row: 0,
                    value: x,
                    cardinality: a.rows(),
                });
            }
            for (w, &af) in weights.iter_mut().zip(a.row(x)) {
                *w *= af;
            }
        }
    }
    let ay = model.factor(label);
    let mut post: Vec<f64> = (0..ay.rows())
        .map(|y| (0..rank).map(|f| weights[f] * ay.get(y, f)).sum())
        .collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) {
        return Ok(model.label_marginal().expect("label present"));
    }
    post.iter_mut().for_each(|p| *p /= total);
    Ok(post)
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// MAP label for every row of `dataset`.
pub fn predict_labels(model: &CpdModel, dataset: &DiscreteDataset) -> Result<Vec<usize>> {
    dataset
        .rows()
        .iter()
        .map(|r| {
            let codes: Vec<Option<usize>> = r.iter().map(|&c| Some(c)).collect();
            predict_label_posterior(model, &codes).map(|p| argmax(&p))
        })
        .collect()
}

/// How validation labels are predicted during rank cross-validation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvPredictor {
    /// MAP label under the fitted model's posterior.
    Posterior,
    /// 1-NN on the `budget` features greedily selected from the fitted model.
    NearestNeighbor { budget: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvConfig {
    pub ranks: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub relative_kl_tolerance: f64,
    pub predictor: CvPredictor,
}

impl CvConfig {
    pub fn new(ranks: Vec<usize>, seed: u64) -> Self {
        Self {
            ranks,
            folds: 5,
            seed,
            max_iterations: 500,
            relative_kl_tolerance: 1e-6,
            predictor: CvPredictor::Posterior,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankErrors {
    pub mean_error: f64,
    pub per_fold_errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub best_rank: usize,
    pub ranks: BTreeMap<usize, RankErrors>,
}

/// Pick the rank with the lowest mean validation misclassification error.
/// Ties go to the smaller rank.
pub fn cross_validate_rank(dataset: &DiscreteDataset, config: &CvConfig) -> Result<CvReport> {
    if config.folds < 2 {
        return Err(Error::arg("folds must be >= 2"));
    }
    if config.ranks.is_empty() {
        return Err(Error::arg("candidate ranks must be nonempty"));
    }
    if let Some(&r) = config.ranks.iter().find(|&&r| r == 0) {
        return Err(Error::arg(format!("invalid rank {r}")));
    }
    let m = dataset.num_samples();
    if m < config.folds {
        return Err(Error::arg(format!("{m} samples cannot fill {} folds", config.folds)));
    }
    let mut ranks = config.ranks.clone();
    ranks.sort_unstable();
    ranks.dedup();

    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut derived_rng(config.seed, "cv-folds", &[]));
    let fold_of: Vec<usize> = {
        let mut v = vec![0; m];
        for (p, &row) in perm.iter().enumerate() {
            v[row] = p % config.folds;
        }
        v
    };

    let jobs: Vec<(usize, usize)> = ranks
        .iter()
        .flat_map(|&r| (0..config.folds).map(move |k| (r, k)))
        .collect();
    let errors: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(rank, fold)| {
            let train_rows: Vec<usize> = (0..m).filter(|&i| fold_of[i] != fold).collect();
            let valid_rows: Vec<usize> = (0..m).filter(|&i| fold_of[i] == fold).collect();
            let train = dataset.select_rows(&train_rows);
            let valid = dataset.select_rows(&valid_rows);
            fold_error(&train, &valid, rank, fold, config).map_err(|e| Error::FoldFit {
                fold,
                rank,
                source: Box::new(e),
            })
        })
        .collect();

    let mut table = BTreeMap::new();
    let mut it = errors.into_iter();
    for &rank in &ranks {
        let per_fold: Vec<f64> = (0..config.folds)
            .map(|_| it.next().unwrap())
            .collect::<Result<_>>()?;
        let mean_error = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
        table.insert(
            rank,
            RankErrors {
                mean_error,
                per_fold_errors: per_fold,
            },
        );
    }
    let best_rank = table
        .iter()
        .fold(None::<(usize, f64)>, |best, (&r, e)| match best {
            Some((_, b)) if e.mean_error >= b => best,
            _ => Some((r, e.mean_error)),
        })
        .unwrap()
        .0;
    Ok(CvReport {
        best_rank,
        ranks: table,
    })
}

fn fold_error(
    train: &DiscreteDataset,
    valid: &DiscreteDataset,
    rank: usize,
    fold: usize,
    config: &CvConfig,
) -> Result<f64> {
    let empirical = build_empirical_pmf(train)?;
    let fit = FitConfig {
        rank,
        max_iterations: config.max_iterations,
        relative_kl_tolerance: config.relative_kl_tolerance,
        seed: derive_seed(config.seed, "cv-fit", &[rank as u64, fold as u64]),
        initialization: Initialization::RandomStochastic,
        parallel: false,
    };
    let (model, _) = em_fit(&empirical, &fit)?;
    let predicted = match config.predictor {
        CvPredictor::Posterior => predict_labels(&model, valid)?,
        CvPredictor::NearestNeighbor { budget } => {
            let k = budget.clamp(1, model.num_features());
            let sel = greedy_select(&model, k, EntropyMode::Auto, 5000, fit.seed)?;
            let subset = FeatureSubset::of(sel.order, train.num_features())?;
            knn_classify(train, valid, &subset, Metric::Hamming)?
        }
    };
    Ok(1.0 - accuracy(&predicted, valid.labels())?)
}

/// Random stochastic model, for tests and examples.
pub fn random_model(dims: &[usize], rank: usize, label_index: Option<usize>, seed: u64) -> CpdModel {
    CpdModel::random(dims, rank, label_index, &mut rng_from(seed)).expect("rank >= 1 and nonempty dims")
}
