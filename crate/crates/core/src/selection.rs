//! Cardinality-constrained maximization of `g(S) = I(X_S; Z)`.
//!
//! `g` is monotone submodular under the latent class model, so the forward
//! greedy rule is within `1 - 1/e` of the best size-K subset. The lazy
//! variant returns the same selections while skipping evaluations that stale
//! upper bounds prove unnecessary.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DiscreteDataset;
use crate::em::{em_fit, FitConfig};
use crate::error::{Error, Result};
use crate::info::{mi_latent_of_factors, EntropyMethod, JointEntropy, McState, DEFAULT_ENUMERATION_CAP};
use crate::rng::derive_seed;
use crate::tensor::{build_empirical_pmf_columns, CpdModel, FeatureSubset};

/// Candidate values within this distance of the step maximum count as tied;
/// ties go to the smallest feature index.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Allowed floating-point violation of submodularity when trusting a stale bound.
pub const BOUND_SLACK: f64 = 1e-10;

/// Cap on `C(N, K)` for exhaustive search.
pub const EXHAUSTIVE_CAP: u128 = 100_000;

/// Default Monte-Carlo sample count per entropy estimate.
pub const DEFAULT_SAMPLES: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMode {
    Exact,
    #[serde(rename = "mc")]
    MonteCarlo,
    /// Exact while the candidate grid fits the enumeration cap, Monte-Carlo after.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Greedy,
    LazyGreedy,
    Remodeling,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub candidates_evaluated: usize,
    pub switch_mode: EntropyMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected feature positions, in selection order.
    pub order: Vec<usize>,
    /// Marginal gain of each selection, in nats.
    pub gains: Vec<f64>,
    /// `g(S)` of the final subset, in nats.
    pub final_value: f64,
    pub strategy: Strategy,
    pub entropy_mode: EntropyMode,
    pub seed: u64,
    pub per_step: Vec<StepInfo>,
}

impl SelectionResult {
    /// Total number of subset evaluations performed.
    pub fn evaluations(&self) -> usize {
        self.per_step.iter().map(|s| s.candidates_evaluated).sum()
    }
}

/// Options shared by the model-based selectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectOptions {
    pub entropy_mode: EntropyMode,
    pub samples: usize,
    pub seed: u64,
    pub cap: u128,
}

impl SelectOptions {
    pub fn new(entropy_mode: EntropyMode, samples: usize, seed: u64) -> Self {
        Self {
            entropy_mode,
            samples,
            seed,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

fn check_budget(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::arg(format!("budget K = {k} must be in 1..={n}")));
    }
    Ok(())
}

fn grid(model: &CpdModel, factors: &[usize]) -> u128 {
    factors
        .iter()
        .fold(1u128, |acc, &n| acc.saturating_mul(model.factor(n).rows() as u128))
}

/// Smallest index whose value is within [`TIE_TOLERANCE`] of the maximum.
fn pick(values: &[(usize, f64)]) -> (usize, f64) {
    let m = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .filter(|v| v.1 >= m - TIE_TOLERANCE)
        .min_by_key(|v| v.0)
        .copied()
        .expect("at least one candidate")
}

/// Evaluates `g(S ∪ {s})` for the current `S`, exactly or on a shared
/// Monte-Carlo sample (common random numbers across candidates and steps).
struct Evaluator<'a> {
    model: &'a CpdModel,
    options: SelectOptions,
    selected: Vec<usize>,
    mc: Option<McState<'a>>,
    mc_seed: u64,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a CpdModel, options: SelectOptions) -> Self {
        Self {
            model,
            options,
            selected: Vec::new(),
            mc: None,
            mc_seed: derive_seed(options.seed, "greedy-mc", &[]),
        }
    }

    fn step_method(&self, candidates: &[usize]) -> EntropyMethod {
        match self.options.entropy_mode {
            EntropyMode::Exact => EntropyMethod::Exact,
            EntropyMode::MonteCarlo => EntropyMethod::MonteCarlo,
            EntropyMode::Auto => {
                let base = grid(self.model, &self.selected);
                let widest = candidates
                    .iter()
                    .map(|&n| self.model.factor(n).rows() as u128)
                    .max()
                    .unwrap_or(1);
                if base.saturating_mul(widest) <= self.options.cap {
                    EntropyMethod::Exact
                } else {
                    EntropyMethod::MonteCarlo
                }
            }
        }
    }

    fn ensure_mc(&mut self) -> Result<()> {
        if self.options.samples == 0 {
            return Err(Error::arg("sample count must be >= 1"));
        }
        if self.mc.is_none() {
            let mut st = McState::new(self.model, self.options.samples, self.mc_seed);
            for &n in &self.selected {
                st.extend(n);
            }
            self.mc = Some(st);
        }
        Ok(())
    }

    fn conditional(&self, factors: &[usize]) -> f64 {
        factors
            .iter()
            .map(|&n| crate::info::conditional_entropy_of_factor(self.model, n))
            .sum()
    }

    /// `g(S)` for the current set under `method`.
    fn base_value(&mut self, method: EntropyMethod) -> Result<f64> {
        if self.selected.is_empty() || self.model.effective_rank() <= 1 {
            return Ok(0.0);
        }
        match method {
            EntropyMethod::Exact => mi_latent_of_factors(
                self.model,
                &self.selected,
                JointEntropy::Exact { cap: self.options.cap },
            ),
            EntropyMethod::MonteCarlo => {
                self.ensure_mc()?;
                let h = self.mc.as_ref().unwrap().estimate_with(&[]).value;
                Ok(h - self.conditional(&self.selected))
            }
        }
    }

    /// `g(S ∪ {n})` for each candidate factor, in candidate order.
    fn evaluate(&mut self, candidates: &[usize], method: EntropyMethod) -> Result<Vec<f64>> {
        if self.model.effective_rank() <= 1 {
            return Ok(vec![0.0; candidates.len()]);
        }
        match method {
            EntropyMethod::Exact => {
                let cap = self.options.cap;
                let model = self.model;
                let selected = &self.selected;
                candidates
                    .par_iter()
                    .map(|&n| {
                        let mut f = selected.clone();
                        f.push(n);
                        mi_latent_of_factors(model, &f, JointEntropy::Exact { cap })
                    })
                    .collect()
            }
            EntropyMethod::MonteCarlo => {
                self.ensure_mc()?;
                let st = self.mc.as_ref().unwrap();
                let base_cond = self.conditional(&self.selected);
                let model = self.model;
                Ok(candidates
                    .par_iter()
                    .map(|&n| {
                        let h = st.estimate_with(&[n]).value;
                        h - (base_cond + crate::info::conditional_entropy_of_factor(model, n))
                    })
                    .collect())
            }
        }
    }

    fn commit(&mut self, n: usize) {
        self.selected.push(n);
        if let Some(st) = self.mc.as_mut() {
            st.extend(n);
        }
    }
}

/// Forward greedy selection of `k` features maximizing `I(X_S; Z)`.
pub fn greedy_select(model: &CpdModel, k: usize, entropy_mode: EntropyMode, samples: usize, seed: u64) -> Result<SelectionResult> {
    greedy_select_with(model, k, &SelectOptions::new(entropy_mode, samples, seed))
}

pub fn greedy_select_with(model: &CpdModel, k: usize, options: &SelectOptions) -> Result<SelectionResult> {
    let n_features = model.num_features();
    check_budget(k, n_features)?;
    let mut ev = Evaluator::new(model, *options);
    let mut remaining: Vec<usize> = (0..n_features).collect();
    let mut order = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut per_step = Vec::with_capacity(k);
    let mut current = 0.0;
    let mut last_method = None;
    for step in 0..k {
        let factors: Vec<usize> = remaining.iter().map(|&s| model.feature_factor(s)).collect();
        let method = ev.step_method(&factors);
        if last_method != Some(method) {
            if step > 0 {
                info!("greedy step {step}: switching entropy evaluation to {method:?}");
            }
            current = ev.base_value(method)?;
        }
        last_method = Some(method);
        let values = ev.evaluate(&factors, method)?;
        let scored: Vec<(usize, f64)> = remaining.iter().copied().zip(values).collect();
        let (best, value) = pick(&scored);
        order.push(best);
        gains.push(value - current);
        current = value;
        per_step.push(StepInfo {
            candidates_evaluated: remaining.len(),
            switch_mode: method,
        });
        ev.commit(model.feature_factor(best));
        remaining.retain(|&s| s != best);
    }
    Ok(SelectionResult {
        order,
        gains,
        final_value: current,
        strategy: Strategy::Greedy,
        entropy_mode: options.entropy_mode,
        seed: options.seed,
        per_step,
    })
}

/// Lazy greedy: same selections and gains as [`greedy_select`] in exact mode.
///
/// Monte-Carlo noise can violate the diminishing-returns bound the lazy rule
/// depends on, so any run that would need Monte-Carlo evaluation falls back
/// to plain greedy.
pub fn lazy_greedy_select(model: &CpdModel, k: usize, entropy_mode: EntropyMode, samples: usize, seed: u64) -> Result<SelectionResult> {
    lazy_greedy_select_with(model, k, &SelectOptions::new(entropy_mode, samples, seed))
}

pub fn lazy_greedy_select_with(model: &CpdModel, k: usize, options: &SelectOptions) -> Result<SelectionResult> {
    let n_features = model.num_features();
    check_budget(k, n_features)?;
    let stays_exact = match options.entropy_mode {
        EntropyMode::Exact => true,
        EntropyMode::MonteCarlo => false,
        EntropyMode::Auto => {
            let mut dims: Vec<u128> = (0..n_features)
                .map(|s| model.factor(model.feature_factor(s)).rows() as u128)
                .collect();
            dims.sort_unstable_by(|a, b| b.cmp(a));
            dims.iter().take(k).fold(1u128, |a, &d| a.saturating_mul(d)) <= options.cap
        }
    };
    if !stays_exact {
        warn!("lazy greedy needs exact entropies; falling back to plain greedy");
        return greedy_select_with(model, k, options);
    }
    let exact = SelectOptions {
        entropy_mode: EntropyMode::Exact,
        ..*options
    };
    let mut ev = Evaluator::new(model, exact);

    // per feature: Some(value) when evaluated against the current S, plus the
    // last known gain as an upper bound on the current gain
    let mut fresh: Vec<Option<f64>> = vec![None; n_features];
    let mut bound: Vec<f64> = vec![f64::INFINITY; n_features];
    let mut active = vec![true; n_features];
    let mut order = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut per_step = Vec::with_capacity(k);
    let mut current = 0.0;

    for step in 0..k {
        let mut evaluated = 0;
        if step == 0 {
            let all: Vec<usize> = (0..n_features).collect();
            let factors: Vec<usize> = all.iter().map(|&s| model.feature_factor(s)).collect();
            let values = ev.evaluate(&factors, EntropyMethod::Exact)?;
            for (s, v) in all.into_iter().zip(values) {
                fresh[s] = Some(v);
                bound[s] = v - current;
            }
            evaluated = n_features;
        }
        loop {
            let m = (0..n_features)
                .filter(|&s| active[s])
                .filter_map(|s| fresh[s])
                .fold(f64::NEG_INFINITY, f64::max);
            // stale candidate with the largest bound, smallest index on ties
            let mut top: Option<usize> = None;
            for s in (0..n_features).filter(|&s| active[s] && fresh[s].is_none()) {
                if top.map_or(true, |t| bound[s] > bound[t]) {
                    top = Some(s);
                }
            }
            let Some(s) = top else { break };
            if current + bound[s] + BOUND_SLACK < m - TIE_TOLERANCE {
                break;
            }
            if bound[s] <= 0.0 {
                // gain is pinned to zero by monotonicity and the stale bound
                fresh[s] = Some(current);
                continue;
            }
            let v = ev.evaluate(&[model.feature_factor(s)], EntropyMethod::Exact)?[0];
            evaluated += 1;
            fresh[s] = Some(v);
            bound[s] = v - current;
        }
        let scored: Vec<(usize, f64)> = (0..n_features)
            .filter(|&s| active[s])
            .filter_map(|s| fresh[s].map(|v| (s, v)))
            .collect();
        let (best, value) = pick(&scored);
        order.push(best);
        gains.push(value - current);
        current = value;
        per_step.push(StepInfo {
            candidates_evaluated: evaluated,
            switch_mode: EntropyMethod::Exact,
        });
        ev.commit(model.feature_factor(best));
        active[best] = false;
        fresh.iter_mut().for_each(|v| *v = None);
    }
    Ok(SelectionResult {
        order,
        gains,
        final_value: current,
        strategy: Strategy::LazyGreedy,
        entropy_mode: options.entropy_mode,
        seed: options.seed,
        per_step,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// Best size-`k` subset by exhaustive search; lexicographically smallest among ties.
pub fn exhaustive_select(model: &CpdModel, k: usize) -> Result<SelectionResult> {
    exhaustive_select_with(model, k, DEFAULT_ENUMERATION_CAP)
}

pub fn exhaustive_select_with(model: &CpdModel, k: usize, cap: u128) -> Result<SelectionResult> {
    let n = model.num_features();
    check_budget(k, n)?;
    let count = binomial(n, k);
    if count > EXHAUSTIVE_CAP {
        return Err(Error::Capacity {
            context: format!("exhaustive search over C({n}, {k}) subsets"),
            required: count,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let mode = JointEntropy::Exact { cap };
    let g = |subset: &[usize]| -> Result<f64> {
        let factors: Vec<usize> = subset.iter().map(|&s| model.feature_factor(s)).collect();
        mi_latent_of_factors(model, &factors, mode)
    };
    let mut combos = Vec::with_capacity(count as usize);
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        combos.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] < n - k + i) else { break };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
    let values: Vec<f64> = combos.par_iter().map(|s| g(s)).collect::<Result<_>>()?;
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = values.iter().position(|&v| v >= m - TIE_TOLERANCE).unwrap();
    let order = combos[best].clone();
    let mut gains = Vec::with_capacity(k);
    let mut prev = 0.0;
    for j in 1..=k {
        let v = if j == k { values[best] } else { g(&order[..j])? };
        gains.push(v - prev);
        prev = v;
    }
    Ok(SelectionResult {
        order,
        gains,
        final_value: values[best],
        strategy: Strategy::Exhaustive,
        entropy_mode: EntropyMode::Exact,
        seed: 0,
        per_step: vec![StepInfo {
            candidates_evaluated: combos.len(),
            switch_mode: EntropyMethod::Exact,
        }],
    })
}

/// Greedy selection that refits a CPD on `S ∪ {s}` plus the label for every
/// candidate `s`, instead of reading all candidates off one global model.
///
/// `fit` supplies the rank and termination settings; each candidate fit gets
/// its own seed derived from `options.seed`, the step, and the candidate.
pub fn remodeling_select(dataset: &DiscreteDataset, k: usize, fit: &FitConfig, options: &SelectOptions) -> Result<SelectionResult> {
    let n = dataset.num_features();
    check_budget(k, n)?;
    fit.validate()?;
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut per_step = Vec::with_capacity(k);
    let mut current = 0.0;
    let mut remaining: Vec<usize> = (0..n).collect();
    for step in 0..k {
        let outcomes: Vec<(usize, Result<(f64, EntropyMethod)>)> = remaining
            .par_iter()
            .map(|&s| {
                let r = (|| {
                    let mut features = order.clone();
                    features.push(s);
                    let empirical = build_empirical_pmf_columns(dataset, &features, true)?;
                    let cfg = FitConfig {
                        seed: derive_seed(options.seed, "remodel-fit", &[step as u64, s as u64]),
                        ..fit.clone()
                    };
                    let (model, _) = em_fit(&empirical, &cfg)?;
                    let factors: Vec<usize> = (0..features.len()).collect();
                    let exact = match options.entropy_mode {
                        EntropyMode::Exact => true,
                        EntropyMode::MonteCarlo => false,
                        EntropyMode::Auto => grid(&model, &factors) <= options.cap,
                    };
                    if exact {
                        let v = mi_latent_of_factors(&model, &factors, JointEntropy::Exact { cap: options.cap })?;
                        Ok((v, EntropyMethod::Exact))
                    } else {
                        let seed = derive_seed(options.seed, "remodel-mc", &[step as u64]);
                        let v = mi_latent_of_factors(
                            &model,
                            &factors,
                            JointEntropy::MonteCarlo {
                                samples: options.samples,
                                seed,
                            },
                        )?;
                        Ok((v, EntropyMethod::MonteCarlo))
                    }
                })();
                (s, r)
            })
            .collect();
        let mut scored = Vec::new();
        let mut method = EntropyMethod::Exact;
        for (s, r) in outcomes {
            match r {
                Ok((v, m)) => {
                    if m == EntropyMethod::MonteCarlo {
                        method = m;
                    }
                    scored.push((s, v));
                }
                Err(e) => warn!("remodeling step {step}: candidate {s} skipped: {e}"),
            }
        }
        if scored.is_empty() {
            return Err(Error::Selection(format!("every candidate fit failed at step {step}")));
        }
        let (best, value) = pick(&scored);
        per_step.push(StepInfo {
            candidates_evaluated: remaining.len(),
            switch_mode: method,
        });
        order.push(best);
        gains.push(value - current);
        current = value;
        remaining.retain(|&s| s != best);
    }
    Ok(SelectionResult {
        order,
        gains,
        final_value: current,
        strategy: Strategy::Remodeling,
        entropy_mode: options.entropy_mode,
        seed: options.seed,
        per_step,
    })
}

/// Evaluate `g` on a feature subset in exact mode (convenience for callers and tests).
pub fn subset_value(model: &CpdModel, subset: &FeatureSubset) -> Result<f64> {
    crate::info::mi_subset_latent(model, subset, JointEntropy::exact())
}
