//! Entropy and mutual information of CPD models, exact and Monte-Carlo.
//!
//! `I(X_S; Z)` is always computed through the decomposition
//! `H(X_S) - Σ_{n in S} H(X_n | Z)`, which holds because the features are
//! conditionally independent given the latent variable. Only `H(X_S)` is
//! expensive: exact evaluation enumerates the `Π I_n` grid, Monte-Carlo
//! evaluation averages `-log P(x_S)` over samples drawn from the model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{CpdModel, FeatureSubset};

/// Default cap on grid cells for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Exact-mode results below this are treated as a numerical failure rather
/// than rounding noise.
pub const NEGATIVE_MI_TOL: f64 = 1e-10;

/// Probability floor used when a sampled tuple's model mass underflows.
const LOG_FLOOR: f64 = 1e-300;

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropyMethod {
    Exact,
    MonteCarlo,
}

/// Entropy value in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub value: f64,
    pub method: EntropyMethod,
    pub sample_count: Option<usize>,
    pub standard_error: Option<f64>,
    /// Monte-Carlo samples whose mass had to be clamped (should stay 0).
    pub clamped: usize,
}

/// How `H(X_S)` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JointEntropy {
    Exact { cap: u128 },
    MonteCarlo { samples: usize, seed: u64 },
}

impl JointEntropy {
    pub fn exact() -> Self {
        JointEntropy::Exact {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

fn grid_size(model: &CpdModel, factors: &[usize]) -> u128 {
    factors
        .iter()
        .fold(1u128, |acc, &n| acc.saturating_mul(model.factor(n).rows() as u128))
}

/// Visit every cell of the grid over `factors` (last index fastest) with the
/// per-component joint weights `w_f = λ(f) Π_n A_n(x_n, f)`.
pub(crate) fn for_each_cell(
    model: &CpdModel,
    factors: &[usize],
    cap: u128,
    context: &str,
    mut visit: impl FnMut(&[usize], &[f64]),
) -> Result<()> {
    let size = grid_size(model, factors);
    if size > cap {
        return Err(Error::Capacity {
            context: context.to_string(),
            required: size,
            cap,
        });
    }
    let rank = model.rank();
    let k = factors.len();
    let mut idx = vec![0usize; k];
    let mut partial = vec![vec![0.0; rank]; k + 1];
    partial[0].copy_from_slice(model.lambda());
    let refresh = |partial: &mut Vec<Vec<f64>>, idx: &[usize], from: usize| {
        for j in from..k {
            let row = model.factor(factors[j]).row(idx[j]);
            let (lo, hi) = partial.split_at_mut(j + 1);
            for ((dst, &src), &a) in hi[0].iter_mut().zip(&lo[j]).zip(row) {
                *dst = src * a;
            }
        }
    };
    refresh(&mut partial, &idx, 0);
    loop {
        visit(&idx, &partial[k]);
        let mut p = k;
        loop {
            if p == 0 {
                return Ok(());
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < model.factor(factors[p]).rows() {
                break;
            }
            idx[p] = 0;
        }
        refresh(&mut partial, &idx, p);
    }
}

/// `H(X_n | Z) = -Σ_{i,f} λ(f) A_n(i, f) log A_n(i, f)` for factor `n`.
pub fn conditional_entropy_of_factor(model: &CpdModel, n: usize) -> f64 {
    let a = model.factor(n);
    let h: f64 = (0..a.rows())
        .map(|i| {
            a.row(i)
                .iter()
                .zip(model.lambda())
                .map(|(&x, &l)| l * xlogx(x))
                .sum::<f64>()
        })
        .sum();
    (-h).max(0.0)
}

/// `H(X_k | Z)` for feature position `k`.
pub fn conditional_entropy_given_latent(model: &CpdModel, feature: usize) -> Result<f64> {
    if feature >= model.num_features() {
        return Err(Error::arg(format!(
            "feature {feature} out of range 0..{}",
            model.num_features()
        )));
    }
    Ok(conditional_entropy_of_factor(model, model.feature_factor(feature)))
}

/// Exact entropy of the marginal over `factors` by grid enumeration.
pub fn entropy_of_factors(model: &CpdModel, factors: &[usize], cap: u128) -> Result<f64> {
    let mut h = 0.0;
    for_each_cell(model, factors, cap, "joint entropy", |_, w| {
        h -= xlogx(w.iter().sum());
    })?;
    Ok(h.max(0.0))
}

pub fn joint_entropy_exact(model: &CpdModel, subset: &FeatureSubset, cap: u128) -> Result<EntropyEstimate> {
    let factors = model.feature_factors(subset);
    Ok(EntropyEstimate {
        value: entropy_of_factors(model, &factors, cap)?,
        method: EntropyMethod::Exact,
        sample_count: None,
        standard_error: None,
        clamped: 0,
    })
}

/// Monte-Carlo sampler state for one latent sequence.
///
/// Holds, for every sample, the running weights `λ(f) Π_{n in base} A_n(x_n, f)`
/// over a base set of factors, so a candidate extension costs `O(T F)`.
/// Variable draws come from the same per-variable streams as
/// [`CpdModel::sample`], so estimates here equal those of a fresh sample.
pub(crate) struct McState<'a> {
    model: &'a CpdModel,
    seed: u64,
    latent: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> McState<'a> {
    pub(crate) fn new(model: &'a CpdModel, samples: usize, seed: u64) -> Self {
        let latent = model.sample_latent(samples, seed);
        let rank = model.rank();
        let mut weights = vec![0.0; samples * rank];
        for w in weights.chunks_mut(rank) {
            w.copy_from_slice(model.lambda());
        }
        Self {
            model,
            seed,
            latent,
            weights,
        }
    }

    fn apply(&self, n: usize, weights: &mut [f64]) {
        let a = self.model.factor(n);
        let draws = self.model.sample_variable(n, &self.latent, self.seed);
        let rank = self.model.rank();
        for (w, &x) in weights.chunks_mut(rank).zip(&draws) {
            for (wf, &af) in w.iter_mut().zip(a.row(x)) {
                *wf *= af;
            }
        }
    }

    /// Fold factor `n` into the base set.
    pub(crate) fn extend(&mut self, n: usize) {
        let mut w = std::mem::take(&mut self.weights);
        self.apply(n, &mut w);
        self.weights = w;
    }

    /// Entropy estimate of the base set plus `extra` factors.
    pub(crate) fn estimate_with(&self, extra: &[usize]) -> EntropyEstimate {
        let rank = self.model.rank();
        let owned;
        let weights: &[f64] = if extra.is_empty() {
            &self.weights
        } else {
            let mut w = self.weights.clone();
            for &n in extra {
                self.apply(n, &mut w);
            }
            owned = w;
            &owned
        };
        let t = self.latent.len();
        let mut clamped = 0;
        let neg_logs: Vec<f64> = weights
            .chunks(rank)
            .map(|w| {
                let p: f64 = w.iter().sum();
                if p < LOG_FLOOR {
                    clamped += 1;
                    -LOG_FLOOR.ln()
                } else {
                    -p.ln()
                }
            })
            .collect();
        if clamped > 0 {
            log::warn!("{clamped} Monte-Carlo samples had model mass below {LOG_FLOOR:e}");
        }
        let mean = neg_logs.iter().sum::<f64>() / t as f64;
        let se = if t > 1 {
            let var = neg_logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
            (var / t as f64).sqrt()
        } else {
            0.0
        };
        EntropyEstimate {
            value: mean + 0.0,
            method: EntropyMethod::MonteCarlo,
            sample_count: Some(t),
            standard_error: Some(se),
            clamped,
        }
    }
}

/// Monte-Carlo estimate of `H(X_S) = -E[log P(X_S)]` from `samples` draws.
pub fn joint_entropy_mc(model: &CpdModel, subset: &FeatureSubset, samples: usize, seed: u64) -> Result<EntropyEstimate> {
    if samples == 0 {
        return Err(Error::arg("sample count must be >= 1"));
    }
    let state = McState::new(model, samples, seed);
    Ok(state.estimate_with(&model.feature_factors(subset)))
}

/// Clamp tiny negative exact-mode results to zero; reject larger ones.
pub(crate) fn clamp_exact(value: f64, what: &str) -> Result<f64> {
    if value < -NEGATIVE_MI_TOL {
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("{what} evaluated to {value}"),
        });
    }
    Ok(value.max(0.0))
}

/// `I(X_S; Z) = H(X_S) - Σ_{n in S} H(X_n | Z)`.
///
/// A model whose latent prior has a single state of positive mass returns
/// exactly 0.
pub fn mi_subset_latent(model: &CpdModel, subset: &FeatureSubset, mode: JointEntropy) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::arg("mutual information needs a nonempty subset"));
    }
    let factors = model.feature_factors(subset);
    mi_latent_of_factors(model, &factors, mode)
}

pub(crate) fn mi_latent_of_factors(model: &CpdModel, factors: &[usize], mode: JointEntropy) -> Result<f64> {
    if model.effective_rank() <= 1 {
        return Ok(0.0);
    }
    let conditional: f64 = factors.iter().map(|&n| conditional_entropy_of_factor(model, n)).sum();
    match mode {
        JointEntropy::Exact { cap } => {
            let h = entropy_of_factors(model, factors, cap)?;
            clamp_exact(h - conditional, "I(X_S; Z)")
        }
        JointEntropy::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::arg("sample count must be >= 1"));
            }
            let h = McState::new(model, samples, seed).estimate_with(factors).value;
            Ok(h - conditional)
        }
    }
}

fn label_factor(model: &CpdModel) -> Result<usize> {
    model
        .label_index()
        .ok_or_else(|| Error::arg("model has no label factor"))
}

/// Exact `I(X_S; Y)` under the model's joint, by enumeration.
pub fn mi_subset_target(model: &CpdModel, subset: &FeatureSubset, cap: u128) -> Result<f64> {
    let label = label_factor(model)?;
    if subset.is_empty() {
        return Ok(0.0);
    }
    let mut factors = model.feature_factors(subset);
    let hx = entropy_of_factors(model, &factors, cap)?;
    let hy = entropy_of_factors(model, &[label], cap)?;
    factors.push(label);
    let hxy = entropy_of_factors(model, &factors, cap)?;
    clamp_exact(hx + hy - hxy, "I(X_S; Y)")
}

/// `I(X_V; Z | Y) = I(X_V; {Z, Y}) - I(X_V; Y)`, the width of the band
/// between `I(X_S; Z)` and `I(X_S; Y)`.
pub fn bandgap_constant(model: &CpdModel, cap: u128) -> Result<f64> {
    let label = label_factor(model)?;
    let all = FeatureSubset::all(model.num_features());
    let features = model.feature_factors(&all);
    let ay = model.factor(label);
    let lambda = model.lambda();

    // I(X_V; {Z, Y}) = Σ_{x, f, y} p(x, f, y) log p(x, f, y) / (p(x) p(f, y))
    let mut joint_info = 0.0;
    for_each_cell(model, &features, cap, "band-gap constant", |_, w| {
        let px: f64 = w.iter().sum();
        if px <= 0.0 {
            return;
        }
        for (f, &wf) in w.iter().enumerate() {
            if wf <= 0.0 {
                continue;
            }
            for y in 0..ay.rows() {
                let a = ay.get(y, f);
                let p = wf * a;
                if p > 0.0 {
                    joint_info += p * (p / (px * lambda[f] * a)).ln();
                }
            }
        }
    })?;
    let target = mi_subset_target(model, &all, cap)?;
    clamp_exact(joint_info - target, "I(X_V; Z | Y)")
}
