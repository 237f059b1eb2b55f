//! Sparse empirical PMF tensors and the simplex-constrained CPD model.
//!
//! A [`CpdModel`] is a latent class (naive Bayes) model of a joint PMF:
//!
//! ```text
//! P(i_1, .., i_V) = Σ_f λ(f) Π_n A_n(i_n, f)
//! ```
//!
//! where `λ` is the latent prior and column `f` of factor `A_n` is
//! `P(X_n | Z = f)`. Because every factor column sums to one, dropping a
//! factor is the same as summing the model over that variable.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::DiscreteDataset;
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Simplex tolerance for λ and factor columns.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Normalized empirical PMF stored over its support only.
///
/// Entries are kept in a `BTreeMap`, so iteration is in lexicographic tuple
/// order and every accumulation over the support is reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCountTensor {
    dims: Vec<usize>,
    entries: BTreeMap<Vec<usize>, f64>,
    total_samples: usize,
}

impl SparseCountTensor {
    /// Build an empirical PMF by counting index tuples.
    pub fn from_rows<'a, I>(dims: Vec<usize>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::arg("every variable needs cardinality >= 1"));
        }
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut m = 0usize;
        for (row, tuple) in rows.into_iter().enumerate() {
            if tuple.len() != dims.len() {
                return Err(Error::arg(format!(
                    "row {row} has {} values, expected {}",
                    tuple.len(),
                    dims.len()
                )));
            }
            for (variable, (&value, &cardinality)) in tuple.iter().zip(&dims).enumerate() {
                if value >= cardinality {
                    return Err(Error::IndexBounds {
                        variable,
                        row,
                        value,
                        cardinality,
                    });
                }
            }
            *counts.entry(tuple.to_vec()).or_insert(0) += 1;
            m += 1;
        }
        if m == 0 {
            return Err(Error::arg("empirical PMF needs at least one sample"));
        }
        let entries = counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / m as f64))
            .collect();
        Ok(Self {
            dims,
            entries,
            total_samples: m,
        })
    }

    /// Build from explicit masses. Masses must be positive and sum to one.
    pub fn from_entries(
        dims: Vec<usize>,
        entries: impl IntoIterator<Item = (Vec<usize>, f64)>,
        total_samples: usize,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in entries {
            if k.len() != dims.len() || k.iter().zip(&dims).any(|(&i, &d)| i >= d) {
                return Err(Error::arg(format!("tuple {k:?} outside dims {dims:?}")));
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::arg(format!("mass {v} at {k:?} is not strictly positive")));
            }
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::arg(format!("duplicate tuple {k:?}")));
            }
        }
        if map.is_empty() {
            return Err(Error::arg("empirical PMF needs at least one entry"));
        }
        let t = Self {
            dims,
            entries: map,
            total_samples,
        };
        if !t.is_normalized(1e-12) {
            return Err(Error::arg(format!("masses sum to {}, not 1", t.total_mass())));
        }
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn total_samples(&self) -> usize {
        self.total_samples
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Support entries in lexicographic tuple order.
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.entries.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    pub fn get(&self, tuple: &[usize]) -> f64 {
        self.entries.get(tuple).copied().unwrap_or(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.total_mass() - 1.0).abs() <= tol
    }

    /// Marginal PMF of variable `n`.
    pub fn marginal(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims[n]];
        for (k, v) in self.iter() {
            out[k[n]] += v;
        }
        out
    }
}

/// Build the empirical joint PMF of all features followed by the label.
pub fn build_empirical_pmf(dataset: &DiscreteDataset) -> Result<SparseCountTensor> {
    let features: Vec<usize> = (0..dataset.num_features()).collect();
    build_empirical_pmf_columns(dataset, &features, true)
}

/// Empirical joint PMF over the listed feature columns, optionally with the
/// label appended as the last variable.
pub fn build_empirical_pmf_columns(
    dataset: &DiscreteDataset,
    features: &[usize],
    include_label: bool,
) -> Result<SparseCountTensor> {
    if let Some(&bad) = features.iter().find(|&&f| f >= dataset.num_features()) {
        return Err(Error::arg(format!("feature {bad} out of range")));
    }
    let mut dims: Vec<usize> = features
        .iter()
        .map(|&f| dataset.feature_cardinalities()[f])
        .collect();
    if include_label {
        dims.push(dataset.label_cardinality());
    }
    let tuples: Vec<Vec<usize>> = (0..dataset.num_samples())
        .map(|r| {
            let row = dataset.row(r);
            let mut t: Vec<usize> = features.iter().map(|&f| row[f]).collect();
            if include_label {
                t.push(dataset.labels()[r]);
            }
            t
        })
        .collect();
    SparseCountTensor::from_rows(dims, tuples.iter().map(|t| t.as_slice()))
}

/// Dense `rows x rank` matrix, row-major. Columns are conditional PMFs.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    rows: usize,
    rank: usize,
    data: Vec<f64>,
}

impl Factor {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rank = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || rank == 0 || rows.iter().any(|r| r.len() != rank) {
            return Err(Error::arg("factor must be a nonempty rectangular matrix"));
        }
        Ok(Self {
            rows: rows.len(),
            rank,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub(crate) fn from_data(rows: usize, rank: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * rank);
        Self { rows, rank, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn get(&self, i: usize, f: usize) -> f64 {
        self.data[i * self.rank + f]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn column(&self, f: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, f)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    fn column_sum(&self, f: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, f)).sum()
    }
}

/// Rank-F nonnegative CPD with stochastic factors: a latent class model.
#[derive(Clone, Debug, PartialEq)]
pub struct CpdModel {
    lambda: Vec<f64>,
    factors: Vec<Factor>,
    label_index: Option<usize>,
}

impl CpdModel {
    /// Build a model, checking the simplex invariants within [`SIMPLEX_TOL`].
    pub fn new(lambda: Vec<f64>, factors: Vec<Factor>, label_index: Option<usize>) -> Result<Self> {
        let model = Self::from_parts_unchecked(lambda, factors, label_index)?;
        let violations = model.invariant_violations(SIMPLEX_TOL);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidModel(v.clone()));
        }
        Ok(model)
    }

    /// Build a model checking only shapes. Used when loading models that are
    /// then audited with [`CpdModel::invariant_violations`].
    pub fn from_parts_unchecked(
        lambda: Vec<f64>,
        factors: Vec<Factor>,
        label_index: Option<usize>,
    ) -> Result<Self> {
        let rank = lambda.len();
        if rank == 0 {
            return Err(Error::arg("rank must be >= 1"));
        }
        if factors.is_empty() {
            return Err(Error::arg("model needs at least one factor"));
        }
        if let Some(n) = factors.iter().position(|a| a.rank != rank) {
            return Err(Error::arg(format!(
                "factor {n} has {} columns, lambda has {rank}",
                factors[n].rank
            )));
        }
        if let Some(l) = label_index {
            if l >= factors.len() {
                return Err(Error::arg(format!("label index {l} out of range")));
            }
        }
        Ok(Self {
            lambda,
            factors,
            label_index,
        })
    }

    /// Random stochastic model: λ and every column drawn i.i.d. uniform and
    /// normalized to the simplex.
    pub fn random(dims: &[usize], rank: usize, label_index: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Self> {
        if rank == 0 {
            return Err(Error::arg("rank must be >= 1"));
        }
        let lambda = random_simplex(rank, rng);
        let factors = dims
            .iter()
            .map(|&rows| {
                let mut data = vec![0.0; rows * rank];
                for f in 0..rank {
                    let col = random_simplex(rows, rng);
                    for (i, v) in col.into_iter().enumerate() {
                        data[i * rank + f] = v;
                    }
                }
                Factor::from_data(rows, rank, data)
            })
            .collect();
        Self::from_parts_unchecked(lambda, factors, label_index)
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, n: usize) -> &Factor {
        &self.factors[n]
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|a| a.rows).collect()
    }

    pub fn label_index(&self) -> Option<usize> {
        self.label_index
    }

    /// Number of non-label variables.
    pub fn num_features(&self) -> usize {
        self.factors.len() - usize::from(self.label_index.is_some())
    }

    /// Factor index holding feature position `k` (features skip the label).
    pub fn feature_factor(&self, k: usize) -> usize {
        match self.label_index {
            Some(l) if k >= l => k + 1,
            _ => k,
        }
    }

    pub fn feature_factors(&self, subset: &FeatureSubset) -> Vec<usize> {
        subset.indices().iter().map(|&k| self.feature_factor(k)).collect()
    }

    /// Number of latent states carrying positive prior mass.
    pub fn effective_rank(&self) -> usize {
        self.lambda.iter().filter(|&&l| l > 0.0).count()
    }

    /// Human-readable list of simplex violations at tolerance `tol`.
    pub fn invariant_violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(f) = self.lambda.iter().position(|&l| !(l >= 0.0) || !l.is_finite()) {
            out.push(format!("lambda[{f}] = {} is negative or not finite", self.lambda[f]));
        }
        let s: f64 = self.lambda.iter().sum();
        if !((s - 1.0).abs() <= tol) {
            out.push(format!("lambda sums to {s}"));
        }
        for (n, a) in self.factors.iter().enumerate() {
            if let Some(p) = a.data.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
                out.push(format!(
                    "factor {n} entry ({}, {}) = {} is negative or not finite",
                    p / a.rank,
                    p % a.rank,
                    a.data[p]
                ));
            }
            for f in 0..a.rank {
                let cs = a.column_sum(f);
                if !((cs - 1.0).abs() <= tol) {
                    out.push(format!("factor {n} column {f} sums to {cs}"));
                }
            }
        }
        out
    }

    fn check_tuple(&self, tuple: &[usize]) -> Result<()> {
        if tuple.len() != self.factors.len() {
            return Err(Error::arg(format!(
                "tuple has {} indices, model has {} variables",
                tuple.len(),
                self.factors.len()
            )));
        }
        for (variable, (&value, a)) in tuple.iter().zip(&self.factors).enumerate() {
            if value >= a.rows {
                return Err(Error::IndexBounds {
                    variable,
                    row: 0,
                    value,
                    cardinality: a.rows,
                });
            }
        }
        Ok(())
    }

    /// `Σ_f λ(f) Π_n A_n(i_n, f)`.
    pub fn eval(&self, tuple: &[usize]) -> Result<f64> {
        self.check_tuple(tuple)?;
        Ok(self.eval_unchecked(tuple))
    }

    pub(crate) fn eval_unchecked(&self, tuple: &[usize]) -> f64 {
        (0..self.rank())
            .map(|f| {
                tuple
                    .iter()
                    .zip(&self.factors)
                    .fold(self.lambda[f], |acc, (&i, a)| acc * a.get(i, f))
            })
            .sum()
    }

    /// Keep the listed factors (in the given order) and drop the rest.
    pub fn marginalize(&self, keep: &[usize]) -> Result<CpdModel> {
        if keep.is_empty() {
            return Err(Error::arg("marginalize needs a nonempty set of variables"));
        }
        let mut seen = vec![false; self.factors.len()];
        for &n in keep {
            if n >= self.factors.len() || std::mem::replace(&mut seen[n], true) {
                return Err(Error::arg(format!("invalid or repeated variable {n}")));
            }
        }
        let label_index = self
            .label_index
            .and_then(|l| keep.iter().position(|&n| n == l));
        Ok(CpdModel {
            lambda: self.lambda.clone(),
            factors: keep.iter().map(|&n| self.factors[n].clone()).collect(),
            label_index,
        })
    }

    /// Reduced model over a feature subset, optionally keeping the label factor last.
    pub fn marginalize_features(&self, subset: &FeatureSubset, include_label: bool) -> Result<CpdModel> {
        let mut keep = self.feature_factors(subset);
        if include_label {
            let l = self
                .label_index
                .ok_or_else(|| Error::arg("model has no label factor"))?;
            keep.push(l);
        }
        self.marginalize(&keep)
    }

    /// Prior predictive of the label, `Σ_f λ(f) A_label(:, f)`.
    pub fn label_marginal(&self) -> Option<Vec<f64>> {
        let a = &self.factors[self.label_index?];
        Some(
            (0..a.rows)
                .map(|y| (0..self.rank()).map(|f| self.lambda[f] * a.get(y, f)).sum())
                .collect(),
        )
    }

    /// Draw `count` tuples over `factor_indices`: first `f ~ λ`, then each
    /// kept variable from column `f` of its factor.
    ///
    /// The latent draws and each variable's draws come from separate streams
    /// derived from `seed` (the variable stream is keyed by factor index), so
    /// two calls with the same seed on overlapping variable sets share the
    /// latent sequence and the draws of the common variables.
    pub fn sample(&self, factor_indices: &[usize], count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        if count == 0 {
            return Err(Error::arg("sample count must be >= 1"));
        }
        if let Some(&bad) = factor_indices.iter().find(|&&n| n >= self.factors.len()) {
            return Err(Error::arg(format!("variable {bad} out of range")));
        }
        let latent = self.sample_latent(count, seed);
        let mut out = vec![Vec::with_capacity(factor_indices.len()); count];
        for &n in factor_indices {
            let draws = self.sample_variable(n, &latent, seed);
            for (row, v) in out.iter_mut().zip(draws) {
                row.push(v);
            }
        }
        Ok(out)
    }

    pub(crate) fn sample_latent(&self, count: usize, seed: u64) -> Vec<usize> {
        let cum = cumulative(&self.lambda);
        let mut rng = derived_rng(seed, "latent", &[]);
        (0..count).map(|_| draw(&cum, &mut rng)).collect()
    }

    pub(crate) fn sample_variable(&self, n: usize, latent: &[usize], seed: u64) -> Vec<usize> {
        let a = &self.factors[n];
        let cums: Vec<Vec<f64>> = (0..self.rank()).map(|f| cumulative(&a.column(f))).collect();
        let mut rng = derived_rng(seed, "variable", &[n as u64]);
        latent.iter().map(|&f| draw(&cums[f], &mut rng)).collect()
    }

    /// Feature-subset sampling convenience.
    pub fn sample_features(&self, subset: &FeatureSubset, count: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        self.sample(&self.feature_factors(subset), count, seed)
    }
}

fn random_simplex(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() + f64::MIN_POSITIVE).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

/// Inverse-CDF draw. Indices with zero mass are never returned.
fn draw(cum: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total = *cum.last().unwrap();
    let u = rng.gen::<f64>() * total;
    match cum.iter().position(|&c| c > u) {
        Some(i) => i,
        // u landed on the rounding gap at the top; take the last positive-mass index
        None => {
            let mut i = cum.len() - 1;
            while i > 0 && cum[i] == cum[i - 1] {
                i -= 1;
            }
            i
        }
    }
}

/// Ordered set of distinct feature positions within a budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSubset {
    indices: Vec<usize>,
    budget: usize,
}

impl FeatureSubset {
    /// `num_features` excludes the label, so label positions can never appear.
    pub fn new(indices: Vec<usize>, budget: usize, num_features: usize) -> Result<Self> {
        if indices.len() > budget {
            return Err(Error::arg(format!(
                "subset has {} features, budget is {budget}",
                indices.len()
            )));
        }
        let mut seen = vec![false; num_features];
        for &k in &indices {
            if k >= num_features {
                return Err(Error::arg(format!("feature {k} out of range 0..{num_features}")));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::arg(format!("feature {k} repeated")));
            }
        }
        Ok(Self { indices, budget })
    }

    /// Subset whose budget is its own size.
    pub fn of(indices: Vec<usize>, num_features: usize) -> Result<Self> {
        let b = indices.len();
        Self::new(indices, b, num_features)
    }

    pub fn all(num_features: usize) -> Self {
        Self {
            indices: (0..num_features).collect(),
            budget: num_features,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
