//! Brute-force reference computations shared by the integration tests.
//!
//! Everything here works from raw parameter arrays and full-grid
//! enumeration (mixed-radix decoding of a flat counter), and computes
//! information quantities from entropies of explicit marginal tables.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cpdsel::{CpdModel, Factor};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Plain copy of a model's parameters: `factors[n][i][f]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub lambda: Vec<f64>,
    pub factors: Vec<Vec<Vec<f64>>>,
    pub label: Option<usize>,
}

pub type Table = BTreeMap<Vec<usize>, f64>;

impl Dense {
    pub fn from_model(m: &CpdModel) -> Self {
        Self {
            lambda: m.lambda().to_vec(),
            factors: m.factors().iter().map(Factor::to_rows).collect(),
            label: m.label_index(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Vec::len).collect()
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    /// Factor indices of the features (every factor except the label).
    pub fn feature_vars(&self) -> Vec<usize> {
        (0..self.factors.len()).filter(|&n| Some(n) != self.label).collect()
    }

    /// `P(x, z)` for every full tuple `x` and latent state `z`.
    pub fn joint_with_latent(&self) -> Vec<(Vec<usize>, usize, f64)> {
        let mut out = Vec::new();
        for x in grid(&self.dims()) {
            for z in 0..self.rank() {
                let mut p = self.lambda[z];
                for (n, &i) in x.iter().enumerate() {
                    p *= self.factors[n][i][z];
                }
                out.push((x.clone(), z, p));
            }
        }
        out
    }

    /// `P(x)` over the full grid.
    pub fn joint(&self) -> Table {
        let mut t = Table::new();
        for (x, _, p) in self.joint_with_latent() {
            *t.entry(x).or_insert(0.0) += p;
        }
        t
    }

    /// Marginal table over `vars`; with `latent` the latent state is the last key entry.
    pub fn marginal(&self, vars: &[usize], latent: bool) -> Table {
        let mut t = Table::new();
        for (x, z, p) in self.joint_with_latent() {
            let mut key: Vec<usize> = vars.iter().map(|&n| x[n]).collect();
            if latent {
                key.push(z);
            }
            *t.entry(key).or_insert(0.0) += p;
        }
        t
    }

    pub fn entropy(&self, vars: &[usize], latent: bool) -> f64 {
        entropy(&self.marginal(vars, latent))
    }

    /// `I(X_vars; Z) = H(X) + H(Z) - H(X, Z)`.
    pub fn mi_latent(&self, vars: &[usize]) -> f64 {
        self.entropy(vars, false) + entropy_vec(&self.lambda) - self.entropy(vars, true)
    }

    /// `I(X_vars; Y) = H(X) + H(Y) - H(X, Y)`.
    pub fn mi_label(&self, vars: &[usize]) -> f64 {
        let y = self.label.expect("label");
        let mut with_y = vars.to_vec();
        with_y.push(y);
        self.entropy(vars, false) + self.entropy(&[y], false) - self.entropy(&with_y, false)
    }

    /// `I(X_V; Z | Y) = I(X_V; Z, Y) - I(X_V; Y)` over all features.
    pub fn bandgap(&self) -> f64 {
        let y = self.label.expect("label");
        let xs = self.feature_vars();
        let mut xy = xs.clone();
        xy.push(y);
        let h_x = self.entropy(&xs, false);
        let h_zy = self.entropy(&[y], true);
        let h_xzy = self.entropy(&xy, true);
        (h_x + h_zy - h_xzy) - self.mi_label(&xs)
    }

    /// `H(X_n | Z)` by a double sum over the factor.
    pub fn conditional_entropy(&self, n: usize) -> f64 {
        let mut h = 0.0;
        for (z, &l) in self.lambda.iter().enumerate() {
            for row in &self.factors[n] {
                let a = row[z];
                if a > 0.0 {
                    h -= l * a * a.ln();
                }
            }
        }
        h
    }

    /// Bayes-rule posterior over the label given a partial feature tuple.
    pub fn label_posterior(&self, observed: &[(usize, usize)]) -> Vec<f64> {
        let y = self.label.expect("label");
        let mut post = vec![0.0; self.factors[y].len()];
        for (x, p) in self.joint() {
            if observed.iter().all(|&(n, v)| x[n] == v) {
                post[x[y]] += p;
            }
        }
        let s: f64 = post.iter().sum();
        post.iter().map(|v| v / s).collect()
    }
}

/// All tuples of a grid, lexicographic, by decoding a flat counter.
pub fn grid(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut c| {
            let mut t = vec![0; dims.len()];
            for n in (0..dims.len()).rev() {
                t[n] = c % dims[n];
                c /= dims[n];
            }
            t
        })
        .collect()
}

pub fn entropy(t: &Table) -> f64 {
    t.values().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

pub fn entropy_vec(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Subsets of `0..n` as sorted index lists, by bitmask.
pub fn subsets(n: usize) -> Vec<Vec<usize>> {
    (0..1usize << n)
        .map(|mask| (0..n).filter(|k| mask >> k & 1 == 1).collect())
        .collect()
}

fn simplex(len: usize, rng: &mut ChaCha8Rng, power: i32) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| rng.gen::<f64>().powi(power) + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Random model built from this module's own generator, label last.
pub fn model_from_seed(dims: &[usize], rank: usize, seed: u64) -> CpdModel {
    model_with_power(dims, rank, seed, 1)
}

/// Like [`model_from_seed`], with factor columns concentrated by raising the
/// uniform draws to `power` before normalizing.
pub fn model_with_power(dims: &[usize], rank: usize, seed: u64, power: i32) -> CpdModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = simplex(rank, &mut rng, 1);
    let factors = dims
        .iter()
        .map(|&d| {
            let cols: Vec<Vec<f64>> = (0..rank).map(|_| simplex(d, &mut rng, power)).collect();
            let rows: Vec<Vec<f64>> = (0..d).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
            Factor::from_rows(&rows).unwrap()
        })
        .collect();
    CpdModel::new(lambda, factors, Some(dims.len() - 1)).unwrap()
}

/// Histogram of rows as a normalized table.
pub fn histogram(rows: &[Vec<usize>]) -> Table {
    let mut t = Table::new();
    for r in rows {
        *t.entry(r.clone()).or_insert(0.0) += 1.0;
    }
    let m = rows.len() as f64;
    t.values_mut().for_each(|v| *v /= m);
    t
}

/// `Σ p log(p / q)` over the support of `p`.
pub fn kl(p: &Table, q: &Table) -> f64 {
    p.iter()
        .filter(|(_, &pv)| pv > 0.0)
        .map(|(k, &pv)| pv * (pv / q.get(k).copied().unwrap_or(0.0)).ln())
        .sum()
}

/// Empirical marginals of each column of `rows`.
pub fn column_marginals(rows: &[Vec<usize>], dims: &[usize]) -> Vec<Vec<f64>> {
    let m = rows.len() as f64;
    dims.iter()
        .enumerate()
        .map(|(n, &d)| {
            let mut c = vec![0.0; d];
            for r in rows {
                c[r[n]] += 1.0;
            }
            c.into_iter().map(|v| v / m).collect()
        })
        .collect()
}

/// Draw `m` rows `(features, label)` from a model with the label as last factor.
pub fn sample_dataset(model: &CpdModel, m: usize, seed: u64) -> cpdsel::DiscreteDataset {
    let all: Vec<usize> = (0..model.num_factors()).collect();
    let rows = model.sample(&all, m, seed).unwrap();
    let label = model.label_index().unwrap();
    let dims = model.dims();
    let cards: Vec<usize> = (0..dims.len()).filter(|&n| n != label).map(|n| dims[n]).collect();
    let codes: Vec<Vec<usize>> = rows
        .iter()
        .map(|r| (0..r.len()).filter(|&n| n != label).map(|n| r[n]).collect())
        .collect();
    let labels: Vec<usize> = rows.iter().map(|r| r[label]).collect();
    cpdsel::DiscreteDataset::new(codes, labels, cards, dims[label]).unwrap()
}

/// CSV text and schema for a table with a latent class `z` in `0..4`. The two
/// features at `informative` each carry one bit of `z`, the label equals `z`
/// with 5% resampling noise, and every other feature is uniform noise.
pub fn planted_csv(m: usize, n: usize, informative: &[usize], seed: u64) -> (String, cpdsel::Schema) {
    assert_eq!(informative.len(), 2, "two informative features carry the two bits of z");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let header: Vec<String> = (0..n).map(|k| format!("x{k}")).chain(["y".to_string()]).collect();
    let mut csv = header.join(",") + "\n";
    for _ in 0..m {
        let z: usize = rng.gen_range(0..4);
        let mut cells = Vec::with_capacity(n + 1);
        for k in 0..n {
            let v: f64 = if informative.contains(&k) {
                // bit j of z, read with a little jitter inside its half of [0, 1]
                let bit = (z >> informative.iter().position(|&i| i == k).unwrap()) & 1;
                0.5 * bit as f64 + 0.45 * rng.gen::<f64>()
            } else {
                rng.gen()
            };
            cells.push(format!("{v}"));
        }
        let y = if rng.gen::<f64>() < 0.95 { z } else { rng.gen_range(0..4) };
        cells.push(format!("c{y}"));
        csv += &(cells.join(",") + "\n");
    }
    let mut schema = serde_json::Map::new();
    for k in 0..n {
        schema.insert(format!("x{k}"), "continuous".into());
    }
    schema.insert("y".into(), "label".into());
    (csv, cpdsel::Schema::from_json_str(&serde_json::Value::Object(schema).to_string()).unwrap())
}
