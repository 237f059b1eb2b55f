//! Structural checks on a fitted model, run by exhaustive enumeration:
//! simplex invariants, monotonicity and diminishing returns of `g`, the band
//! `g(S) - I(X_V; Z | Y) <= f(S) <= g(S)`, greedy against exhaustive search,
//! and Monte-Carlo against exact joint entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{
    bandgap_constant, entropy_of_factors, joint_entropy_mc, mi_latent_of_factors, mi_subset_target, JointEntropy,
    DEFAULT_ENUMERATION_CAP,
};
use crate::selection::{exhaustive_select, greedy_select, lazy_greedy_select, EntropyMode, EXHAUSTIVE_CAP};
use crate::tensor::{CpdModel, FeatureSubset, SIMPLEX_TOL};

/// Largest feature count for the all-subsets scans (`3^N` subset pairs).
pub const MAX_SCAN_FEATURES: usize = 12;

pub const STRUCTURAL_TOL: f64 = 1e-10;
pub const GREEDY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    pub cap: u128,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 5000,
            seed: 0,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

fn check(name: &str, failures: Vec<String>, ok_detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            ok_detail
        } else {
            let shown: Vec<_> = failures.iter().take(5).cloned().collect();
            format!("{} violation(s): {}", failures.len(), shown.join("; "))
        },
    }
}

fn mask_factors(model: &CpdModel, mask: usize) -> Vec<usize> {
    (0..model.num_features())
        .filter(|k| mask >> k & 1 == 1)
        .map(|k| model.feature_factor(k))
        .collect()
}

fn mask_subset(model: &CpdModel, mask: usize) -> FeatureSubset {
    let idx: Vec<usize> = (0..model.num_features()).filter(|k| mask >> k & 1 == 1).collect();
    FeatureSubset::of(idx, model.num_features()).expect("valid mask")
}

/// `g` on every subset, indexed by bitmask.
pub fn all_subset_values(model: &CpdModel, cap: u128) -> Result<Vec<f64>> {
    let n = model.num_features();
    if n > MAX_SCAN_FEATURES {
        return Err(Error::Capacity {
            context: "subset scan".into(),
            required: n as u128,
            cap: MAX_SCAN_FEATURES as u128,
        });
    }
    (0..1usize << n)
        .map(|mask| {
            if mask == 0 {
                Ok(0.0)
            } else {
                mi_latent_of_factors(model, &mask_factors(model, mask), JointEntropy::Exact { cap })
            }
        })
        .collect()
}

/// Violations of monotonicity and diminishing returns over all `A ⊆ B`, `x ∉ B`.
pub fn submodularity_violations(g: &[f64], n: usize, tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let full = (1usize << n) - 1;
    for b in 0..=full {
        for x in (0..n).filter(|x| b >> x & 1 == 0) {
            let gain_b = g[b | 1 << x] - g[b];
            if gain_b < -tol {
                out.push(format!("monotonicity: g({b:#b} + {x}) < g({b:#b}) by {}", -gain_b));
            }
            // every submask a of b
            let mut a = b;
            loop {
                let gain_a = g[a | 1 << x] - g[a];
                if gain_a < gain_b - tol {
                    out.push(format!(
                        "diminishing returns: A={a:#b}, B={b:#b}, x={x}: {gain_a} < {gain_b}"
                    ));
                }
                if a == 0 {
                    break;
                }
                a = (a - 1) & b;
            }
        }
    }
    out
}

fn check_submodularity(model: &CpdModel, g: &[f64]) -> CheckResult {
    let n = model.num_features();
    check(
        "submodularity",
        submodularity_violations(g, n, STRUCTURAL_TOL),
        format!("monotone and submodular over all 3^{n} subset pairs"),
    )
}

fn check_band(model: &CpdModel, g: &[f64], cap: u128) -> Result<CheckResult> {
    let gap = bandgap_constant(model, cap).map_err(|e| rename(e, "target-mi-band"))?;
    let mut failures = Vec::new();
    for (mask, &gs) in g.iter().enumerate().skip(1) {
        let f = mi_subset_target(model, &mask_subset(model, mask), cap).map_err(|e| rename(e, "target-mi-band"))?;
        if f > gs + STRUCTURAL_TOL || f < gs - gap - STRUCTURAL_TOL {
            failures.push(format!("S={mask:#b}: f={f}, g={gs}, gap={gap}"));
        }
    }
    Ok(check("target-mi-band", failures, format!("band width I(X_V;Z|Y) = {gap}")))
}

fn check_greedy(model: &CpdModel) -> Result<CheckResult> {
    let n = model.num_features();
    let bound = 1.0 - (-1.0f64).exp();
    let mut failures = Vec::new();
    let mut optimal = 0;
    let mut tried = 0;
    for k in 1..=n {
        let greedy = greedy_select(model, k, EntropyMode::Exact, 1, 0)?;
        let lazy = lazy_greedy_select(model, k, EntropyMode::Exact, 1, 0)?;
        if lazy.order != greedy.order {
            failures.push(format!("K={k}: lazy order {:?} != greedy {:?}", lazy.order, greedy.order));
        }
        let best = match exhaustive_select(model, k) {
            Ok(b) => b,
            Err(Error::Capacity { .. }) => continue,
            Err(e) => return Err(e),
        };
        tried += 1;
        if greedy.final_value < bound * best.final_value - GREEDY_TOL {
            failures.push(format!("K={k}: greedy {} < (1-1/e) * {}", greedy.final_value, best.final_value));
        }
        if greedy.final_value >= best.final_value - GREEDY_TOL {
            optimal += 1;
        }
    }
    Ok(check(
        "greedy-vs-exhaustive",
        failures,
        format!("greedy optimal for {optimal}/{tried} budgets (exhaustive cap {EXHAUSTIVE_CAP})"),
    ))
}

fn check_mc(model: &CpdModel, opts: &VerifyOptions) -> Result<CheckResult> {
    let subset = FeatureSubset::all(model.num_features());
    let exact = entropy_of_factors(model, &model.feature_factors(&subset), opts.cap)
        .map_err(|e| rename(e, "mc-vs-exact-entropy"))?;
    let mc = joint_entropy_mc(model, &subset, opts.samples, opts.seed)?;
    let se = mc.standard_error.unwrap_or(0.0);
    let diff = (mc.value - exact).abs();
    let failures = if diff <= 4.0 * se + 1e-9 {
        vec![]
    } else {
        vec![format!("|{} - {exact}| = {diff} > 4 * {se}", mc.value)]
    };
    Ok(check(
        "mc-vs-exact-entropy",
        failures,
        format!("exact {exact}, MC {} ± {se} (T = {})", mc.value, opts.samples),
    ))
}

fn rename(e: Error, check: &str) -> Error {
    match e {
        Error::Capacity { context, required, cap } => Error::Capacity {
            context: format!("check {check}: {context}"),
            required,
            cap,
        },
        e => e,
    }
}

/// Run every check. Simplex violations short-circuit the rest.
pub fn verify_model(model: &CpdModel, opts: &VerifyOptions) -> Result<VerifyReport> {
    let violations = model.invariant_violations(SIMPLEX_TOL);
    let invariants = check("invariants", violations, "lambda and all factor columns on the simplex".into());
    if !invariants.passed {
        return Ok(VerifyReport {
            passed: false,
            checks: vec![invariants],
        });
    }
    let g = all_subset_values(model, opts.cap).map_err(|e| rename(e, "submodularity"))?;
    let mut checks = vec![invariants, check_submodularity(model, &g)];
    if model.label_index().is_some() {
        checks.push(check_band(model, &g, opts.cap)?);
    }
    checks.push(check_greedy(model)?);
    checks.push(check_mc(model, opts)?);
    Ok(VerifyReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
