mod common;

use common::{grid, subsets, Dense};
use cpdsel::data::{split_indices, EqualWidthBins, RawValues};
use cpdsel::info::DEFAULT_ENUMERATION_CAP;
use cpdsel::verify::{all_subset_values, submodularity_violations};
use cpdsel::{
    bandgap_constant, discretize_equal_width, em_fit_observed, exhaustive_select, greedy_select, knn_classify,
    lazy_greedy_select, mi_subset_target, CpdModel, DiscreteDataset, EntropyMode, Factor, FeatureSubset, FitConfig,
    Metric, ModelDocument, RawTable, Schema, SparseCountTensor, SplitSpec,
};
use proptest::prelude::*;

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Model with `dims` (label last) and `rank`, weights drawn by proptest.
fn arb_model_with(dims: Vec<usize>, rank: usize) -> impl Strategy<Value = CpdModel> {
    let cols: Vec<_> = dims
        .iter()
        .map(|&d| prop::collection::vec(prop::collection::vec(0.01f64..1.0, d), rank))
        .collect();
    (prop::collection::vec(0.01f64..1.0, rank), cols).prop_map(move |(lambda, cols)| {
        let factors = cols
            .into_iter()
            .map(|cs| {
                let cs: Vec<Vec<f64>> = cs.into_iter().map(normalized).collect();
                let rows: Vec<Vec<f64>> = (0..cs[0].len()).map(|i| cs.iter().map(|c| c[i]).collect()).collect();
                Factor::from_rows(&rows).unwrap()
            })
            .collect();
        let label = dims.len() - 1;
        CpdModel::new(normalized(lambda), factors, Some(label)).unwrap()
    })
}

fn arb_model(max_features: usize, max_dim: usize, max_rank: usize) -> impl Strategy<Value = CpdModel> {
    (prop::collection::vec(2..=max_dim, 2..=max_features + 1), 1..=max_rank)
        .prop_flat_map(|(dims, rank)| arb_model_with(dims, rank))
}

fn arb_rows(dims: Vec<usize>, max_rows: usize) -> impl Strategy<Value = (Vec<usize>, Vec<Vec<usize>>)> {
    let row = dims.iter().map(|&d| 0..d).collect::<Vec<_>>();
    prop::collection::vec(row, 1..=max_rows).prop_map(move |rows| (dims.clone(), rows))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn models_are_normalized_over_the_grid(m in arb_model(4, 3, 4)) {
        prop_assert!(m.invariant_violations(1e-12).is_empty());
        let total: f64 = grid(&m.dims()).iter().map(|t| m.eval(t).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn marginalization_matches_enumeration(m in arb_model(4, 3, 3), mask in 1usize..32) {
        let v = m.num_factors();
        let keep: Vec<usize> = (0..v).filter(|n| mask >> n & 1 == 1).collect();
        prop_assume!(!keep.is_empty());
        let reduced = m.marginalize(&keep).unwrap();
        for (k, p) in Dense::from_model(&m).marginal(&keep, false) {
            prop_assert!((reduced.eval(&k).unwrap() - p).abs() < 1e-10);
        }
    }

    #[test]
    fn model_documents_round_trip(m in arb_model(4, 4, 4)) {
        let doc = ModelDocument::from_model(&m, Some(3), None);
        let back = ModelDocument::from_json(&doc.to_json().unwrap()).unwrap().to_model().unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn em_is_monotone_and_stays_on_the_simplex(
        (dims, rows) in prop::collection::vec(2usize..=4, 2..=4).prop_flat_map(|d| arb_rows(d, 80)),
        rank in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let emp = SparseCountTensor::from_rows(dims, rows.iter().map(|r| r.as_slice())).unwrap();
        let mut bad = Vec::new();
        let (_, report) = em_fit_observed(&emp, &FitConfig::new(rank, seed), |sweep, m| {
            if !m.invariant_violations(1e-12).is_empty() {
                bad.push(sweep);
            }
        }).unwrap();
        prop_assert!(bad.is_empty(), "off-simplex after sweeps {:?}", bad);
        prop_assert!(report.iterations_run <= 500);
        for w in report.kl_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn latent_mi_is_monotone_submodular(m in arb_model(5, 3, 4)) {
        let n = m.num_features();
        let g = all_subset_values(&m, DEFAULT_ENUMERATION_CAP).unwrap();
        let v = submodularity_violations(&g, n, 1e-10);
        prop_assert!(v.is_empty(), "{:?}", v);
    }

    #[test]
    fn target_mi_lies_in_the_band(m in arb_model(4, 3, 3)) {
        let n = m.num_features();
        let gap = bandgap_constant(&m, DEFAULT_ENUMERATION_CAP).unwrap();
        prop_assert!(gap >= 0.0);
        let g = all_subset_values(&m, DEFAULT_ENUMERATION_CAP).unwrap();
        for (mask, s) in subsets(n).into_iter().enumerate().skip(1) {
            let f = mi_subset_target(&m, &FeatureSubset::of(s, n).unwrap(), DEFAULT_ENUMERATION_CAP).unwrap();
            prop_assert!(f <= g[mask] + 1e-10 && f >= g[mask] - gap - 1e-10);
        }
    }

    #[test]
    fn greedy_meets_the_bound_and_lazy_agrees(m in arb_model(6, 3, 3), k in 1usize..=3) {
        let n = m.num_features();
        prop_assume!(k <= n);
        let greedy = greedy_select(&m, k, EntropyMode::Exact, 1, 0).unwrap();
        let lazy = lazy_greedy_select(&m, k, EntropyMode::Exact, 1, 0).unwrap();
        let best = exhaustive_select(&m, k).unwrap();
        prop_assert!(greedy.final_value >= (1.0 - (-1.0f64).exp()) * best.final_value - 1e-8);
        prop_assert!(greedy.final_value <= best.final_value + 1e-10);
        prop_assert_eq!(&lazy.order, &greedy.order);
        prop_assert!(lazy.evaluations() <= greedy.evaluations());
        prop_assert!(greedy.gains.iter().all(|&g| g >= -1e-10));
    }
}

// ---------- data pipeline ----------

#[derive(Clone, Debug)]
enum GenColumn {
    Continuous(Vec<f64>),
    Categorical(Vec<String>),
}

fn arb_table(rows: usize) -> impl Strategy<Value = (Vec<GenColumn>, Vec<String>)> {
    let col = prop_oneof![
        prop::collection::vec(-1e3f64..1e3, rows).prop_map(GenColumn::Continuous),
        prop::collection::vec(prop::sample::select(vec!["red", "green", "blue", "x y"]), rows)
            .prop_map(|v| GenColumn::Categorical(v.into_iter().map(String::from).collect())),
    ];
    (
        prop::collection::vec(col, 1..=4),
        prop::collection::vec(prop::sample::select(vec!["yes", "no", "maybe"]), rows)
            .prop_map(|v| v.into_iter().map(String::from).collect()),
    )
}

fn render(cols: &[GenColumn], labels: &[String]) -> (String, Schema) {
    let mut header: Vec<String> = (0..cols.len()).map(|k| format!("f{k}")).collect();
    header.push("class".into());
    let mut csv = header.join(",") + "\n";
    for r in 0..labels.len() {
        let mut cells: Vec<String> = cols
            .iter()
            .map(|c| match c {
                GenColumn::Continuous(v) => format!("{}", v[r]),
                GenColumn::Categorical(v) => v[r].clone(),
            })
            .collect();
        cells.push(labels[r].clone());
        csv += &(cells.join(",") + "\n");
    }
    let mut schema = serde_json::Map::new();
    for (k, c) in cols.iter().enumerate() {
        let kind = match c {
            GenColumn::Continuous(_) => "continuous",
            GenColumn::Categorical(_) => "categorical",
        };
        schema.insert(format!("f{k}"), kind.into());
    }
    schema.insert("class".into(), "label".into());
    (csv, Schema::from_json_str(&serde_json::Value::Object(schema).to_string()).unwrap())
}

/// Reference binning: count the interior edges at or below `x`.
fn reference_bin(train: &[f64], bins: usize, x: f64) -> usize {
    let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return 0;
    }
    let w = (hi - lo) / bins as f64;
    (1..bins).filter(|&k| x >= lo + k as f64 * w).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ingest_write_ingest_round_trips((cols, labels) in arb_table(100)) {
        let (csv, schema) = render(&cols, &labels);
        let table = RawTable::from_reader(csv.as_bytes(), &schema).unwrap();
        for (gen, col) in cols.iter().zip(table.feature_columns()) {
            match (gen, &col.values) {
                (GenColumn::Continuous(v), RawValues::Continuous(w)) => prop_assert_eq!(v, w),
                (GenColumn::Categorical(v), RawValues::Categorical { codes, levels }) => {
                    let decoded: Vec<&String> = codes.iter().map(|&c| &levels[c]).collect();
                    prop_assert_eq!(decoded, v.iter().collect::<Vec<_>>());
                }
                _ => prop_assert!(false, "column kind changed"),
            }
        }
        let mut out = Vec::new();
        table.write_csv(&mut out).unwrap();
        let again = RawTable::from_reader(out.as_slice(), &schema).unwrap();
        prop_assert_eq!(again, table);
    }

    #[test]
    fn discretization_matches_reference(
        (cols, labels) in arb_table(60),
        bins in 2usize..=7,
        cut in 1usize..60,
    ) {
        let (csv, schema) = render(&cols, &labels);
        let table = RawTable::from_reader(csv.as_bytes(), &schema).unwrap();
        let fit_rows: Vec<usize> = (0..cut).collect();
        let ds = discretize_equal_width(&table, bins, &fit_rows).unwrap();
        for (k, gen) in cols.iter().enumerate() {
            if let GenColumn::Continuous(v) = gen {
                let train: Vec<f64> = fit_rows.iter().map(|&r| v[r]).collect();
                for (r, &x) in v.iter().enumerate() {
                    prop_assert_eq!(ds.row(r)[k], reference_bin(&train, bins, x));
                }
            }
            for r in 0..ds.num_samples() {
                prop_assert!(ds.row(r)[k] < ds.feature_cardinalities()[k]);
            }
        }
    }

    #[test]
    fn bin_edges_ignore_rows_outside_the_fit_set(
        train in prop::collection::vec(-50f64..50.0, 2..30),
        test_a in prop::collection::vec(-500f64..500.0, 1..10),
        test_b in prop::collection::vec(-500f64..500.0, 1..10),
    ) {
        let a = EqualWidthBins::fit(train.iter().copied(), 5).unwrap();
        prop_assert_eq!(a.edges(), EqualWidthBins::fit(train.iter().copied(), 5).unwrap().edges());
        for &x in test_a.iter().chain(&test_b) {
            prop_assert!(a.code(x) < a.cardinality());
        }
        // the fitted rule depends on the training values only
        let mut shuffled = train.clone();
        shuffled.reverse();
        prop_assert_eq!(EqualWidthBins::fit(shuffled, 5).unwrap().edges(), a.edges());
    }

    #[test]
    fn splits_partition_the_rows(m in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>(), run in 0usize..10) {
        let spec = SplitSpec { train_fraction: frac, monte_carlo_runs: 10, seed };
        let n_train = (frac * m as f64).floor() as usize;
        prop_assume!(n_train > 0 && n_train < m);
        let (tr, te) = split_indices(m, &spec, run).unwrap();
        prop_assert_eq!(tr.len(), n_train);
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..m).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(m, &spec, run).unwrap(), (tr, te));
    }
}

// ---------- 1-NN ----------

fn reference_knn(train: &DiscreteDataset, test: &DiscreteDataset, features: &[usize], metric: Metric) -> Vec<usize> {
    (0..test.num_samples())
        .map(|t| {
            let mut best = (usize::MAX, 0);
            for r in 0..train.num_samples() {
                let mut d = 0;
                for &k in features {
                    let (a, b) = (train.row(r)[k], test.row(t)[k]);
                    d += match metric {
                        Metric::Hamming => usize::from(a != b),
                        Metric::Manhattan => a.abs_diff(b),
                    };
                }
                if d < best.0 {
                    best = (d, train.labels()[r]);
                }
            }
            best.1
        })
        .collect()
}

fn arb_dataset(rows: usize, cards: Vec<usize>) -> impl Strategy<Value = DiscreteDataset> {
    let row = cards.iter().map(|&c| 0..c).collect::<Vec<_>>();
    (prop::collection::vec(row, rows), prop::collection::vec(0usize..3, rows))
        .prop_map(move |(codes, labels)| DiscreteDataset::new(codes, labels, cards.clone(), 3).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn knn_matches_quadratic_scan(
        (train, test) in prop::collection::vec(2usize..5, 6).prop_flat_map(|c| (arb_dataset(200, c.clone()), arb_dataset(50, c))),
        mask in 1usize..64,
        manhattan in any::<bool>(),
    ) {
        let features: Vec<usize> = (0..6).filter(|k| mask >> k & 1 == 1).collect();
        let metric = if manhattan { Metric::Manhattan } else { Metric::Hamming };
        let subset = FeatureSubset::of(features.clone(), 6).unwrap();
        let got = knn_classify(&train, &test, &subset, metric).unwrap();
        prop_assert_eq!(got, reference_knn(&train, &test, &features, metric));
    }
}
