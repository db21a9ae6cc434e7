use std::collections::BTreeSet;

use proptest::prelude::*;
use treetilt::graphselect::energy_distance;
use treetilt::rng::seeded;
use treetilt::treegraph::{count_trees_over, enumerate_trees, sample_tree_uniform, validate};
use treetilt::{Family, IncompleteDataset, MissingPattern, MixtureModel, PatternGraph, TreeGraph};

fn gaussian_mixture() -> impl Strategy<Value = MixtureModel> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(0.1f64..1.0, k),
            prop::collection::vec(prop::collection::vec((-2.0f64..2.0, 0.5f64..2.0), d), k),
        )
            .prop_map(move |(w, params)| {
                let s: f64 = w.iter().sum();
                let w = w.iter().map(|v| v / s).collect();
                let theta: Vec<Vec<f64>> = params
                    .iter()
                    .map(|c| c.iter().flat_map(|(m, v)| [*m, *v]).collect())
                    .collect();
                MixtureModel::from_mean_params(Family::GaussianDiag { d }, w, &theta).unwrap()
            })
    })
}

fn binomial_mixture() -> impl Strategy<Value = MixtureModel> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(0.1f64..1.0, k),
            prop::collection::vec(prop::collection::vec(0.05f64..0.95, d), k),
            prop::collection::vec(1u32..20, d),
        )
            .prop_map(move |(w, p, trials)| {
                let s: f64 = w.iter().sum();
                let w = w.iter().map(|v| v / s).collect();
                MixtureModel::from_mean_params(Family::BinomialProduct { trials }, w, &p).unwrap()
            })
    })
}

/// Tilt safe for the Gaussian precision: linear terms free, quadratic terms
/// small enough to keep every variance finite.
fn gaussian_gamma(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-1.0f64..1.0, -0.1f64..0.1), d)
        .prop_map(|v| v.into_iter().flat_map(|(a, b)| [a, b]).collect())
}

fn close(a: &MixtureModel, b: &MixtureModel, tol: f64) -> bool {
    a.weights().iter().zip(b.weights()).all(|(x, y)| (x - y).abs() <= tol)
        && a.components()
            .iter()
            .flatten()
            .zip(b.components().iter().flatten())
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

/// A pattern set over `d` variables that always contains `1_d`.
fn pattern_set(d: usize) -> impl Strategy<Value = BTreeSet<MissingPattern>> {
    let full = (1u64 << d) - 1;
    prop::collection::btree_set(0..full, 0..(full as usize).min(6)).prop_map(move |masks| {
        masks
            .into_iter()
            .chain([full])
            .map(|m| MissingPattern::new(m, d).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tilt_composes_additively((m, g1, g2) in gaussian_mixture().prop_flat_map(|m| {
        let d = m.dim();
        (Just(m), gaussian_gamma(d), gaussian_gamma(d))
    })) {
        let sum: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        let twice = m.tilt(&g1).unwrap().tilt(&g2).unwrap();
        let once = m.tilt(&sum).unwrap();
        prop_assert!(close(&twice, &once, 1e-10));
    }

    #[test]
    fn tilt_by_zero_is_identity(m in binomial_mixture()) {
        let t = m.tilt(&vec![0.0; m.family().n_stats()]).unwrap();
        prop_assert!(close(&t, &m, 1e-14));
    }

    #[test]
    fn tilted_density_is_exponential_reweighting(
        (m, g, x, y) in gaussian_mixture().prop_flat_map(|m| {
            let d = m.dim();
            (
                Just(m),
                gaussian_gamma(d),
                prop::collection::vec(-3.0f64..3.0, d),
                prop::collection::vec(-3.0f64..3.0, d),
            )
        })
    ) {
        let t = m.tilt(&g).unwrap();
        let f = m.family().clone();
        let dot = |x: &[f64]| f.stats(x).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let cx = t.log_density(&x).unwrap() - m.log_density(&x).unwrap() - dot(&x);
        let cy = t.log_density(&y).unwrap() - m.log_density(&y).unwrap() - dot(&y);
        prop_assert!((cx - cy).abs() <= 1e-9 * (1.0 + cx.abs()), "{cx} vs {cy}");
    }

    #[test]
    fn tilted_weights_stay_normalized((m, g) in binomial_mixture().prop_flat_map(|m| {
        let n = m.family().n_stats();
        (Just(m), prop::collection::vec(-2.0f64..2.0, n))
    })) {
        let t = m.tilt(&g).unwrap();
        let s: f64 = t.weights().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(t.weights().iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn conditional_draws_keep_observed_cells(
        (m, mask, x, seed) in gaussian_mixture().prop_flat_map(|m| {
            let d = m.dim();
            (Just(m), 0u64..(1 << d), prop::collection::vec(-3.0f64..3.0, d), any::<u64>())
        })
    ) {
        let obs: Vec<Option<f64>> = x
            .iter()
            .enumerate()
            .map(|(j, v)| (mask >> j & 1 == 1).then_some(*v))
            .collect();
        let cond = m.conditional(&obs).unwrap();
        let draw = cond.sample(&mut seeded(seed));
        for (o, v) in obs.iter().zip(&draw) {
            if let Some(o) = o {
                prop_assert_eq!(o, v);
            }
        }
    }

    #[test]
    fn sampled_trees_validate((pats, seed) in (1usize..=4).prop_flat_map(pattern_set).prop_flat_map(|p| (Just(p), any::<u64>()))) {
        let t = sample_tree_uniform(&pats, &mut seeded(seed)).unwrap();
        prop_assert!(validate(&PatternGraph::from(&t)).is_ok());
        prop_assert_eq!(t.patterns(), &pats);
        for r in &pats {
            let path = t.path_to_source(r).unwrap();
            prop_assert_eq!(path.first().copied(), Some(t.source()));
            prop_assert_eq!(path.last(), Some(r));
            for w in path.windows(2) {
                prop_assert!(w[0].dominates(&w[1]).unwrap());
            }
        }
    }

    #[test]
    fn count_matches_enumeration(pats in (1usize..=3).prop_flat_map(pattern_set)) {
        let n = count_trees_over(&pats).unwrap();
        let listed: BTreeSet<TreeGraph> = enumerate_trees(&pats, 10_000).unwrap().collect();
        prop_assert_eq!(n, (listed.len() as u64).into());
        for t in &listed {
            prop_assert!(validate(&PatternGraph::from(t)).is_ok());
        }
    }

    #[test]
    fn tree_json_round_trips((pats, seed) in (1usize..=4).prop_flat_map(pattern_set).prop_flat_map(|p| (Just(p), any::<u64>()))) {
        let t = sample_tree_uniform(&pats, &mut seeded(seed)).unwrap();
        let text = serde_json::to_string(&t.to_json()).unwrap();
        let back = TreeGraph::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn pattern_string_round_trips(d in 1usize..=12, mask in any::<u64>()) {
        let p = MissingPattern::new(mask & ((1 << d) - 1), d).unwrap();
        prop_assert_eq!(p.to_string().parse::<MissingPattern>().unwrap(), p);
        prop_assert_eq!(p.n_observed() + p.n_missing(), d);
    }

    #[test]
    fn csv_round_trips_exactly(rows in (1usize..=4).prop_flat_map(|d| {
        prop::collection::vec(prop::collection::vec(prop::option::of(-1e6f64..1e6), d), 1..20)
    })) {
        let data = IncompleteDataset::from_rows(rows.clone()).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = IncompleteDataset::from_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.rows(), &rows[..]);
    }

    #[test]
    fn energy_distance_is_symmetric_and_nonnegative(
        xs in prop::collection::vec(prop::collection::vec(0u8..4, 2), 1..15),
        ys in prop::collection::vec(prop::collection::vec(0u8..4, 2), 1..15),
    ) {
        let f = |v: &Vec<Vec<u8>>| v.iter().map(|r| r.iter().map(|x| *x as f64).collect()).collect::<Vec<Vec<f64>>>();
        let (a, b) = (f(&xs), f(&ys));
        let ab = energy_distance(&a, &b).unwrap();
        let ba = energy_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert!(energy_distance(&a, &a).unwrap().abs() < 1e-12);
    }
}
