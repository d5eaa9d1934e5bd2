use std::collections::HashSet;

use proptest::prelude::*;
use tplec_core::{
    accumulate, hill_number, resample_accumulation, resample_accumulation_serial, AbundanceTable,
};

fn table(rows: Vec<Vec<u64>>) -> AbundanceTable {
    let taxa = (0..rows[0].len()).map(|j| format!("otu{j}")).collect();
    let ids = (0..rows.len()).map(|i| format!("subject{i}")).collect();
    AbundanceTable::new(ids, taxa, rows).unwrap()
}

fn three_samples() -> AbundanceTable {
    table(vec![
        vec![4, 0, 1, 0, 2, 0],
        vec![0, 3, 1, 0, 0, 0],
        vec![1, 0, 0, 6, 0, 1],
    ])
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Diversity after each step by explicit pooling: set union for richness,
/// summed counts otherwise.
fn brute_force(rows: &[Vec<u64>], order: &[usize], q: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 1..=order.len() {
        let pooled: Vec<u64> = (0..rows[0].len())
            .map(|j| order[..k].iter().map(|&s| rows[s][j]).sum())
            .collect();
        if q == 0.0 {
            let present: HashSet<usize> = order[..k]
                .iter()
                .flat_map(|&s| {
                    rows[s]
                        .iter()
                        .enumerate()
                        .filter(|(_, &c)| c > 0)
                        .map(|(j, _)| j)
                })
                .collect();
            out.push(present.len() as f64);
        } else {
            let total: u64 = pooled.iter().sum();
            let p: Vec<f64> = pooled
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| c as f64 / total as f64)
                .collect();
            let d = if q == 1.0 {
                (-p.iter().map(|p| p * p.ln()).sum::<f64>()).exp()
            } else {
                p.iter()
                    .map(|p| p.powf(q))
                    .sum::<f64>()
                    .powf(1.0 / (1.0 - q))
            };
            out.push(d);
        }
    }
    out
}

#[test]
fn accumulation_matches_brute_force_for_every_order() {
    let t = three_samples();
    for q in [0.0, 1.0, 2.0] {
        for order in PERMUTATIONS {
            let got = accumulate(&t, &order, q).unwrap();
            let want = brute_force(t.counts(), &order, q);
            for (g, w) in got.iter().zip(&want) {
                assert!(
                    (g - w).abs() < 1e-12 * w.max(1.0),
                    "q={q} order={order:?}: {got:?} vs {want:?}"
                );
            }
        }
    }
}

#[test]
fn monte_carlo_converges_to_exhaustive_moments() {
    let t = three_samples();
    let replicates = 10_000;
    for q in [0.0, 2.0] {
        let curves: Vec<Vec<f64>> = PERMUTATIONS
            .iter()
            .map(|o| brute_force(t.counts(), o, q))
            .collect();
        let mc = resample_accumulation(&t, replicates, q, 17).unwrap();
        for k in 0..3 {
            let vals: Vec<f64> = curves.iter().map(|c| c[k]).collect();
            let mu = vals.iter().sum::<f64>() / 6.0;
            let sigma2 = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 6.0;
            let mu4 = vals.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / 6.0;
            let r = replicates as f64;
            let se_mean = (sigma2 / r).sqrt();
            let se_var = ((mu4 - sigma2 * sigma2 * (r - 3.0) / (r - 1.0)) / r).sqrt();
            assert!(
                (mc.mean_diversity[k] - mu).abs() <= 3.0 * se_mean,
                "q={q} k={k}: mean {} vs {mu} (se {se_mean})",
                mc.mean_diversity[k]
            );
            assert!(
                (mc.variance_diversity[k] - sigma2).abs() <= 3.0 * se_var,
                "q={q} k={k}: var {} vs {sigma2} (se {se_var})",
                mc.variance_diversity[k]
            );
        }
        assert_eq!(mc.variance_diversity[2], 0.0);
    }
}

#[test]
fn parallel_and_serial_runs_are_bit_identical() {
    let rows: Vec<Vec<u64>> = (0..40)
        .map(|i| {
            (0..60)
                .map(|j| ((i * 7 + j * 13) % 11) as u64 * u64::from((i + j) % 3 == 0))
                .collect()
        })
        .map(|mut r: Vec<u64>| {
            r[0] += 1;
            r
        })
        .collect();
    let t = table(rows);
    for q in [0.0, 1.0, 2.0] {
        let serial = resample_accumulation_serial(&t, 64, q, 5).unwrap();
        for threads in [1, 2, 7] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            let par = pool.install(|| resample_accumulation(&t, 64, q, 5).unwrap());
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&par.mean_diversity), bits(&serial.mean_diversity));
            assert_eq!(
                bits(&par.variance_diversity),
                bits(&serial.variance_diversity)
            );
        }
    }
}

fn tables() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (1usize..8, 1usize..12).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::collection::vec(0u64..20, m), n).prop_map(|mut rows| {
            for (i, r) in rows.iter_mut().enumerate() {
                let len = r.len();
                r[i % len] += 1;
            }
            rows
        })
    })
}

proptest! {
    #[test]
    fn richness_curves_are_monotone(rows in tables(), reps in 2usize..30, seed in any::<u64>()) {
        let t = table(rows);
        let curve = resample_accumulation(&t, reps, 0.0, seed).unwrap();
        prop_assert!(curve.mean_diversity.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*curve.variance_diversity.last().unwrap(), 0.0);
        prop_assert_eq!(*curve.mean_diversity.last().unwrap(), hill_number(&t.pooled(), 0.0).unwrap());
        prop_assert!(curve.variance_diversity.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn full_pool_matches_table_for_any_order(rows in tables(), q in 0.0f64..3.0, seed in any::<u64>()) {
        let t = table(rows);
        let curve = resample_accumulation(&t, 3, q, seed).unwrap();
        prop_assert_eq!(*curve.mean_diversity.last().unwrap(), hill_number(&t.pooled(), q).unwrap());
        prop_assert_eq!(*curve.variance_diversity.last().unwrap(), 0.0);
    }

    #[test]
    fn hill_numbers_ignore_count_order(mut counts in prop::collection::vec(0u64..50, 1..20), q in 0.0f64..4.0) {
        counts[0] += 1;
        let d = hill_number(&counts, q).unwrap();
        let mut rev = counts.clone();
        rev.reverse();
        let mut sorted = counts.clone();
        sorted.sort_unstable();
        prop_assert!((hill_number(&rev, q).unwrap() - d).abs() <= 1e-12 * d);
        prop_assert!((hill_number(&sorted, q).unwrap() - d).abs() <= 1e-12 * d);
        let richness = counts.iter().filter(|&&c| c > 0).count() as f64;
        prop_assert!(d <= richness * (1.0 + 1e-12) && d >= 1.0 - 1e-12);
    }

    #[test]
    fn pooling_a_sample_with_itself_keeps_richness(mut counts in prop::collection::vec(0u64..50, 1..20)) {
        counts[0] += 1;
        let doubled = table(vec![counts.clone(), counts.clone()]);
        let acc = accumulate(&doubled, &[0, 1], 0.0).unwrap();
        prop_assert_eq!(acc[0], acc[1]);
    }
}
