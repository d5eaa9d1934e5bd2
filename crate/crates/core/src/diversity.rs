//! Hill numbers and resampled diversity-accumulation curves.
//!
//! An accumulation curve pools whole samples one at a time in a random
//! order and records the diversity of the pool after each addition.
//! Averaging over many random orders gives the per-step mean and variance
//! that feed both the cutoff fit and Taylor's power law.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regression::VarianceMeanPair;
use crate::scalar::{from_u64, from_usize, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiversityError {
    #[error("EmptyCommunity: all counts are zero")]
    EmptyCommunity,
    #[error("NegativeOrder: diversity order must be >= 0, got {0}")]
    NegativeOrder(f64),
    #[error("InvalidPermutation: order is not a permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("EmptySample: sample {0:?} has no positive count")]
    EmptySample(String),
    #[error("EmptyTable: the table has no samples")]
    EmptyTable,
    #[error("TooFewReplicates: need at least 2 replicates, got {0}")]
    TooFewReplicates(usize),
}

/// Samples × taxa matrix of non-negative integer counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbundanceTable {
    sample_ids: Vec<String>,
    taxon_ids: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl AbundanceTable {
    pub fn new(
        sample_ids: Vec<String>,
        taxon_ids: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self, DiversityError> {
        if sample_ids.is_empty() {
            return Err(DiversityError::EmptyTable);
        }
        if counts.len() != sample_ids.len() {
            return Err(DiversityError::DimensionMismatch(format!(
                "{} sample ids but {} count rows",
                sample_ids.len(),
                counts.len()
            )));
        }
        for (id, row) in sample_ids.iter().zip(&counts) {
            if row.len() != taxon_ids.len() {
                return Err(DiversityError::DimensionMismatch(format!(
                    "sample {id:?} has {} counts for {} taxa",
                    row.len(),
                    taxon_ids.len()
                )));
            }
            if row.iter().all(|&c| c == 0) {
                return Err(DiversityError::EmptySample(id.clone()));
            }
        }
        Ok(Self {
            sample_ids,
            taxon_ids,
            counts,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn taxon_ids(&self) -> &[String] {
        &self.taxon_ids
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_taxa(&self) -> usize {
        self.taxon_ids.len()
    }

    /// Element-wise sum of every sample.
    pub fn pooled(&self) -> Vec<u64> {
        let mut pool = vec![0u64; self.n_taxa()];
        for row in &self.counts {
            for (p, &c) in pool.iter_mut().zip(row) {
                *p += c;
            }
        }
        pool
    }
}

/// Hill number of order `q` for a vector of counts.
///
/// `q = 0` is richness, `q = 1` the exponential of Shannon entropy and
/// `q = 2` inverse Simpson concentration.
pub fn hill_number<T: Scalar>(counts: &[u64], q: T) -> Result<T, DiversityError> {
    if !(q >= T::zero()) {
        return Err(DiversityError::NegativeOrder(
            q.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(DiversityError::EmptyCommunity);
    }
    let positive = counts.iter().copied().filter(|&c| c > 0);
    if q == T::zero() {
        return Ok(from_usize(positive.count()));
    }
    let total: T = from_u64(total);
    if q == T::one() {
        let entropy = positive
            .map(|c| {
                let p = from_u64::<T>(c) / total;
                -p * p.ln()
            })
            .sum::<T>();
        return Ok(entropy.exp());
    }
    let moment = positive
        .map(|c| (from_u64::<T>(c) / total).powf(q))
        .sum::<T>();
    Ok(moment.powf(T::one() / (T::one() - q)))
}

fn check_permutation(order: &[usize], n: usize) -> Result<(), DiversityError> {
    if order.len() != n {
        return Err(DiversityError::InvalidPermutation(n));
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || seen[i] {
            return Err(DiversityError::InvalidPermutation(n));
        }
        seen[i] = true;
    }
    Ok(())
}

/// Diversity of the pool after adding each sample of `order` in turn.
pub fn accumulate<T: Scalar>(
    table: &AbundanceTable,
    order: &[usize],
    q: T,
) -> Result<Vec<T>, DiversityError> {
    check_permutation(order, table.n_samples())?;
    if !(q >= T::zero()) {
        return Err(DiversityError::NegativeOrder(
            q.to_f64().unwrap_or(f64::NAN),
        ));
    }
    let mut pool = vec![0u64; table.n_taxa()];
    let mut richness = 0usize;
    let mut out = Vec::with_capacity(order.len());
    for &s in order {
        for (p, &c) in pool.iter_mut().zip(&table.counts[s]) {
            if c > 0 {
                if *p == 0 {
                    richness += 1;
                }
                *p += c;
            }
        }
        if q == T::zero() {
            out.push(from_usize(richness));
        } else {
            out.push(hill_number(&pool, q)?);
        }
    }
    Ok(out)
}

/// Per-step mean and variance of cumulative diversity across random
/// sample orders. Step `k` (1-based) pools `k` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationCurve<T> {
    pub mean_diversity: Vec<T>,
    /// Unbiased (n − 1) variance across replicates.
    pub variance_diversity: Vec<T>,
    pub replicates: usize,
    pub q: T,
    pub seed: u64,
}

impl<T: Scalar> AccumulationCurve<T> {
    pub fn len(&self) -> usize {
        self.mean_diversity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_diversity.is_empty()
    }

    /// `(k, mean diversity at k)` for `k = 1..=N`.
    pub fn points(&self) -> Vec<(T, T)> {
        self.mean_diversity
            .iter()
            .enumerate()
            .map(|(i, &m)| (from_usize(i + 1), m))
            .collect()
    }

    /// (mean, variance) pairs for steps where both are positive.
    pub fn tpl_pairs(&self) -> Vec<VarianceMeanPair<T>> {
        self.mean_diversity
            .iter()
            .zip(&self.variance_diversity)
            .map(|(&m, &v)| VarianceMeanPair::new(m, v))
            .filter(VarianceMeanPair::is_loggable)
            .collect()
    }
}

/// Random sample order for replicate `r`; the generator is ChaCha8 seeded
/// with `seed + r`.
pub fn replicate_order(n: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(replicate as u64));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn summarize<T: Scalar>(runs: &[Vec<T>], steps: usize, q: T, seed: u64) -> AccumulationCurve<T> {
    let reps = runs.len();
    let rf: T = from_usize(reps);
    let mut mean_diversity = Vec::with_capacity(steps);
    let mut variance_diversity = Vec::with_capacity(steps);
    for k in 0..steps {
        let first = runs[0][k];
        if runs.iter().all(|r| r[k] == first) {
            mean_diversity.push(first);
            variance_diversity.push(T::zero());
            continue;
        }
        let mean = runs.iter().map(|r| r[k]).sum::<T>() / rf;
        let ss = runs
            .iter()
            .map(|r| {
                let e = r[k] - mean;
                e * e
            })
            .sum::<T>();
        mean_diversity.push(mean);
        variance_diversity.push(ss / (rf - T::one()));
    }
    AccumulationCurve {
        mean_diversity,
        variance_diversity,
        replicates: reps,
        q,
        seed,
    }
}

fn check_resample_args<T: Scalar>(replicates: usize, q: T) -> Result<(), DiversityError> {
    if replicates < 2 {
        return Err(DiversityError::TooFewReplicates(replicates));
    }
    if !(q >= T::zero()) {
        return Err(DiversityError::NegativeOrder(
            q.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(())
}

/// Resampled accumulation curve, replicates run on the rayon pool.
///
/// Output is bit-identical to [`resample_accumulation_serial`] for the same
/// arguments, whatever the thread count.
pub fn resample_accumulation<T: Scalar>(
    table: &AbundanceTable,
    replicates: usize,
    q: T,
    seed: u64,
) -> Result<AccumulationCurve<T>, DiversityError> {
    check_resample_args(replicates, q)?;
    let n = table.n_samples();
    let runs = (0..replicates)
        .into_par_iter()
        .map(|r| accumulate(table, &replicate_order(n, seed, r), q))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(&runs, n, q, seed))
}

pub fn resample_accumulation_serial<T: Scalar>(
    table: &AbundanceTable,
    replicates: usize,
    q: T,
    seed: u64,
) -> Result<AccumulationCurve<T>, DiversityError> {
    check_resample_args(replicates, q)?;
    let n = table.n_samples();
    let runs = (0..replicates)
        .map(|r| accumulate(table, &replicate_order(n, seed, r), q))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(&runs, n, q, seed))
}
