//! Fixed-size subset resampling for per-artist distance distributions.

use super::StatsError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Plan for drawing `n_subsets` subsets of `subset_size` elements.
///
/// Subsets are distinct combinations whenever the population admits at least
/// `n_subsets` of them; when it admits exactly `n_subsets` the full set of
/// combinations is enumerated (the nine-painting case yields all 126).
/// `allow_repeats` switches to with-replacement sampling across subsets for
/// populations too small to supply distinct combinations.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SubsetPlan {
    pub subset_size: usize,
    pub n_subsets: usize,
    pub seed: u64,
    #[serde(default)]
    pub allow_repeats: bool,
}

impl Default for SubsetPlan {
    fn default() -> Self {
        SubsetPlan {
            subset_size: 5,
            n_subsets: 126,
            seed: 0,
            allow_repeats: false,
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if result == u128::MAX {
            return u128::MAX;
        }
    }
    result
}

/// All k-combinations of 0..n in lexicographic order.
fn enumerate_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Draws `plan.n_subsets` subsets of `plan.subset_size` from the population.
/// Deterministic given the seed. Members of each subset keep population
/// order; the subset sequence is the draw order (or lexicographic order when
/// the combinations are exhaustively enumerated).
pub fn resample_subsets<T: Clone>(
    population: &[T],
    plan: &SubsetPlan,
) -> Result<Vec<Vec<T>>, StatsError> {
    let n = population.len();
    let k = plan.subset_size;
    if k == 0 || plan.n_subsets == 0 {
        return Err(StatsError::InvalidArgument(
            "subset_size and n_subsets must be positive".into(),
        ));
    }
    if n < k {
        return Err(StatsError::InvalidArgument(format!(
            "population of {n} cannot supply subsets of {k}"
        )));
    }
    let total = binomial(n, k);
    let index_sets: Vec<Vec<usize>> = if total == plan.n_subsets as u128 {
        enumerate_combinations(n, k)
    } else if total > plan.n_subsets as u128 {
        sample_distinct(n, k, plan.n_subsets, plan.seed)
    } else if plan.allow_repeats {
        sample_with_repeats(n, k, plan.n_subsets, plan.seed)
    } else {
        return Err(StatsError::InvalidArgument(format!(
            "population admits only {total} distinct {k}-subsets but {} were requested",
            plan.n_subsets
        )));
    };
    Ok(index_sets
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| population[i].clone()).collect())
        .collect())
}

fn draw_subset(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    let (chosen, _) = indices.partial_shuffle(rng, k);
    let mut subset = chosen.to_vec();
    subset.sort_unstable();
    subset
}

fn sample_distinct(n: usize, k: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let subset = draw_subset(n, k, &mut rng);
        if seen.insert(subset.clone()) {
            out.push(subset);
        }
    }
    out
}

fn sample_with_repeats(n: usize, k: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| draw_subset(n, k, &mut rng)).collect()
}
