use rand::Rng;

use super::{DataPool, Sample};
use crate::error::{Error, Result};

/// Draws `batch_size` sample indices with equal frequency per source.
///
/// Each draw picks a source uniformly, then a sample uniformly within that
/// source, with replacement. Small sources are therefore revisited more often.
pub fn balanced_indices<R: Rng + ?Sized>(
    pool: &DataPool,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let sources = pool.sources();
    Ok((0..batch_size)
        .map(|_| {
            let src = &sources[rng.random_range(0..sources.len())];
            src.indices[rng.random_range(0..src.indices.len())]
        })
        .collect())
}

pub fn balanced_batch<'a, R: Rng + ?Sized>(
    pool: &'a DataPool,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Sample>> {
    let samples = pool.samples();
    Ok(balanced_indices(pool, batch_size, rng)?
        .into_iter()
        .map(|i| &samples[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{Payload, PersonLabel, Split};
    use crate::seeded_rng;

    fn pool_with_sources(sizes: &[usize]) -> DataPool {
        let mut samples = Vec::new();
        for (s, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                samples.push(Sample::new(
                    format!("s{s}_{i}"),
                    PersonLabel::Id(format!("p{s}")),
                    format!("src{s}"),
                    Split::Train,
                    Payload::Feature(vec![0.0]),
                ));
            }
        }
        DataPool::new(samples).unwrap()
    }

    fn source_counts(pool: &DataPool, idx: &[usize], n_sources: usize) -> Vec<usize> {
        let mut counts = vec![0; n_sources];
        for &i in idx {
            let sid = &pool.samples()[i].source_id;
            let s: usize = sid.trim_start_matches("src").parse().unwrap();
            counts[s] += 1;
        }
        counts
    }

    #[test]
    fn unequal_sources_drawn_equally_often() {
        // Binomial(10000, 0.5): mean 5000, sigma 50.
        let pool = pool_with_sources(&[100, 10]);
        let mut rng = seeded_rng(7);
        let idx = balanced_indices(&pool, 10_000, &mut rng).unwrap();
        for c in source_counts(&pool, &idx, 2) {
            assert!((c as f64 - 5000.0).abs() <= 150.0, "count {c}");
        }
    }

    #[test]
    fn chi_square_uniform_over_sources_for_ten_seeds() {
        // df = 3, critical value at alpha = 0.001 is 16.266.
        let pool = pool_with_sources(&[500, 50, 5, 1]);
        let n = 8000;
        for seed in 0..10 {
            let mut rng = seeded_rng(seed);
            let idx = balanced_indices(&pool, n, &mut rng).unwrap();
            let expected = n as f64 / 4.0;
            let chi2: f64 = source_counts(&pool, &idx, 4)
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi2 < 16.266, "seed {seed}: chi2 {chi2}");
        }
    }

    #[test]
    fn single_source_and_single_draw() {
        let pool = pool_with_sources(&[5]);
        let mut rng = seeded_rng(1);
        let batch = balanced_batch(&pool, 20, &mut rng).unwrap();
        assert!(batch.iter().all(|s| s.source_id == "src0"));
        assert_eq!(balanced_batch(&pool, 1, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let pool = DataPool::new(vec![]).unwrap();
        assert!(matches!(
            balanced_indices(&pool, 3, &mut seeded_rng(0)),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn same_seed_same_batch() {
        let pool = pool_with_sources(&[7, 3, 9]);
        let a = balanced_indices(&pool, 64, &mut seeded_rng(11)).unwrap();
        let b = balanced_indices(&pool, 64, &mut seeded_rng(11)).unwrap();
        assert_eq!(a, b);
    }
}
