//! Ranking metrics: interpolation-free average precision and CMC.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::reid::RankingResult;

/// Mean over relevant items of the precision at each relevant hit.
pub fn average_precision(ranking: &RankingResult, relevant: &BTreeSet<String>) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let flags: Vec<bool> = ranking.ranked.iter().map(|r| relevant.contains(&r.item_id)).collect();
    let hits = flags.iter().filter(|&&f| f).count();
    if hits != relevant.len() {
        return Err(Error::InvalidArgument(format!(
            "{} relevant items missing from ranking of `{}`",
            relevant.len() - hits,
            ranking.probe_id
        )));
    }
    Ok(ap_from_flags(&flags))
}

/// AP of a relevance-flag list that contains every relevant item.
pub(crate) fn ap_from_flags(flags: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// 1-based rank of the first relevant item.
pub fn first_hit(ranking: &RankingResult, relevant: &BTreeSet<String>) -> Option<usize> {
    ranking.ranked.iter().position(|r| relevant.contains(&r.item_id)).map(|p| p + 1)
}

/// `curve[r-1]` is the fraction of queries whose first hit is within rank `r`.
pub fn cmc_from_first_hits(first_hits: &[Option<usize>], max_rank: usize) -> Result<Vec<f64>> {
    if max_rank == 0 {
        return Err(Error::InvalidArgument("max_rank must be ≥ 1".into()));
    }
    let mut counts = vec![0usize; max_rank];
    for r in first_hits.iter().flatten() {
        if *r >= 1 && *r <= max_rank {
            counts[r - 1] += 1;
        }
    }
    let n = first_hits.len().max(1) as f64;
    let mut acc = 0usize;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

pub fn cmc(queries: &[(&RankingResult, &BTreeSet<String>)], max_rank: usize) -> Result<Vec<f64>> {
    let hits: Vec<_> = queries.iter().map(|(r, rel)| first_hit(r, rel)).collect();
    cmc_from_first_hits(&hits, max_rank)
}
