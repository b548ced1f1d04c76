//! Label correspondence between successive clusterings and partition agreement.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Greedy maximal-overlap matching of current cluster labels onto previous ones.
///
/// Returns `map` with `map[cur_label] = prev_label`, a permutation of `0..k`.
/// Pairs are taken in order of decreasing overlap. Ties go to the cluster
/// whose first member comes earliest (current side, then previous side), so
/// the matching depends only on the partitions and not on label values.
/// Labels left without overlap are paired in index order.
pub fn align_labels(prev: &[usize], cur: &[usize], k: usize) -> Result<Vec<usize>> {
    if prev.len() != cur.len() {
        return Err(Error::KeySetMismatch);
    }
    let mut overlap = vec![vec![0usize; k]; k];
    let mut first_cur = vec![usize::MAX; k];
    let mut first_prev = vec![usize::MAX; k];
    for (i, (&p, &c)) in prev.iter().zip(cur).enumerate() {
        if p >= k || c >= k {
            return Err(Error::InvalidArgument(format!("label out of range for k = {k}")));
        }
        overlap[c][p] += 1;
        first_cur[c] = first_cur[c].min(i);
        first_prev[p] = first_prev[p].min(i);
    }
    let key = |c: usize, p: usize| (std::cmp::Reverse(overlap[c][p]), first_cur[c], first_prev[p]);
    let mut map = vec![usize::MAX; k];
    let mut prev_taken = vec![false; k];
    loop {
        let mut best: Option<(usize, usize)> = None;
        for c in (0..k).filter(|&c| map[c] == usize::MAX) {
            for p in (0..k).filter(|&p| !prev_taken[p]) {
                if overlap[c][p] > 0 && best.is_none_or(|(bc, bp)| key(c, p) < key(bc, bp)) {
                    best = Some((c, p));
                }
            }
        }
        match best {
            Some((c, p)) => {
                map[c] = p;
                prev_taken[p] = true;
            }
            None => break,
        }
    }
    let mut free = (0..k).filter(|&p| !prev_taken[p]);
    for m in map.iter_mut().filter(|m| **m == usize::MAX) {
        *m = free.next().expect("as many free labels as unmatched ones");
    }
    Ok(map)
}

/// Fraction of samples whose current label, mapped through `alignment`,
/// differs from the previous label.
pub fn changed_fraction(
    prev: &BTreeMap<String, usize>,
    cur: &BTreeMap<String, usize>,
    alignment: &[usize],
) -> Result<f64> {
    if prev.len() != cur.len() || prev.keys().zip(cur.keys()).any(|(a, b)| a != b) {
        return Err(Error::KeySetMismatch);
    }
    if prev.is_empty() {
        return Ok(0.0);
    }
    let mut changed = 0usize;
    for ((_, &p), (_, &c)) in prev.iter().zip(cur) {
        let mapped = *alignment
            .get(c)
            .ok_or_else(|| Error::InvalidArgument(format!("label {c} not covered by alignment")))?;
        if mapped != p {
            changed += 1;
        }
    }
    Ok(changed as f64 / prev.len() as f64)
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1 when both partitions are trivial in the same way (the index is
/// undefined there).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims("partition", a.len(), b.len()));
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| comb2(n)).sum();
    let total = comb2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
