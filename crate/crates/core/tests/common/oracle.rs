//! Metric definitions recomputed directly, without the library's sort.

/// 1-based rank of candidate `i`: higher scores first, earlier index on ties.
fn rank_of(scores: &[f64], i: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
        .count()
}

/// Relevant ranks in increasing order.
fn relevant_ranks(c: &[(f64, bool)]) -> Vec<usize> {
    let scores: Vec<f64> = c.iter().map(|x| x.0).collect();
    let mut ranks: Vec<usize> = (0..c.len()).filter(|&i| c[i].1).map(|i| rank_of(&scores, i)).collect();
    ranks.sort_unstable();
    ranks
}

/// Mean over relevant items of precision at that item's rank.
pub fn average_precision(c: &[(f64, bool)]) -> Option<f64> {
    let ranks = relevant_ranks(c);
    if ranks.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &r in &ranks {
        let relevant_in_top = ranks.iter().filter(|&&q| q <= r).count();
        total += relevant_in_top as f64 / r as f64;
    }
    Some(total / ranks.len() as f64)
}

pub fn reciprocal_rank(c: &[(f64, bool)]) -> Option<f64> {
    relevant_ranks(c).first().map(|&r| 1.0 / r as f64)
}

/// Mean over queries with at least one relevant candidate.
pub fn mean_of(queries: &[Vec<(f64, bool)>], per_query: fn(&[(f64, bool)]) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = queries.iter().filter_map(|q| per_query(q)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> f64 {
    let mut hits = 0.0;
    for i in 0..pred.len() {
        if pred[i] == gold[i] {
            hits += 1.0;
        }
    }
    hits / pred.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
