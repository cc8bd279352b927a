//! Kruskal-Wallis rank test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::chi_square_sf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p: f64,
}

/// Midranks (1-based) of `values`, plus Σ(t³ − t) over tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("Kruskal-Wallis needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::InvalidArgument("Kruskal-Wallis group is empty".into()));
    }
    if groups.iter().flatten().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("Kruskal-Wallis input contains NaN".into()));
    }
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let df = groups.len() - 1;
    let (ranks, ties) = midranks(&pooled);
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, df, p: 1.0 });
    }
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    Ok(KruskalWallis { h, df, p: chi_square_sf(h, df as f64) })
}
