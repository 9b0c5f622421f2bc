//! Spearman rank correlation with tie correction.
//!
//! The coefficient is the Pearson correlation of average ranks. Two-sided
//! p-values come from exact permutation enumeration for n <= 9 and from the
//! t approximation otherwise.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvalError;

/// Largest series length for which the permutation p-value is exact.
const EXACT_PERMUTATION_MAX_N: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    /// Whether the p-value came from exact permutation enumeration.
    pub exact: bool,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

struct RankStats {
    deviations: Vec<f64>,
    sum_sq: f64,
}

fn rank_stats(values: &[f64]) -> Result<RankStats, EvalError> {
    let ranks = average_ranks(values);
    let n = ranks.len() as f64;
    let mean = ranks.iter().sum::<f64>() / n;
    let deviations: Vec<f64> = ranks.iter().map(|r| r - mean).collect();
    let sum_sq: f64 = deviations.iter().map(|d| d * d).sum();
    if sum_sq == 0.0 {
        return Err(EvalError::ConstantSeries);
    }
    Ok(RankStats { deviations, sum_sq })
}

// cov / sqrt(ssx * ssy) rather than normalized deviations: identical or
// mirrored rank vectors then give exactly +/-1.
fn correlation(x: &RankStats, y: &RankStats, perm: Option<&[usize]>) -> f64 {
    let mut cov = 0.0;
    match perm {
        Some(perm) => {
            for (dx, &p) in x.deviations.iter().zip(perm) {
                cov += dx * y.deviations[p];
            }
        }
        None => {
            for (dx, dy) in x.deviations.iter().zip(&y.deviations) {
                cov += dx * dy;
            }
        }
    }
    cov / (x.sum_sq * y.sum_sq).sqrt()
}

/// Heap's algorithm; calls `f` with each permutation of `0..n`.
fn for_each_permutation<F: FnMut(&[usize])>(n: usize, mut f: F) {
    let mut arr: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&arr);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                arr.swap(0, i);
            } else {
                arr.swap(c[i], i);
            }
            f(&arr);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn exact_p_value(x: &RankStats, y: &RankStats, observed: f64) -> f64 {
    let n = x.deviations.len();
    let threshold = observed.abs() - 1e-12;
    let mut total = 0u64;
    let mut extreme = 0u64;
    for_each_permutation(n, |perm| {
        total += 1;
        if correlation(x, y, Some(perm)).abs() >= threshold {
            extreme += 1;
        }
    });
    extreme as f64 / total as f64
}

fn t_approximation_p_value(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 1e-15 {
        return 0.0;
    }
    let t = rho * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Tie-corrected Spearman correlation with a two-sided p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::DimensionMismatch(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(EvalError::InvalidParam(
            "rank correlation needs at least 3 points".to_string(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidParam(
            "series contain non-finite values".to_string(),
        ));
    }
    let rx = rank_stats(x)?;
    let ry = rank_stats(y)?;
    let rho = correlation(&rx, &ry, None);
    let exact = n <= EXACT_PERMUTATION_MAX_N;
    let p_value = if exact {
        exact_p_value(&rx, &ry, rho)
    } else {
        t_approximation_p_value(rho, n)
    };
    Ok(Spearman {
        rho,
        p_value,
        n,
        exact,
    })
}
