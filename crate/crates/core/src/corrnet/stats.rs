//! Pairwise correlation coefficients.
//!
//! Both coefficients drop every position where either side is non-finite
//! before computing anything, and report `None` when the result is undefined
//! (fewer than three usable points or a zero variance).

use super::CorrError;

/// Fewest usable points for a defined coefficient.
pub const MIN_POINTS: usize = 3;

/// Keep positions where both values are finite.
pub fn pairwise_complete(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>), CorrError> {
    if x.len() != y.len() {
        return Err(CorrError::LengthMismatch(x.len(), y.len()));
    }
    Ok(x.iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip())
}

/// Sample Pearson coefficient, two-pass.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, CorrError> {
    let (x, y) = pairwise_complete(x, y)?;
    Ok(pearson_complete(&x, &y))
}

/// Pearson on inputs already known to be finite and of equal length.
pub fn pearson_complete(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < MIN_POINTS {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxx += da * da;
        syy += db * db;
        sxy += da * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    let r = sxy / (sxx * syy).sqrt();
    r.is_finite().then(|| r.clamp(-1.0, 1.0))
}

/// Spearman coefficient: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, CorrError> {
    let (x, y) = pairwise_complete(x, y)?;
    if x.len() < MIN_POINTS {
        return Ok(None);
    }
    Ok(pearson_complete(&average_ranks(&x), &average_ranks(&y)))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}
