//! Clustering agreement scores.

use std::collections::HashMap;

fn comb2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index between two labelings of the same points. Noise
/// labels are treated as one more class. Returns 1.0 when both labelings
/// are a single class, as in the usual convention.
pub fn adjusted_rand_index(a: &[i32], b: &[i32]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut table: HashMap<(i32, i32), u64> = HashMap::new();
    let mut rows: HashMap<i32, u64> = HashMap::new();
    let mut cols: HashMap<i32, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Values from sklearn.metrics.adjusted_rand_score.
    #[test]
    fn matches_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let cases: [(&[i32], &[i32], f64); 3] = [
            (&[0, 0, 1, 2], &[0, 0, 1, 1], 0.5714285714285714),
            (&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2], 0.24242424242424243),
            (&[0, 1, 2, 0, 1, 2, -1, -1], &[0, 1, 1, 0, 2, 2, -1, 0], 0.07547169811320754),
        ];
        for (a, b, want) in cases {
            assert!((adjusted_rand_index(a, b) - want).abs() < 1e-12, "{a:?} {b:?}");
        }
    }
}
