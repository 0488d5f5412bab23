//! Sequence acceleration for slowly converging partial integrals.

/// Wynn's epsilon algorithm applied to a sequence of partial sums.
///
/// Returns the entry of the highest even column, which for sequences with
/// geometric or algebraic tails is a much better estimate of the limit than
/// the last partial sum. Falls back to the last term when the table breaks
/// down (two equal neighbours).
pub fn wynn_epsilon(s: &[f64]) -> f64 {
    let m = s.len();
    if m < 3 {
        return *s.last().unwrap_or(&0.0);
    }
    let mut prev = vec![0.0; m + 1];
    let mut cur: Vec<f64> = s.to_vec();
    let mut best = *s.last().unwrap();
    let mut col = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 {
                return best;
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        prev = cur;
        cur = next;
        col += 1;
        if col % 2 == 0 {
            let v = *cur.last().unwrap();
            if v.is_finite() {
                best = v;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accelerates_a_geometric_tail() {
        let sums: Vec<f64> = (1..8).map(|k| 1.0 - 0.5f64.powi(k)).collect();
        assert!((wynn_epsilon(&sums) - 1.0).abs() < 1e-12);
    }
}
