//! Minimum-cost perfect matching on a square cost matrix.

use nalgebra::DMatrix;

/// Returns `assign` with `assign[row] = column`, minimizing
/// `Σ cost[(row, assign[row])]`. Shortest augmenting paths with row and
/// column potentials, O(n³).
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    assert!(
        cost.iter().all(|c| c.is_finite()),
        "cost matrix must be finite"
    );
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[(r0 - 1, col - 1)] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of[col0] = row_of[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for col in 1..=n {
        assign[row_of[col] - 1] = col - 1;
    }
    assign
}

pub fn assignment_cost(cost: &DMatrix<f64>, assign: &[usize]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(row, &col)| cost[(row, col)])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn brute_force(cost: &DMatrix<f64>) -> f64 {
        fn rec(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            let n = cost.nrows();
            if row == n {
                *best = best.min(acc);
                return;
            }
            for col in 0..n {
                if !used[col] {
                    used[col] = true;
                    rec(cost, row + 1, used, acc + cost[(row, col)], best);
                    used[col] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.nrows()], 0.0, &mut best);
        best
    }

    #[test]
    fn identity_favoring() {
        let cost = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        assert_eq!(hungarian(&cost), vec![0, 1, 2, 3]);
    }

    #[test]
    fn swap() {
        let cost = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a = hungarian(&cost);
        assert_eq!(a, vec![1, 0]);
        assert_eq!(assignment_cost(&cost, &a), 0.0);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rng_from_seed(42);
        for _ in 0..50 {
            let cost = DMatrix::from_fn(6, 6, |_, _| rng.random::<f64>() * 10.0 - 3.0);
            let a = hungarian(&cost);
            let mut seen = a.clone();
            seen.sort();
            assert_eq!(seen, (0..6).collect::<Vec<_>>());
            assert!((assignment_cost(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn handles_ties_and_empty() {
        assert!(hungarian(&DMatrix::zeros(0, 0)).is_empty());
        let cost = DMatrix::from_element(3, 3, 2.0);
        assert_eq!(assignment_cost(&cost, &hungarian(&cost)), 6.0);
    }
}
