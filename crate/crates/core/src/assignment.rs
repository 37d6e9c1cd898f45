//! Minimum-cost perfect assignment on a dense square cost matrix.
//!
//! Shortest augmenting paths with row and column potentials (the Hungarian
//! method), `O(n^3)`.

/// Returns `assign` with row `i` matched to column `assign[i]`, minimizing
/// `sum_i cost[i][assign[i]]`. `cost` is row-major `n x n` with finite entries.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based with a virtual column 0, following the usual potential formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        assert_eq!(min_cost_assignment(&[1.0, 4.0, 4.0, 2.0], 2), vec![0, 1]);
        assert_eq!(min_cost_assignment(&[5.0, 1.0, 1.0, 5.0], 2), vec![1, 0]);
    }

    #[test]
    fn classic_three_by_three() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = min_cost_assignment(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn output_is_a_permutation() {
        let n = 7;
        let cost: Vec<f64> = (0..n * n).map(|k| ((k * 37) % 11) as f64).collect();
        let mut a = min_cost_assignment(&cost, n);
        a.sort_unstable();
        assert_eq!(a, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn empty() {
        assert!(min_cost_assignment(&[], 0).is_empty());
    }
}
