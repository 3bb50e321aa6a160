//! Minimum-cost rectangular assignment (shortest augmenting paths with
//! potentials, O(n²m)).

use crate::error::{Error, Result};
use ndarray::Array2;

/// Pairs `(row, col)` of a minimum-cost matching of size `min(n, m)`, sorted
/// by row.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<(usize, usize)>> {
    if let Some(v) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("cost matrix holds non-finite entry {v}")));
    }
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    if n > m {
        let mut pairs: Vec<(usize, usize)> = solve(&cost.t().to_owned()).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(pairs);
    }
    Ok(solve(cost))
}

/// `n ≤ m`. 1-based potentials as in the classic formulation.
fn solve(a: &Array2<f64>) -> Vec<(usize, usize)> {
    let (n, m) = a.dim();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect();
    pairs.sort_unstable();
    pairs
}

/// Total cost of `pairs`.
pub fn assignment_cost(cost: &Array2<f64>, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[(r, c)]).sum()
}
