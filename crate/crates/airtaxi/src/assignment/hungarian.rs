//! Dense rectangular linear assignment via shortest augmenting paths.
//!
//! Solves min-cost matchings of size `min(rows, cols)` in O(min² · max).
//! Entries at or above [`FORBIDDEN`] mark banned pairs; a problem whose
//! optimum is forced through a banned pair is reported infeasible.

/// Cost marker for banned pairs. Large enough to dominate any real total,
/// small enough that potential arithmetic stays exact.
pub const FORBIDDEN: f64 = 1e30;

/// Minimum-cost assignment of size `min(n_rows, n_cols)`.
///
/// Returns pairs `(row, col)` sorted by row plus the total cost recomputed
/// directly from `costs` (row-major), or `None` when no assignment avoids
/// forbidden pairs. Ties are resolved by scan order, so the result is
/// deterministic for a given matrix.
pub fn solve(costs: &[f64], n_rows: usize, n_cols: usize) -> Option<(Vec<(usize, usize)>, f64)> {
    debug_assert_eq!(costs.len(), n_rows * n_cols);
    if n_rows == 0 || n_cols == 0 {
        return Some((Vec::new(), 0.0));
    }
    let pairs = if n_rows <= n_cols {
        augment(|r, c| costs[r * n_cols + c], n_rows, n_cols)
    } else {
        let mut flipped = augment(|c, r| costs[r * n_cols + c], n_cols, n_rows);
        for p in &mut flipped {
            *p = (p.1, p.0);
        }
        flipped
    };
    let mut pairs = pairs;
    pairs.sort_unstable();
    let mut total = 0.0;
    for &(r, c) in &pairs {
        let cost = costs[r * n_cols + c];
        if cost >= FORBIDDEN / 2.0 {
            return None;
        }
        total += cost;
    }
    Some((pairs, total))
}

/// Core augmenting-path routine; requires `n_rows <= n_cols`.
fn augment<F: Fn(usize, usize) -> f64>(
    cost: F,
    n_rows: usize,
    n_cols: usize,
) -> Vec<(usize, usize)> {
    let mut u = vec![0.0f64; n_rows + 1];
    let mut v = vec![0.0f64; n_cols + 1];
    // matched_row[j] = row occupying column j (1-indexed, 0 = free).
    let mut matched_row = vec![0usize; n_cols + 1];
    let mut way = vec![0usize; n_cols + 1];

    for i in 1..=n_rows {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n_cols + 1];
        let mut used = vec![false; n_cols + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n_cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n_cols {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Unwind the alternating path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=n_cols)
        .filter(|&j| matched_row[j] != 0)
        .map(|j| (matched_row[j] - 1, j - 1))
        .collect()
}
