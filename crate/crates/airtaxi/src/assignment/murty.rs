//! Ranked k-best assignments by partitioning the solution space.
//!
//! Each expansion of the current best solution spawns one subproblem per
//! matched pair: the prefix of earlier pairs is forced, the pair itself is
//! banned. Subproblem optima go into a priority queue, so solutions pop in
//! non-decreasing cost order without duplicates.

use super::hungarian::{self, FORBIDDEN};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// One ranked assignment: `(row, col)` pairs sorted by row, plus the exact
/// total cost summed from the original matrix in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

struct Node {
    forced: Vec<(usize, usize)>,
    banned: Vec<(usize, usize)>,
    solution: Vec<(usize, usize)>,
    cost: f64,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.solution == other.solution
    }
}
impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want cheapest first.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.solution.cmp(&self.solution))
    }
}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solve the subproblem where `forced` pairs are fixed and `banned` pairs
/// are excluded. Returns the full solution (forced pairs included).
fn solve_restricted(
    costs: &[f64],
    n_rows: usize,
    n_cols: usize,
    forced: &[(usize, usize)],
    banned: &[(usize, usize)],
) -> Option<(Vec<(usize, usize)>, f64)> {
    let mut row_taken = vec![false; n_rows];
    let mut col_taken = vec![false; n_cols];
    for &(r, c) in forced {
        row_taken[r] = true;
        col_taken[c] = true;
    }
    let free_rows: Vec<usize> = (0..n_rows).filter(|&r| !row_taken[r]).collect();
    let free_cols: Vec<usize> = (0..n_cols).filter(|&c| !col_taken[c]).collect();
    let mut row_pos = vec![usize::MAX; n_rows];
    let mut col_pos = vec![usize::MAX; n_cols];
    for (i, &r) in free_rows.iter().enumerate() {
        row_pos[r] = i;
    }
    for (i, &c) in free_cols.iter().enumerate() {
        col_pos[c] = i;
    }

    let mut sub = Vec::with_capacity(free_rows.len() * free_cols.len());
    for &r in &free_rows {
        for &c in &free_cols {
            sub.push(costs[r * n_cols + c]);
        }
    }
    for &(r, c) in banned {
        if row_pos[r] != usize::MAX && col_pos[c] != usize::MAX {
            sub[row_pos[r] * free_cols.len() + col_pos[c]] = FORBIDDEN;
        }
    }
    let (sub_pairs, _) = hungarian::solve(&sub, free_rows.len(), free_cols.len())?;
    // The restricted solution must keep the assignment at full size:
    // dropping below min(n_rows, n_cols) pairs would not be a valid
    // candidate matching.
    if forced.len() + sub_pairs.len() < n_rows.min(n_cols) {
        return None;
    }

    let mut pairs: Vec<(usize, usize)> = forced.to_vec();
    pairs.extend(sub_pairs.iter().map(|&(r, c)| (free_rows[r], free_cols[c])));
    pairs.sort_unstable();
    let cost = pairs.iter().map(|&(r, c)| costs[r * n_cols + c]).sum();
    Some((pairs, cost))
}

/// The `k` lowest-cost assignments in non-decreasing cost order (fewer if
/// fewer exist). Equal-cost candidates are ordered lexicographically by
/// their pair lists so the ranking is canonical.
pub fn k_best(costs: &[f64], n_rows: usize, n_cols: usize, k: usize) -> Vec<Matching> {
    debug_assert_eq!(costs.len(), n_rows * n_cols);
    if k == 0 || n_rows == 0 || n_cols == 0 {
        return Vec::new();
    }

    let mut heap = BinaryHeap::new();
    if let Some((solution, cost)) = solve_restricted(costs, n_rows, n_cols, &[], &[]) {
        heap.push(Node {
            forced: Vec::new(),
            banned: Vec::new(),
            solution,
            cost,
        });
    }

    let mut out: Vec<Matching> = Vec::with_capacity(k.min(16));
    let mut seen: Vec<Vec<(usize, usize)>> = Vec::new();
    while out.len() < k {
        let Some(node) = heap.pop() else { break };
        // Partition soundness makes duplicates impossible; keep a guard
        // anyway so a regression shows up as missing candidates, not
        // repeated ones.
        if seen.contains(&node.solution) {
            continue;
        }
        seen.push(node.solution.clone());
        out.push(Matching {
            pairs: node.solution.clone(),
            cost: node.cost,
        });

        let branch_pairs: Vec<(usize, usize)> = node
            .solution
            .iter()
            .copied()
            .filter(|p| !node.forced.contains(p))
            .collect();
        for (i, &pair) in branch_pairs.iter().enumerate() {
            let mut forced = node.forced.clone();
            forced.extend_from_slice(&branch_pairs[..i]);
            let mut banned = node.banned.clone();
            banned.push(pair);
            if let Some((solution, cost)) =
                solve_restricted(costs, n_rows, n_cols, &forced, &banned)
            {
                heap.push(Node {
                    forced,
                    banned,
                    solution,
                    cost,
                });
            }
        }
    }

    // Canonical order: cost, then lexicographic pairs within exact ties.
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.pairs.cmp(&b.pairs)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Brute-force enumeration of all size-min(n,p) assignments, in the
    /// same canonical order as `k_best`.
    pub(crate) fn enumerate_all(costs: &[f64], n_rows: usize, n_cols: usize) -> Vec<Matching> {
        let mut out = Vec::new();
        let size = n_rows.min(n_cols);
        let mut pairs = Vec::with_capacity(size);
        let mut used_cols = vec![false; n_cols];
        enumerate_rows(
            costs, n_rows, n_cols, size, 0, &mut pairs, &mut used_cols, &mut out,
        );
        out.sort_by(|a: &Matching, b| a.cost.total_cmp(&b.cost).then_with(|| a.pairs.cmp(&b.pairs)));
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate_rows(
        costs: &[f64],
        n_rows: usize,
        n_cols: usize,
        size: usize,
        row: usize,
        pairs: &mut Vec<(usize, usize)>,
        used_cols: &mut Vec<bool>,
        out: &mut Vec<Matching>,
    ) {
        if pairs.len() == size {
            let cost = pairs.iter().map(|&(r, c)| costs[r * n_cols + c]).sum();
            out.push(Matching {
                pairs: pairs.clone(),
                cost,
            });
            return;
        }
        if row == n_rows || n_rows - row < size - pairs.len() {
            return;
        }
        // Skip this row entirely (only possible when rows outnumber cols).
        if n_rows - row > size - pairs.len() {
            enumerate_rows(costs, n_rows, n_cols, size, row + 1, pairs, used_cols, out);
        }
        for col in 0..n_cols {
            if used_cols[col] {
                continue;
            }
            used_cols[col] = true;
            pairs.push((row, col));
            enumerate_rows(costs, n_rows, n_cols, size, row + 1, pairs, used_cols, out);
            pairs.pop();
            used_cols[col] = false;
        }
    }

    #[test]
    fn two_by_two_both_permutations() {
        let costs = [1.0, 2.0, 2.0, 4.0];
        let got = k_best(&costs, 2, 2, 2);
        assert_eq!(got.len(), 2);
        assert_relative_eq!(got[0].cost, 4.0);
        assert_relative_eq!(got[1].cost, 5.0);
        assert_eq!(got[0].pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(got[1].pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn k_one_reduces_to_optimal() {
        let costs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
        let best = k_best(&costs, 3, 3, 1);
        let (pairs, cost) = hungarian::solve(&costs, 3, 3).unwrap();
        assert_eq!(best[0].pairs, pairs);
        assert_relative_eq!(best[0].cost, cost);
    }

    #[test]
    fn four_by_four_full_enumeration() {
        let mut rng = crate::rng::stream(17, "murty-4x4");
        let costs: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..10.0)).collect();
        let got = k_best(&costs, 4, 4, 24);
        let want = enumerate_all(&costs, 4, 4);
        assert_eq!(got.len(), 24);
        assert_eq!(got, want);
    }

    #[test]
    fn rectangular_enumeration_matches() {
        let mut rng = crate::rng::stream(23, "murty-rect");
        for &(rows, cols) in &[(2usize, 4usize), (4, 2), (3, 5), (5, 3)] {
            let costs: Vec<f64> = (0..rows * cols)
                .map(|_| rng.random_range(0.0..10.0))
                .collect();
            let want = enumerate_all(&costs, rows, cols);
            let got = k_best(&costs, rows, cols, want.len() + 5);
            assert_eq!(got, want, "{rows}x{cols} mismatch");
        }
    }

    #[test]
    fn costs_never_decrease() {
        let mut rng = crate::rng::stream(29, "murty-monotone");
        for _ in 0..20 {
            let n = rng.random_range(2..=5usize);
            let costs: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
            let got = k_best(&costs, n, n, 10);
            for w in got.windows(2) {
                assert!(w[0].cost <= w[1].cost + 1e-12);
            }
        }
    }

    #[test]
    fn exact_tie_order_is_lexicographic() {
        // All assignments cost 2; ranking must fall back to pair order.
        let costs = [1.0, 1.0, 1.0, 1.0];
        let got = k_best(&costs, 2, 2, 2);
        assert_eq!(got[0].pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(got[1].pairs, vec![(0, 1), (1, 0)]);
    }
}
