//! Exhaustive reference implementations used to validate the fast paths.
//!
//! Everything here enumerates all `n!` permutations, so it is only usable for
//! small sizes, but it shares no code with the solvers it checks.

use nalgebra::DMatrix;

use crate::mdp::PermutationMap;

/// All permutations of `{0, ..., n-1}` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    let mut used = vec![false; n];
    fn recurse(
        n: usize,
        depth: usize,
        current: &mut Vec<usize>,
        used: &mut Vec<bool>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if depth == n {
            out.push(current.clone());
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                current[depth] = v;
                recurse(n, depth + 1, current, used, out);
                used[v] = false;
            }
        }
    }
    recurse(n, 0, &mut current, &mut used, &mut out);
    out
}

/// Brute-force minimum-cost assignment over all `n!` candidates. Ties go to
/// the lexicographically smallest assignment. Returns the assignment and its
/// cost.
pub fn exhaustive_assignment(cost: &DMatrix<f64>) -> (PermutationMap, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    let mut best: Option<(Vec<usize>, f64)> = None;
    for candidate in permutations(n) {
        let total: f64 = candidate
            .iter()
            .enumerate()
            .map(|(i, &j)| cost[(i, j)])
            .sum();
        match &best {
            Some((_, c)) if total >= *c - 1e-15 && total > *c + 1e-15 => {}
            Some((_, c)) if (total - *c).abs() <= 1e-15 => {
                // Equal cost: lexicographic order of enumeration already
                // favors the earlier candidate, so keep it.
            }
            Some((_, c)) if total < *c => best = Some((candidate, total)),
            None => best = Some((candidate, total)),
            _ => {}
        }
    }
    let (assignment, total) = best.expect("nonempty cost matrix");
    (PermutationMap::new(assignment).unwrap(), total)
}

/// Brute-force minimizer of `|| P^T M P - M_observed ||_F` over all
/// permutations. Returns the minimizer and the attained residual.
pub fn exhaustive_recover(
    m: &DMatrix<f64>,
    m_observed: &DMatrix<f64>,
) -> (PermutationMap, f64) {
    let n = m.nrows();
    let mut best: Option<(PermutationMap, f64)> = None;
    for candidate in permutations(n) {
        let pi = PermutationMap::new(candidate).unwrap();
        let residual = (pi.conjugate(m) - m_observed).norm();
        match &best {
            Some((_, r)) if residual >= *r => {}
            _ => best = Some((pi, residual)),
        }
    }
    best.expect("nonempty matrix")
}
