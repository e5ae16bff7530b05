//! Spectral structure of ergodic chains: the stationarity-rescaled transition
//! matrix, its sign-oriented SVD, friendliness certification, the
//! pseudospectral gap, and restriction to the recurrent part of a chain.
//!
//! For an ergodic chain `M` with stationary distribution `mu` and
//! `D = diag(mu)`, the rescaled matrix is `L = D^{1/2} M D^{-1/2}`. Its
//! leading singular value is 1, and conjugating `M` by a permutation
//! conjugates `L` by the same permutation, which is what makes the SVD usable
//! for alignment. Orientation fixes the SVD sign ambiguity by flipping each
//! right singular vector to have a nonnegative dot product with the all-ones
//! vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::check_row_stochastic;

/// Dot products with the all-ones vector smaller than this are treated as
/// orientation ties: the column is left as-is and the certificate reports
/// `beta = 0`.
pub const ORIENTATION_TOL: f64 = 1e-12;

/// Default tolerance for the boolean friendliness verdict.
pub const DEFAULT_FRIENDLINESS_TOL: f64 = 1e-8;

/// Singular value decomposition with descending singular values and right
/// singular vectors oriented against the all-ones vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedSvd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl OrientedSvd {
    /// Computes the oriented SVD of a square matrix. Fails with a numerical
    /// error if the decomposition does not converge or reconstruction drifts
    /// beyond `1e-9` in Frobenius norm.
    pub fn compute(m: &DMatrix<f64>) -> Result<Self> {
        let svd = m
            .clone()
            .try_svd(true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let u_raw = svd.u.ok_or_else(|| Error::Numerical("SVD missing U".into()))?;
        let v_raw = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD missing V".into()))?
            .transpose();
        let sigma_raw = svd.singular_values;

        // Descending order, stable under ties.
        let n = sigma_raw.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sigma_raw[b].partial_cmp(&sigma_raw[a]).unwrap());
        let sigma = DVector::from_fn(n, |k, _| sigma_raw[order[k]]);
        let mut u = DMatrix::from_fn(u_raw.nrows(), n, |r, k| u_raw[(r, order[k])]);
        let mut v = DMatrix::from_fn(v_raw.nrows(), n, |r, k| v_raw[(r, order[k])]);

        // Orient: flip (u_k, v_k) pairs so v_k . 1 >= -ORIENTATION_TOL.
        for k in 0..n {
            let dot: f64 = v.column(k).sum();
            if dot < -ORIENTATION_TOL {
                for r in 0..v.nrows() {
                    v[(r, k)] = -v[(r, k)];
                }
                for r in 0..u.nrows() {
                    u[(r, k)] = -u[(r, k)];
                }
            }
        }

        let out = Self { u, sigma, v };
        let err = (out.reconstruct() - m).norm();
        if err > 1e-9 {
            return Err(Error::Numerical(format!(
                "SVD reconstruction error {err:.3e} exceeds 1e-9"
            )));
        }
        Ok(out)
    }

    /// `U diag(sigma) V^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }

    /// Dot product of each right singular vector with the all-ones vector.
    pub fn ones_overlaps(&self) -> DVector<f64> {
        DVector::from_fn(self.v.ncols(), |k, _| self.v.column(k).sum())
    }

    /// Applies the orientation rule again; a no-op on already-oriented data.
    pub fn reorient(&mut self) {
        for k in 0..self.v.ncols() {
            let dot: f64 = self.v.column(k).sum();
            if dot < -ORIENTATION_TOL {
                for r in 0..self.v.nrows() {
                    self.v[(r, k)] = -self.v[(r, k)];
                }
                for r in 0..self.u.nrows() {
                    self.u[(r, k)] = -self.u[(r, k)];
                }
            }
        }
    }
}

/// An ergodic chain bundled with its stationary distribution, rescaled
/// matrix, and oriented SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    pub m: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub l: DMatrix<f64>,
    pub svd: OrientedSvd,
}

impl ChainSummary {
    /// `diag(mu)`.
    pub fn d(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.mu)
    }
}

/// Quantified friendliness of a rescaled matrix: `alpha` is the smallest gap
/// between consecutive singular values, `beta` the smallest overlap of an
/// oriented right singular vector with the all-ones vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriendlinessCertificate {
    pub alpha: f64,
    pub beta: f64,
    pub is_friendly: bool,
    pub tol_alpha: f64,
    pub tol_beta: f64,
}

/// Certificate for an oriented SVD at the given tolerances.
pub fn friendliness_of_svd(
    svd: &OrientedSvd,
    tol_alpha: f64,
    tol_beta: f64,
) -> FriendlinessCertificate {
    let n = svd.sigma.len();
    let alpha = if n <= 1 {
        f64::INFINITY
    } else {
        (0..n - 1)
            .map(|k| svd.sigma[k] - svd.sigma[k + 1])
            .fold(f64::INFINITY, f64::min)
    };
    let overlaps = svd.ones_overlaps();
    let mut beta = overlaps.iter().copied().fold(f64::INFINITY, f64::min);
    if beta <= ORIENTATION_TOL {
        // Orientation tie: the singular vector is orthogonal to the ones
        // vector up to noise, which defeats sign disambiguation.
        beta = 0.0;
    }
    FriendlinessCertificate {
        alpha,
        beta,
        is_friendly: alpha > tol_alpha && beta > tol_beta,
        tol_alpha,
        tol_beta,
    }
}

/// Certificate for a chain summary at the given tolerances.
pub fn friendliness(
    summary: &ChainSummary,
    tol_alpha: f64,
    tol_beta: f64,
) -> FriendlinessCertificate {
    friendliness_of_svd(&summary.svd, tol_alpha, tol_beta)
}

/// `D^{1/2} M D^{-1/2}` for `D = diag(mu)`, without any summary bookkeeping.
/// Used directly on thresholded principal submatrices, whose rows are *not*
/// renormalized.
pub fn rescaled_matrix(m: &DMatrix<f64>, mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n || mu.len() != n {
        return Err(Error::Dimension(format!(
            "rescaling expects square matrix and matching vector, got {}x{} and {}",
            m.nrows(),
            m.ncols(),
            mu.len()
        )));
    }
    if let Some((i, _)) = mu.iter().enumerate().find(|(_, &x)| x <= 0.0) {
        return Err(Error::Domain(format!(
            "stationary mass at index {i} is not positive"
        )));
    }
    let sqrt: Vec<f64> = mu.iter().map(|&x| x.sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| sqrt[i] * m[(i, j)] / sqrt[j]))
}

/// Builds the full [`ChainSummary`] of an ergodic chain: rescales by `mu`,
/// takes the oriented SVD, and checks the summary invariants (`sigma_1 <= 1`
/// and exact reconstruction).
pub fn rescale(m: &DMatrix<f64>, mu: &DVector<f64>) -> Result<ChainSummary> {
    check_row_stochastic(m, "chain")?;
    let l = rescaled_matrix(m, mu)?;
    let svd = OrientedSvd::compute(&l)?;
    if svd.sigma[0] > 1.0 + 1e-8 {
        return Err(Error::Validation(format!(
            "leading singular value {} exceeds 1; mu is not the stationary \
             distribution of this chain",
            svd.sigma[0]
        )));
    }
    Ok(ChainSummary {
        m: m.clone(),
        mu: mu.clone(),
        l,
        svd,
    })
}

fn adjacency(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .filter(|&j| m[(i, j)] > 0.0)
                .collect::<Vec<_>>()
        })
        .collect()
}

struct TarjanState {
    index: usize,
    indices: Vec<Option<usize>>,
    lowlinks: Vec<usize>,
    on_stack: Vec<bool>,
    stack: Vec<usize>,
    components: Vec<Vec<usize>>,
}

fn strongconnect(adj: &[Vec<usize>], state: &mut TarjanState, v: usize) {
    state.indices[v] = Some(state.index);
    state.lowlinks[v] = state.index;
    state.index += 1;
    state.stack.push(v);
    state.on_stack[v] = true;

    for &w in &adj[v] {
        if state.indices[w].is_none() {
            strongconnect(adj, state, w);
            state.lowlinks[v] = state.lowlinks[v].min(state.lowlinks[w]);
        } else if state.on_stack[w] {
            state.lowlinks[v] = state.lowlinks[v].min(state.indices[w].unwrap());
        }
    }

    if state.lowlinks[v] == state.indices[v].unwrap() {
        let mut comp = Vec::new();
        loop {
            let w = state.stack.pop().unwrap();
            state.on_stack[w] = false;
            comp.push(w);
            if w == v {
                break;
            }
        }
        comp.sort_unstable();
        state.components.push(comp);
    }
}

/// Strongly connected components (Tarjan), each sorted ascending, emitted in
/// reverse topological order.
pub(crate) fn tarjan_components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let adj = adjacency(m);
    let n = adj.len();
    let mut state = TarjanState {
        index: 0,
        indices: vec![None; n],
        lowlinks: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        components: Vec::new(),
    };
    for v in 0..n {
        if state.indices[v].is_none() {
            strongconnect(&adj, &mut state, v);
        }
    }
    state.components
}

fn reachable_from(adj: &[Vec<usize>], sources: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue: Vec<usize> = Vec::new();
    for &s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push(s);
        }
    }
    while let Some(v) = queue.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push(w);
            }
        }
    }
    seen
}

/// Closed (recurrent) strongly connected components of `m`, in reverse
/// topological order; each component is sorted ascending.
pub(crate) fn closed_components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let comps = tarjan_components(m);
    let mut comp_of = vec![0usize; n];
    for (c, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = c;
        }
    }
    comps
        .iter()
        .enumerate()
        .filter(|(c, comp)| {
            comp.iter().all(|&v| {
                (0..n).all(|w| m[(v, w)] == 0.0 || comp_of[w] == *c)
            })
        })
        .map(|(_, comp)| comp.clone())
        .collect()
}

/// Closed components reachable from the support of `p0`; where the
/// stationary mass of the chain lives.
pub(crate) fn recurrent_classes(
    m: &DMatrix<f64>,
    p0: &DVector<f64>,
) -> Result<Vec<Vec<usize>>> {
    let adj = adjacency(m);
    let support: Vec<usize> = (0..p0.len()).filter(|&i| p0[i] > 0.0).collect();
    let reach = reachable_from(&adj, &support);
    let classes: Vec<Vec<usize>> = closed_components(m)
        .into_iter()
        .filter(|comp| comp.iter().any(|&v| reach[v]))
        .collect();
    if classes.is_empty() {
        return Err(Error::Internal(
            "no recurrent class reachable from the initial distribution".into(),
        ));
    }
    Ok(classes)
}

/// Restricts `m` to the states that carry stationary mass: the closed
/// strongly connected components reachable from the support of `p0`.
///
/// Returns the retained indices (sorted ascending) and the principal
/// submatrix on them. Fully ergodic chains are returned unchanged.
pub fn scc_restrict(m: &DMatrix<f64>, p0: &DVector<f64>) -> Result<(Vec<usize>, DMatrix<f64>)> {
    if m.nrows() != m.ncols() || p0.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "chain is {}x{}, initial distribution has length {}",
            m.nrows(),
            m.ncols(),
            p0.len()
        )));
    }
    check_row_stochastic(m, "chain")?;
    let classes = recurrent_classes(m, p0)?;
    let mut idx: Vec<usize> = classes.into_iter().flatten().collect();
    idx.sort_unstable();
    let sub = crate::mdp::gather_square(m, &idx);
    Ok((idx, sub))
}

/// Pseudospectral gap of an ergodic chain, truncated at `k_max`:
/// `max_{1 <= k <= k_max} (1 - lambda_2((D^{-1} M^T D)^k M^k)) / k`.
///
/// The product matrix is similar to `(L^k)^T L^k`, so each term is computed
/// as `(1 - sigma_2(L^k)^2) / k`. Truncation underestimates the supremum,
/// which is the conservative direction for sample-size planning.
pub fn pseudospectral_gap(m: &DMatrix<f64>, mu: &DVector<f64>, k_max: usize) -> Result<f64> {
    if k_max == 0 {
        return Err(Error::Validation("k_max must be at least 1".into()));
    }
    if m.nrows() == 1 {
        // No second eigenvalue; the chain mixes in one step.
        return Ok(1.0);
    }
    let l = rescaled_matrix(m, mu)?;
    let mut power = l.clone();
    let mut best = f64::NEG_INFINITY;
    for k in 1..=k_max {
        if k > 1 {
            power = &power * &l;
        }
        let sigma = power
            .clone()
            .try_svd(false, false, f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?
            .singular_values;
        let mut svals: Vec<f64> = sigma.iter().copied().collect();
        svals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let term = (1.0 - svals[1] * svals[1]) / k as f64;
        best = best.max(term);
    }
    Ok(best)
}

/// Default truncation depth for [`pseudospectral_gap`].
pub fn default_k_max(n_states: usize) -> usize {
    2 * n_states.max(1)
}

/// `sum_i p0_i^2 / mu_i`, with `0/0` read as `0`. Errors if `p0` has mass on
/// a state with no stationary mass.
pub fn d_p0(p0: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    if p0.len() != mu.len() {
        return Err(Error::Dimension(format!(
            "vectors have lengths {} and {}",
            p0.len(),
            mu.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..p0.len() {
        if p0[i] == 0.0 {
            continue;
        }
        if p0[i] < 0.0 {
            return Err(Error::Validation(format!(
                "initial distribution entry {i} is negative"
            )));
        }
        if mu[i] <= 0.0 {
            return Err(Error::Domain(format!(
                "initial distribution has mass on state {i} with no stationary mass"
            )));
        }
        total += p0[i] * p0[i] / mu[i];
    }
    Ok(total)
}
