//! Permutation recovery between a known source chain and a (possibly
//! estimated) target chain.
//!
//! Recovery rests on one fact: if `L2 = P^T L1 P` for friendly rescaled
//! matrices, then the oriented right singular vectors satisfy `V2 = P^T V1`,
//! and `P` is the unique permutation doing so. Matching rows of `V2` to rows
//! of `V1` by squared Euclidean distance and solving the resulting linear
//! assignment problem therefore recovers the state bijection. With sampled
//! data, states whose stationary mass falls below a threshold `t` are clipped
//! on both sides first, the match is computed on the surviving principal
//! submatrices, and the partial permutation is extended by a deterministic
//! completion rule.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{
    self, gather_square, induced_chain, stationary_restart, PermutationMap, StochasticPolicy,
    TabularMdp,
};
use crate::sampling::EmpiricalChain;
use crate::spectral::{
    closed_components, friendliness_of_svd, rescaled_matrix, scc_restrict, OrientedSvd,
    DEFAULT_FRIENDLINESS_TOL,
};

/// Frobenius tolerance for the verification pass of [`exact_recover`].
pub const RECOVERY_VERIFY_TOL: f64 = 1e-8;

/// A square linear assignment instance. For singular-vector matching the cost
/// is `C[(i, j)] = || v_target.row(i) - v_source.row(j) ||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProblem {
    cost: DMatrix<f64>,
}

impl AssignmentProblem {
    pub fn new(cost: DMatrix<f64>) -> Result<Self> {
        if cost.nrows() != cost.ncols() {
            return Err(Error::Dimension(format!(
                "cost matrix must be square, got {}x{}",
                cost.nrows(),
                cost.ncols()
            )));
        }
        if cost.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("cost matrix has non-finite entries".into()));
        }
        Ok(Self { cost })
    }

    /// Squared-distance costs between rows of two equal-shaped matrices.
    pub fn from_rows(target: &DMatrix<f64>, source: &DMatrix<f64>) -> Result<Self> {
        if target.nrows() != source.nrows() || target.ncols() != source.ncols() {
            return Err(Error::Dimension(format!(
                "row matrices are {}x{} and {}x{}",
                target.nrows(),
                target.ncols(),
                source.nrows(),
                source.ncols()
            )));
        }
        let n = target.nrows();
        let cost = DMatrix::from_fn(n, n, |i, j| {
            (target.row(i) - source.row(j)).norm_squared()
        });
        Self::new(cost)
    }

    pub fn size(&self) -> usize {
        self.cost.nrows()
    }

    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    /// Total cost of an assignment given as `row -> column`.
    pub fn assignment_cost(&self, perm: &PermutationMap) -> f64 {
        perm.as_slice()
            .iter()
            .enumerate()
            .map(|(i, &j)| self.cost[(i, j)])
            .sum()
    }
}

const UNASSIGNED: usize = usize::MAX;

/// Shortest-augmenting-path solver for the square min-cost assignment
/// problem, O(n^3). Returns `row -> column`.
fn lap_min(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mut row_potential = vec![0.0f64; n];
    let mut col_potential = vec![0.0f64; n + 1];
    // col_row[j] = row currently assigned to column j; slot n is the virtual
    // column used to seed each augmentation.
    let mut col_row = vec![UNASSIGNED; n + 1];
    for new_row in 0..n {
        col_row[n] = new_row;
        let mut j0 = n;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut prev = vec![n; n + 1];
        let mut used = vec![false; n + 1];
        while col_row[j0] != UNASSIGNED {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let reduced = cost[(i0, j)] - row_potential[i0] - col_potential[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        prev[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    if col_row[j] != UNASSIGNED {
                        row_potential[col_row[j]] += delta;
                    }
                    col_potential[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
        }
        while j0 != n {
            let j1 = prev[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }
    let mut row_col = vec![UNASSIGNED; n];
    for j in 0..n {
        if col_row[j] != UNASSIGNED {
            row_col[col_row[j]] = j;
        }
    }
    row_col
}

fn assignment_total(cost: &DMatrix<f64>, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)])
        .sum()
}

/// Minimum-cost perfect assignment; among cost-minimizing assignments the
/// lexicographically smallest one (viewed as the vector `row -> column`) is
/// returned, so ties resolve reproducibly.
pub fn hungarian(problem: &AssignmentProblem) -> Result<PermutationMap> {
    let cost = problem.cost();
    let n = problem.size();
    if n == 0 {
        return Err(Error::Validation("empty assignment problem".into()));
    }
    let base = lap_min(cost);
    let optimum = assignment_total(cost, &base);
    let tie_tol = 1e-9 * (1.0 + optimum.abs());

    // Fix rows in order, taking the smallest column that still admits a
    // completion within tie_tol of the optimum.
    let mut chosen = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut fixed_cost = 0.0;
    for i in 0..n {
        let free_cols: Vec<usize> = (0..n).filter(|&j| !used[j]).collect();
        let remaining_rows: Vec<usize> = (i + 1..n).collect();
        let mut pick = UNASSIGNED;
        for &j in &free_cols {
            let with_j = fixed_cost + cost[(i, j)];
            let completion = if remaining_rows.is_empty() {
                0.0
            } else {
                let rest_cols: Vec<usize> =
                    free_cols.iter().copied().filter(|&c| c != j).collect();
                let sub = DMatrix::from_fn(remaining_rows.len(), rest_cols.len(), |r, c| {
                    cost[(remaining_rows[r], rest_cols[c])]
                });
                assignment_total(&sub, &lap_min(&sub))
            };
            if with_j + completion <= optimum + tie_tol {
                pick = j;
                break;
            }
        }
        if pick == UNASSIGNED {
            return Err(Error::Internal(
                "assignment refinement found no consistent column".into(),
            ));
        }
        used[pick] = true;
        fixed_cost += cost[(i, pick)];
        chosen.push(pick);
    }
    PermutationMap::new(chosen)
}

/// Rule used to extend a partial permutation on the retained states to a full
/// bijection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompletionRule {
    /// Pair the remaining target indices with the remaining source indices in
    /// ascending order.
    #[default]
    Ascending,
}

/// Extends a partial injective map (pairs of `(target, source)` indices on
/// `{0, ..., n-1}`) to a full [`PermutationMap`].
pub fn complete_permutation(
    partial: &[(usize, usize)],
    n: usize,
    rule: CompletionRule,
) -> Result<PermutationMap> {
    let mut forward = vec![UNASSIGNED; n];
    let mut used_source = vec![false; n];
    for &(t, s) in partial {
        if t >= n || s >= n {
            return Err(Error::Validation(format!(
                "partial map entry ({t} -> {s}) out of range 0..{n}"
            )));
        }
        if forward[t] != UNASSIGNED {
            return Err(Error::Validation(format!(
                "partial map assigns target index {t} twice"
            )));
        }
        if used_source[s] {
            return Err(Error::Validation(format!(
                "partial map is not injective: source index {s} used twice"
            )));
        }
        forward[t] = s;
        used_source[s] = true;
    }
    match rule {
        CompletionRule::Ascending => {
            let mut free_sources = (0..n).filter(|&s| !used_source[s]);
            for slot in forward.iter_mut() {
                if *slot == UNASSIGNED {
                    *slot = free_sources.next().ok_or_else(|| {
                        Error::Internal("completion ran out of source indices".into())
                    })?;
                }
            }
        }
    }
    PermutationMap::new(forward)
}

/// Stationary distribution of a chain with a unique closed class, identified
/// structurally (no initial distribution required).
fn stationary_of_unique_class(m: &DMatrix<f64>) -> Result<(Vec<usize>, DVector<f64>)> {
    let classes = closed_components(m);
    let idx = match classes.len() {
        0 => return Err(Error::Internal("chain has no recurrent class".into())),
        1 => classes.into_iter().next().unwrap(),
        _ => {
            return Err(Error::Validation(format!(
                "ambiguous recurrent structure: {} closed classes",
                classes.len()
            )))
        }
    };
    let sub = gather_square(m, &idx);
    let uniform = DVector::from_element(idx.len(), 1.0 / idx.len() as f64);
    let mu = mdp::stationary_distribution(&sub, &uniform)?;
    Ok((idx, mu))
}

/// Exactly recovers the permutation relating a friendly chain `m` to an
/// observed conjugated copy `m_permuted = P^T m P`.
///
/// The chain is restricted to its recurrent part (identified through `p0`),
/// both restrictions are rescaled and decomposed, and the singular-vector
/// rows are matched by linear assignment. The result is verified by
/// conjugating `m` and comparing against `m_permuted` in Frobenius norm at
/// [`RECOVERY_VERIFY_TOL`]; failure signals violated preconditions or a
/// numerically degenerate decomposition.
pub fn exact_recover(
    m: &DMatrix<f64>,
    m_permuted: &DMatrix<f64>,
    p0: &DVector<f64>,
) -> Result<PermutationMap> {
    let n = m.nrows();
    if m_permuted.nrows() != n || m_permuted.ncols() != m.ncols() {
        return Err(Error::Dimension(format!(
            "chains have shapes {}x{} and {}x{}",
            m.nrows(),
            m.ncols(),
            m_permuted.nrows(),
            m_permuted.ncols()
        )));
    }
    let (src_idx, src_sub) = scc_restrict(m, p0)?;
    let src_uniform = DVector::from_element(src_idx.len(), 1.0 / src_idx.len() as f64);
    let mu_src = mdp::stationary_distribution(&src_sub, &src_uniform)?;

    crate::mdp::check_row_stochastic(m_permuted, "observed chain")?;
    let (tgt_idx, mu_tgt_sub) = if src_idx.len() == n {
        let (idx, mu) = stationary_of_unique_class(m_permuted)?;
        (idx, mu)
    } else {
        // Reducible case: the retained class of the observed chain must be
        // the one matching the source restriction in size.
        let candidates: Vec<Vec<usize>> = closed_components(m_permuted)
            .into_iter()
            .filter(|c| c.len() == src_idx.len())
            .collect();
        match candidates.len() {
            1 => {
                let idx = candidates.into_iter().next().unwrap();
                let sub = gather_square(m_permuted, &idx);
                let uniform = DVector::from_element(idx.len(), 1.0 / idx.len() as f64);
                (idx.clone(), mdp::stationary_distribution(&sub, &uniform)?)
            }
            0 => {
                return Err(Error::Validation(
                    "observed chain has no recurrent class matching the source restriction"
                        .into(),
                ))
            }
            k => {
                return Err(Error::Validation(format!(
                    "observed chain has {k} recurrent classes of the retained size; \
                     the alignment is ambiguous"
                )))
            }
        }
    };
    if tgt_idx.len() != src_idx.len() {
        return Err(Error::Dimension(format!(
            "retained {} source states but {} observed states",
            src_idx.len(),
            tgt_idx.len()
        )));
    }
    let tgt_sub = gather_square(m_permuted, &tgt_idx);

    let l_src = rescaled_matrix(&src_sub, &mu_src)?;
    let l_tgt = rescaled_matrix(&tgt_sub, &mu_tgt_sub)?;
    let svd_src = OrientedSvd::compute(&l_src)?;
    let svd_tgt = OrientedSvd::compute(&l_tgt)?;

    let cert = friendliness_of_svd(&svd_src, DEFAULT_FRIENDLINESS_TOL, DEFAULT_FRIENDLINESS_TOL);
    if !cert.is_friendly {
        return Err(Error::Unfriendly {
            alpha: cert.alpha,
            beta: cert.beta,
        });
    }

    let problem = AssignmentProblem::from_rows(&svd_tgt.v, &svd_src.v)?;
    let partial_positions = hungarian(&problem)?;
    let pairs: Vec<(usize, usize)> = partial_positions
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &l)| (tgt_idx[k], src_idx[l]))
        .collect();
    let pi = complete_permutation(&pairs, n, CompletionRule::Ascending)?;

    let residual = (pi.conjugate(m) - m_permuted).norm();
    if residual > RECOVERY_VERIFY_TOL {
        return Err(Error::RecoveryFailed {
            residual,
            tolerance: RECOVERY_VERIFY_TOL,
        });
    }
    Ok(pi)
}

/// Configuration for threshold-clipped permuted policy learning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PplConfig {
    /// Occupancy threshold; states with (estimated) stationary mass below `t`
    /// are clipped before matching.
    pub t: f64,
    /// Tolerances for the friendliness certificate of the retained rescaled
    /// matrix.
    pub tol_alpha: f64,
    pub tol_beta: f64,
    /// How the matched partial permutation is extended to a full bijection.
    pub completion_rule: CompletionRule,
}

impl PplConfig {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Validation(format!(
                "threshold must be positive, got {t}"
            )));
        }
        Ok(Self {
            t,
            tol_alpha: DEFAULT_FRIENDLINESS_TOL,
            tol_beta: DEFAULT_FRIENDLINESS_TOL,
            completion_rule: CompletionRule::Ascending,
        })
    }
}

/// Scalar diagnostics attached to an [`AlignmentResult`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PplDiagnostics {
    /// Trajectory length the estimate was built from (`0` when the exact
    /// permuted chain was injected instead of samples).
    pub samples: usize,
    /// Number of retained source states.
    pub retained: usize,
    /// `min_i |mu_i - t|`, the margin between the threshold and the exact
    /// stationary values.
    pub threshold_gap: f64,
}

/// Output of permuted policy learning.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// Recovered bijection from target indices to source indices.
    pub pi_hat: PermutationMap,
    /// Target-side indices that survived thresholding and were matched.
    pub matched_indices: Vec<usize>,
    /// The source policy transported through `pi_hat`.
    pub policy_hat: StochasticPolicy,
    /// Friendliness certificate of the retained exact rescaled matrix. An
    /// unfriendly certificate is a warning: recovery is still attempted.
    pub certificate: crate::spectral::FriendlinessCertificate,
    pub diagnostics: PplDiagnostics,
}

/// Permuted policy learning from an observed state trajectory in the target
/// domain.
///
/// Builds the exact induced chain of `(mdp, policy)`, estimates the target
/// chain and its stationary mass from the trajectory, clips both sides at the
/// occupancy threshold, matches the oriented singular-vector rows of the
/// rescaled principal submatrices, and returns the transported policy.
pub fn ppl(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    config: &PplConfig,
    trajectory: &[usize],
) -> Result<AlignmentResult> {
    if trajectory.len() < 2 {
        return Err(Error::Validation(
            "trajectory must contain at least two states".into(),
        ));
    }
    let empirical = EmpiricalChain::from_trajectory(trajectory, mdp.n_states())?;
    ppl_from_estimates(
        mdp,
        policy,
        config,
        empirical.chain(),
        empirical.stationary(),
        empirical.samples(),
    )
}

/// Permuted policy learning with the sampled chain replaced by the exact
/// permuted chain: the infinite-sample surrogate. The stationary estimate is
/// the exact stationary distribution of `chain_target`.
pub fn ppl_exact(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    config: &PplConfig,
    chain_target: &DMatrix<f64>,
) -> Result<AlignmentResult> {
    if chain_target.nrows() != mdp.n_states() || chain_target.ncols() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "target chain is {}x{}, expected {}x{}",
            chain_target.nrows(),
            chain_target.ncols(),
            mdp.n_states(),
            mdp.n_states()
        )));
    }
    crate::mdp::check_row_stochastic(chain_target, "target chain")?;
    let (idx, mu_sub) = stationary_of_unique_class(chain_target)?;
    let mut mu_hat = DVector::zeros(mdp.n_states());
    for (k, &i) in idx.iter().enumerate() {
        mu_hat[i] = mu_sub[k];
    }
    ppl_from_estimates(mdp, policy, config, chain_target, &mu_hat, 0)
}

/// Core of permuted policy learning, driven by an estimated (or exact)
/// target chain and stationary vector.
pub fn ppl_from_estimates(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    config: &PplConfig,
    chain_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    samples: usize,
) -> Result<AlignmentResult> {
    if !(config.t > 0.0) {
        return Err(Error::Validation(format!(
            "threshold must be positive, got {}",
            config.t
        )));
    }
    let n = mdp.n_states();
    if chain_hat.nrows() != n || mu_hat.len() != n {
        return Err(Error::Dimension(format!(
            "estimates have shapes {}x{} and {}, expected {n}",
            chain_hat.nrows(),
            chain_hat.ncols(),
            mu_hat.len()
        )));
    }
    let m = induced_chain(mdp, policy)?;
    let mu = stationary_restart(mdp, policy)?;

    let t = config.t;
    let retained_src: Vec<usize> = (0..n).filter(|&i| mu[i] >= t).collect();
    let retained_tgt: Vec<usize> = (0..n).filter(|&i| mu_hat[i] >= t).collect();
    if retained_src.is_empty() {
        return Err(Error::DegenerateThreshold { t });
    }
    if retained_src.len() != retained_tgt.len() {
        return Err(Error::ThresholdMismatch {
            exact: retained_src.len(),
            empirical: retained_tgt.len(),
        });
    }
    let threshold_gap = (0..n)
        .map(|i| (mu[i] - t).abs())
        .fold(f64::INFINITY, f64::min);

    // Principal submatrices, rescaled without renormalizing the clipped rows.
    let m_sub = gather_square(&m, &retained_src);
    let m_hat_sub = gather_square(chain_hat, &retained_tgt);
    let mu_sub = DVector::from_fn(retained_src.len(), |k, _| mu[retained_src[k]]);
    let mu_hat_sub = DVector::from_fn(retained_tgt.len(), |k, _| mu_hat[retained_tgt[k]]);

    let l_sub = rescaled_matrix(&m_sub, &mu_sub)?;
    let l_hat_sub = rescaled_matrix(&m_hat_sub, &mu_hat_sub)?;
    let svd = OrientedSvd::compute(&l_sub)?;
    let svd_hat = OrientedSvd::compute(&l_hat_sub)?;
    let certificate = friendliness_of_svd(&svd, config.tol_alpha, config.tol_beta);

    let problem = AssignmentProblem::from_rows(&svd_hat.v, &svd.v)?;
    let partial_positions = hungarian(&problem)?;
    let pairs: Vec<(usize, usize)> = partial_positions
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &l)| (retained_tgt[k], retained_src[l]))
        .collect();
    let pi_hat = complete_permutation(&pairs, n, config.completion_rule)?;
    let policy_hat = pi_hat.transport_policy(policy)?;

    Ok(AlignmentResult {
        pi_hat,
        matched_indices: retained_tgt,
        policy_hat,
        certificate,
        diagnostics: PplDiagnostics {
            samples,
            retained: retained_src.len(),
            threshold_gap,
        },
    })
}

/// Result of checking the clipped-imitation loss bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub loss: f64,
    /// `2 t |S| / (1 - gamma)^2`.
    pub bound: f64,
    /// Whether `loss <= bound + 1e-9`.
    pub holds: bool,
    /// Whether `pi_hat` agrees with `pi_star` on every state with stationary
    /// mass at least `t`. When false, `holds` is vacuous.
    pub hypothesis_met: bool,
}

/// Measures the imitation loss of playing the policy transported through
/// `pi_hat` and compares it against the clipped-occupancy bound
/// `2 t |S| / (1 - gamma)^2`, which applies whenever `pi_hat` agrees with
/// `pi_star` on all states of stationary mass at least `t`.
pub fn imitation_loss_bound_check(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    pi_star: &PermutationMap,
    pi_hat: &PermutationMap,
    t: f64,
) -> Result<BoundCheck> {
    if pi_star.size() != mdp.n_states() || pi_hat.size() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "permutations have sizes {} and {}, MDP has {} states",
            pi_star.size(),
            pi_hat.size(),
            mdp.n_states()
        )));
    }
    let mu = stationary_restart(mdp, policy)?;
    let inv_star = pi_star.inverse();
    let inv_hat = pi_hat.inverse();
    let hypothesis_met = (0..mdp.n_states())
        .filter(|&s| mu[s] >= t)
        .all(|s| inv_star.forward(s) == inv_hat.forward(s));

    let policy_hat = pi_hat.transport_policy(policy)?;
    let loss = mdp::imitation_loss(mdp, policy, pi_star, &policy_hat)?;
    let n = mdp.n_states() as f64;
    let one_minus_gamma = 1.0 - mdp.gamma();
    let bound = 2.0 * t * n / (one_minus_gamma * one_minus_gamma);
    Ok(BoundCheck {
        loss,
        bound,
        holds: loss <= bound + 1e-9,
        hypothesis_met,
    })
}
