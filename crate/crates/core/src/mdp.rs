//! Finite MDPs, stochastic policies, state permutations, induced Markov
//! chains, occupancy measures, value functions, and the imitation objective.
//!
//! The central object is the *induced chain* of an MDP/policy pair: the
//! row-stochastic matrix
//!
//! ```text
//! M[s][s'] = (1 - gamma) * p0[s'] + gamma * sum_a phi(a|s) P(s'|s,a)
//! ```
//!
//! which folds the `1 - gamma` restart into the transition structure. Its
//! stationary distribution is exactly the discounted state-occupancy measure
//! of the policy, which is what every alignment procedure in this crate
//! operates on.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance used when validating stochasticity of rows and distributions.
/// Inputs outside this tolerance are rejected, not renormalized.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Iteration cap for [`power_iteration`].
pub const POWER_ITERATION_CAP: usize = 1_000_000;

/// Convergence tolerance for [`power_iteration`].
pub const POWER_ITERATION_TOL: f64 = 1e-12;

fn check_probability_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(x) = v.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Validation(format!(
            "{what} has invalid entry {x}"
        )));
    }
    let sum = v.sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Validation(format!(
            "{what} sums to {sum}, expected 1 within {STOCHASTIC_TOL:e}"
        )));
    }
    Ok(())
}

pub(crate) fn check_row_stochastic(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if let Some(x) = row.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Validation(format!(
                "{what} row {i} has invalid entry {x}"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::Validation(format!(
                "{what} row {i} sums to {sum}, expected 1 within {STOCHASTIC_TOL:e}"
            )));
        }
    }
    Ok(())
}

/// A finite MDP without reward: dynamics tensor, initial distribution, and
/// discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// One `n_states x n_states` row-stochastic matrix per action;
    /// `dynamics[a][(s, t)]` is the probability of moving to `t` from `s`
    /// under action `a`.
    dynamics: Vec<DMatrix<f64>>,
    p0: DVector<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// Validates and builds an MDP. Every dynamics row and `p0` must sum to
    /// one within [`STOCHASTIC_TOL`]; `gamma` must lie strictly in `(0, 1)`.
    pub fn new(dynamics: Vec<DMatrix<f64>>, p0: DVector<f64>, gamma: f64) -> Result<Self> {
        if dynamics.is_empty() {
            return Err(Error::Validation("MDP needs at least one action".into()));
        }
        let n_states = p0.len();
        if n_states == 0 {
            return Err(Error::Validation("MDP needs at least one state".into()));
        }
        for (a, m) in dynamics.iter().enumerate() {
            if m.nrows() != n_states || m.ncols() != n_states {
                return Err(Error::Dimension(format!(
                    "dynamics for action {a} is {}x{}, expected {n_states}x{n_states}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            check_row_stochastic(m, &format!("dynamics for action {a}"))?;
        }
        check_probability_vector(&p0, "initial distribution")?;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Validation(format!(
                "discount gamma must be in (0, 1), got {gamma}"
            )));
        }
        Ok(Self {
            n_states,
            n_actions: dynamics.len(),
            dynamics,
            p0,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn p0(&self) -> &DVector<f64> {
        &self.p0
    }

    /// Transition matrix of a single action.
    pub fn action_dynamics(&self, action: usize) -> &DMatrix<f64> {
        &self.dynamics[action]
    }

    pub fn dynamics(&self) -> &[DMatrix<f64>] {
        &self.dynamics
    }
}

/// A stochastic policy stored as an `n_states x n_actions` matrix of action
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    probs: DMatrix<f64>,
}

impl StochasticPolicy {
    /// Validates row-stochasticity of the action distribution per state.
    pub fn new(probs: DMatrix<f64>) -> Result<Self> {
        if probs.nrows() == 0 || probs.ncols() == 0 {
            return Err(Error::Validation("policy matrix must be nonempty".into()));
        }
        check_row_stochastic(&probs, "policy")?;
        Ok(Self { probs })
    }

    /// Uniform action distribution at every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            probs: DMatrix::from_element(n_states, n_actions, p),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// `phi(a | s)`.
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[(state, action)]
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

/// A bijection from target-domain state indices to source-domain state
/// indices: `forward[i] = j` maps target state `i` to source state `j`.
///
/// The matrix view `P` has `P[(forward[i], i)] = 1`, so for a source-indexed
/// vector `v`, `P^T v` is the target-indexed vector `v[forward[i]]`, and
/// conjugation `P^T M P` re-expresses a source chain in target indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMap {
    forward: Vec<usize>,
}

impl PermutationMap {
    /// Validates that `forward` is a bijection on `{0, ..., n-1}`.
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        if n == 0 {
            return Err(Error::Validation("empty permutation".into()));
        }
        let mut seen = vec![false; n];
        for &j in &forward {
            if j >= n {
                return Err(Error::Validation(format!(
                    "permutation entry {j} out of range 0..{n}"
                )));
            }
            if seen[j] {
                return Err(Error::Validation(format!(
                    "permutation maps two indices to {j}"
                )));
            }
            seen[j] = true;
        }
        Ok(Self { forward })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            forward: (0..n).collect(),
        }
    }

    /// Uniformly random permutation drawn from `rng` (Fisher-Yates).
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut forward: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            forward.swap(i, j);
        }
        Self { forward }
    }

    pub fn size(&self) -> usize {
        self.forward.len()
    }

    /// Source index assigned to target index `i`.
    pub fn forward(&self, i: usize) -> usize {
        self.forward[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.forward
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0usize; self.forward.len()];
        for (i, &j) in self.forward.iter().enumerate() {
            inv[j] = i;
        }
        Self { forward: inv }
    }

    /// Dense matrix view (source rows, target columns).
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.forward.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &j) in self.forward.iter().enumerate() {
            m[(j, i)] = 1.0;
        }
        m
    }

    /// Re-indexes a source vector into target coordinates (`P^T v`).
    pub fn transport_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.forward.len(), |i, _| v[self.forward[i]])
    }

    /// Re-indexes the rows of a source `states x k` matrix into target
    /// coordinates, e.g. an occupancy matrix.
    pub fn transport_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, c| m[(self.forward[i], c)])
    }

    /// Conjugates a square source-indexed matrix into target indices
    /// (`P^T M P`).
    pub fn conjugate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.forward.len();
        DMatrix::from_fn(n, n, |i, j| m[(self.forward[i], self.forward[j])])
    }

    /// Undoes [`Self::conjugate`]: maps a target-indexed square matrix back
    /// into source indices (`P M P^T`).
    pub fn unconjugate(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.inverse().conjugate(m)
    }

    /// The target-domain MDP obtained by relabeling states through this map.
    pub fn permuted_mdp(&self, mdp: &TabularMdp) -> Result<TabularMdp> {
        if self.size() != mdp.n_states() {
            return Err(Error::Dimension(format!(
                "permutation size {} does not match MDP with {} states",
                self.size(),
                mdp.n_states()
            )));
        }
        let dynamics = mdp.dynamics().iter().map(|p| self.conjugate(p)).collect();
        TabularMdp::new(dynamics, self.transport_vector(mdp.p0()), mdp.gamma())
    }

    /// Transports a source policy into the target domain: the returned policy
    /// plays `phi(. | forward[i])` at target state `i`.
    pub fn transport_policy(&self, policy: &StochasticPolicy) -> Result<StochasticPolicy> {
        if self.size() != policy.n_states() {
            return Err(Error::Dimension(format!(
                "permutation size {} does not match policy with {} states",
                self.size(),
                policy.n_states()
            )));
        }
        StochasticPolicy::new(self.transport_rows(policy.probs()))
    }
}

/// Discounted state-action occupancy of a policy, together with its state
/// marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    /// `rho[(s, a)]`, summing to one over all pairs.
    pub rho: DMatrix<f64>,
    /// State marginal `mu[s] = sum_a rho[(s, a)]`.
    pub mu: DVector<f64>,
}

fn check_pair(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, MDP expects {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

fn check_reward(mdp: &TabularMdp, reward: &DMatrix<f64>) -> Result<()> {
    if reward.nrows() != mdp.n_states() || reward.ncols() != mdp.n_actions() {
        return Err(Error::Dimension(format!(
            "reward is {}x{}, expected {}x{}",
            reward.nrows(),
            reward.ncols(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// State-to-state transition matrix of the policy mixture,
/// `P_phi[(s, t)] = sum_a phi(a|s) P(t|s,a)`, without the restart component.
pub fn policy_chain(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<DMatrix<f64>> {
    check_pair(mdp, policy)?;
    let n = mdp.n_states();
    let mut chain = DMatrix::zeros(n, n);
    for a in 0..mdp.n_actions() {
        let p = mdp.action_dynamics(a);
        for s in 0..n {
            let w = policy.prob(s, a);
            if w != 0.0 {
                for t in 0..n {
                    chain[(s, t)] += w * p[(s, t)];
                }
            }
        }
    }
    Ok(chain)
}

/// The restart chain induced by running `policy` in `mdp` with reset
/// probability `1 - gamma`:
/// `M[(s, t)] = (1 - gamma) p0[t] + gamma * sum_a phi(a|s) P(t|s,a)`.
pub fn induced_chain(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<DMatrix<f64>> {
    let mut chain = policy_chain(mdp, policy)?;
    let gamma = mdp.gamma();
    let restart = 1.0 - gamma;
    for s in 0..mdp.n_states() {
        for t in 0..mdp.n_states() {
            chain[(s, t)] = restart * mdp.p0()[t] + gamma * chain[(s, t)];
        }
    }
    Ok(chain)
}

/// Residual `max_t |(mu^T M)_t - mu_t|` of a stationarity candidate.
pub fn stationarity_residual(m: &DMatrix<f64>, mu: &DVector<f64>) -> f64 {
    let probe = m.transpose() * mu;
    (probe - mu).amax()
}

/// Solves `mu^T M = mu^T` on an irreducible stochastic submatrix by replacing
/// one balance equation with the normalization constraint.
fn solve_irreducible(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = m.nrows();
    // A = I - M^T with the last row overwritten by the normalization row.
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        let e = if i == j { 1.0 } else { 0.0 };
        e - m[(j, i)]
    });
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("stationary system is singular".into()))?;
    Ok(mu)
}

fn sanitize_stationary(mut mu: DVector<f64>) -> DVector<f64> {
    for x in mu.iter_mut() {
        if *x < 0.0 && *x > -1e-12 {
            *x = 0.0;
        }
    }
    let sum = mu.sum();
    if sum > 0.0 {
        mu /= sum;
    }
    mu
}

/// Stationary distribution of a row-stochastic matrix whose recurrent mass is
/// reachable from `p0`.
///
/// Uses a direct linear solve on the recurrent class identified by
/// [`crate::spectral::scc_restrict`], with [`power_iteration`] as a fallback
/// when the solve fails its residual check. Errors if more than one recurrent
/// class is reachable from the support of `p0` (the stationary distribution
/// is then not unique); restart chains always have exactly one.
pub fn stationary_distribution(m: &DMatrix<f64>, p0: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "chain must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if p0.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "initial distribution has length {}, chain has {} states",
            p0.len(),
            m.nrows()
        )));
    }
    check_row_stochastic(m, "chain")?;
    check_probability_vector(p0, "initial distribution")?;

    let classes = crate::spectral::recurrent_classes(m, p0)?;
    if classes.len() > 1 {
        return Err(Error::Validation(format!(
            "stationary distribution is not unique: {} recurrent classes reachable \
             from the initial distribution",
            classes.len()
        )));
    }
    let idx = &classes[0];
    let sub = gather_square(m, idx);
    let mu_sub = match solve_irreducible(&sub) {
        Ok(mu) if stationarity_residual(&sub, &mu) <= 1e-10 && mu.iter().all(|&x| x > -1e-12) => mu,
        _ => {
            let start = DVector::from_element(idx.len(), 1.0 / idx.len() as f64);
            power_iteration(&sub, &start, POWER_ITERATION_CAP, POWER_ITERATION_TOL)?
        }
    };
    let mut mu = DVector::zeros(m.nrows());
    for (k, &i) in idx.iter().enumerate() {
        mu[i] = mu_sub[k];
    }
    Ok(sanitize_stationary(mu))
}

/// Gathers the principal submatrix on a sorted index set.
pub(crate) fn gather_square(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Power iteration `x <- M^T x` with L1 normalization. Independent oracle for
/// the direct stationary solves; requires an aperiodic chain to converge.
pub fn power_iteration(
    m: &DMatrix<f64>,
    start: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<DVector<f64>> {
    if start.len() != m.nrows() {
        return Err(Error::Dimension(format!(
            "start vector has length {}, chain has {} states",
            start.len(),
            m.nrows()
        )));
    }
    let mt = m.transpose();
    let mut x = start.clone();
    let sum = x.sum();
    if sum <= 0.0 {
        return Err(Error::Validation("start vector must have positive mass".into()));
    }
    x /= sum;
    let mut diff = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = &mt * &x;
        let s = next.sum();
        if s <= 0.0 {
            return Err(Error::Numerical("power iteration lost all mass".into()));
        }
        next /= s;
        diff = (&next - &x).abs().sum();
        x = next;
        if diff <= tol {
            return Ok(x);
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: diff,
    })
}

/// Stationary distribution of the induced chain, computed directly from the
/// restart structure: solves `(I - gamma P_phi^T) mu = (1 - gamma) p0`.
///
/// Equivalent to `stationary_distribution(&induced_chain(mdp, policy)?, p0)`
/// but does not need to classify recurrence; the system is nonsingular for
/// every `gamma < 1`.
pub fn stationary_restart(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<DVector<f64>> {
    let chain = policy_chain(mdp, policy)?;
    let n = mdp.n_states();
    let gamma = mdp.gamma();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let e = if i == j { 1.0 } else { 0.0 };
        e - gamma * chain[(j, i)]
    });
    let b = mdp.p0() * (1.0 - gamma);
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Internal("restart stationary system is singular".into()))?;
    Ok(sanitize_stationary(mu))
}

/// Discounted occupancy measure of `policy` in `mdp`, via the identity
/// `rho(s, a) = phi(a|s) mu(s)` with `mu` the stationary distribution of the
/// induced restart chain.
pub fn occupancy(mdp: &TabularMdp, policy: &StochasticPolicy) -> Result<OccupancyMeasure> {
    let mu = stationary_restart(mdp, policy)?;
    let rho = DMatrix::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| {
        policy.prob(s, a) * mu[s]
    });
    Ok(OccupancyMeasure { rho, mu })
}

/// Value function of `policy` for a state-action reward matrix: solves
/// `V = R_phi + gamma P_phi V` directly.
pub fn value_function(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    reward: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_pair(mdp, policy)?;
    check_reward(mdp, reward)?;
    let n = mdp.n_states();
    let chain = policy_chain(mdp, policy)?;
    let r_phi = DVector::from_fn(n, |s, _| {
        (0..mdp.n_actions())
            .map(|a| policy.prob(s, a) * reward[(s, a)])
            .sum()
    });
    let gamma = mdp.gamma();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let e = if i == j { 1.0 } else { 0.0 };
        e - gamma * chain[(i, j)]
    });
    let v = a
        .lu()
        .solve(&r_phi)
        .ok_or_else(|| Error::Internal("Bellman system is singular".into()))?;
    let residual = (&r_phi + gamma * (&chain * &v) - &v).amax();
    let scale = 1.0 + v.amax();
    if residual > 1e-10 * scale {
        return Err(Error::Internal(format!(
            "Bellman residual {residual:.3e} exceeds tolerance"
        )));
    }
    Ok(v)
}

/// Average advantage of `policy1` over the value function of `policy2`:
/// `A(s) = E_{a ~ phi1(.|s)}[R(s,a) + gamma E_{s'}[V2(s')] - V2(s)]`.
pub fn advantage(
    mdp: &TabularMdp,
    policy1: &StochasticPolicy,
    policy2: &StochasticPolicy,
    reward: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_pair(mdp, policy1)?;
    let v2 = value_function(mdp, policy2, reward)?;
    let n = mdp.n_states();
    let mut adv = DVector::zeros(n);
    for s in 0..n {
        let mut total = 0.0;
        for a in 0..mdp.n_actions() {
            let w = policy1.prob(s, a);
            if w != 0.0 {
                let future: f64 = mdp.action_dynamics(a).row(s).iter().zip(v2.iter())
                    .map(|(&p, &v)| p * v)
                    .sum();
                total += w * (reward[(s, a)] + mdp.gamma() * future);
            }
        }
        adv[s] = total - v2[s];
    }
    Ok(adv)
}

/// Variational total-variation distance between two occupancy matrices:
/// the supremum of `<x - y, c>` over `||c||_inf <= 1`, which equals the
/// entrywise L1 norm (twice the halved TV convention).
pub fn tv_l1(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum()
}

/// Imitation loss of playing `policy_hat` in the target domain induced by
/// `pi_star`, against the correctly transported occupancy of `policy`.
///
/// The target dynamics and initial distribution are constructed internally by
/// relabeling `mdp` through `pi_star`. Returns a value in `[0, 2]`.
pub fn imitation_loss(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    pi_star: &PermutationMap,
    policy_hat: &StochasticPolicy,
) -> Result<f64> {
    check_pair(mdp, policy)?;
    if pi_star.size() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "permutation size {} does not match MDP with {} states",
            pi_star.size(),
            mdp.n_states()
        )));
    }
    let source = occupancy(mdp, policy)?;
    let transported = pi_star.transport_rows(&source.rho);
    let target = pi_star.permuted_mdp(mdp)?;
    let hat = occupancy(&target, policy_hat)?;
    Ok(tv_l1(&transported, &hat.rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle_mdp(gamma: f64) -> TabularMdp {
        // Single action, deterministic 3-cycle.
        let p = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
        );
        TabularMdp::new(vec![p], DVector::from_vec(vec![1.0, 0.0, 0.0]), gamma).unwrap()
    }

    pub(crate) fn random_mdp_for_test(
        n: usize,
        actions: usize,
        gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> (TabularMdp, StochasticPolicy) {
        crate::generate::random_mdp(n, actions, gamma, rng).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        let p0 = DVector::from_vec(vec![0.5, 0.5]);
        assert!(matches!(
            TabularMdp::new(vec![p], p0.clone(), 0.9),
            Err(Error::Validation(_))
        ));
        let good = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            TabularMdp::new(vec![good.clone()], p0.clone(), 1.0),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            TabularMdp::new(vec![good.clone()], DVector::from_vec(vec![0.7, 0.2]), 0.9),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            StochasticPolicy::new(DMatrix::from_row_slice(1, 2, &[0.2, 0.9])),
            Err(Error::Validation(_))
        ));
        assert!(PermutationMap::new(vec![0, 0]).is_err());
        assert!(PermutationMap::new(vec![0, 2]).is_err());
    }

    #[test]
    fn induced_chain_restart_only_limit() {
        // gamma -> 0: every row approaches p0.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mdp, policy) = random_mdp_for_test(4, 2, 1e-12, &mut rng);
        let m = induced_chain(&mdp, &policy).unwrap();
        for s in 0..4 {
            for t in 0..4 {
                assert_relative_eq!(m[(s, t)], mdp.p0()[t], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn induced_chain_cycle_row() {
        let mdp = cycle_mdp(0.9);
        let policy = StochasticPolicy::uniform(3, 1);
        let m = induced_chain(&mdp, &policy).unwrap();
        assert_relative_eq!(m[(0, 0)], 0.1, epsilon = 1e-15);
        assert_relative_eq!(m[(0, 1)], 0.9, epsilon = 1e-15);
        assert_relative_eq!(m[(0, 2)], 0.0, epsilon = 1e-15);
        check_row_stochastic(&m, "induced chain").unwrap();
    }

    #[test]
    fn induced_chain_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mdp, policy) = random_mdp_for_test(5, 3, 0.85, &mut rng);
        let m = induced_chain(&mdp, &policy).unwrap();
        let pi = PermutationMap::random(5, &mut rng);
        let target = pi.permuted_mdp(&mdp).unwrap();
        let policy_t = pi.transport_policy(&policy).unwrap();
        let m_target = induced_chain(&target, &policy_t).unwrap();
        assert_relative_eq!(
            (m_target - pi.conjugate(&m)).amax(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn stationary_two_state() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let p0 = DVector::from_vec(vec![0.5, 0.5]);
        let mu = stationary_distribution(&m, &p0).unwrap();
        assert_relative_eq!(mu[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(mu[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_of_restart_only_chain_is_p0() {
        // M with every row equal to p0 (the gamma -> 0 limit).
        let p0 = DVector::from_vec(vec![0.3, 0.45, 0.25]);
        let m = DMatrix::from_fn(3, 3, |_, j| p0[j]);
        let mu = stationary_distribution(&m, &p0).unwrap();
        assert_relative_eq!((mu - p0).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_of_conjugated_chain_is_permuted() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let p0 = DVector::from_vec(vec![0.5, 0.5]);
        let pi = PermutationMap::new(vec![1, 0]).unwrap();
        let m_perm = pi.conjugate(&m);
        let mu = stationary_distribution(&m, &p0).unwrap();
        let mu_perm = stationary_distribution(&m_perm, &p0).unwrap();
        assert_relative_eq!(
            (mu_perm - pi.transport_vector(&mu)).amax(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn power_iteration_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (mdp, policy) = random_mdp_for_test(6, 2, 0.9, &mut rng);
            let m = induced_chain(&mdp, &policy).unwrap();
            let direct = stationary_distribution(&m, mdp.p0()).unwrap();
            let power =
                power_iteration(&m, mdp.p0(), POWER_ITERATION_CAP, POWER_ITERATION_TOL).unwrap();
            assert_relative_eq!((direct - power).amax(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn occupancy_single_state() {
        let p = DMatrix::from_row_slice(1, 1, &[1.0]);
        let mdp = TabularMdp::new(vec![p], DVector::from_vec(vec![1.0]), 0.5).unwrap();
        let policy = StochasticPolicy::uniform(1, 1);
        let occ = occupancy(&mdp, &policy).unwrap();
        assert_relative_eq!(occ.rho[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn occupancy_uniform_mixture_splits_mass() {
        // Build a 2-action MDP whose uniform mixture induces the worked
        // 2-state chain, so rho(s, a) = mu(s) / 2.
        let gamma = 0.9;
        let p0 = DVector::from_vec(vec![2.0 / 3.0, 1.0 / 3.0]);
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let chain = DMatrix::from_fn(2, 2, |i, j| (m[(i, j)] - 0.1 * p0[j]) / gamma);
        let delta = DMatrix::from_row_slice(2, 2, &[0.05, -0.05, -0.05, 0.05]);
        let p_a = &chain + &delta;
        let p_b = &chain - &delta;
        let mdp = TabularMdp::new(vec![p_a, p_b], p0, gamma).unwrap();
        let policy = StochasticPolicy::uniform(2, 2);
        assert_relative_eq!(
            (induced_chain(&mdp, &policy).unwrap() - &m).amax(),
            0.0,
            epsilon = 1e-12
        );
        let occ = occupancy(&mdp, &policy).unwrap();
        assert_relative_eq!(occ.mu[0], 2.0 / 3.0, epsilon = 1e-9);
        for s in 0..2 {
            for a in 0..2 {
                assert_relative_eq!(occ.rho[(s, a)], occ.mu[s] / 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn occupancy_reward_pairing_matches_initial_value() {
        // <rho, R> = (1 - gamma) E_{p0}[V].
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.gen_range(2..6);
            let a = rng.gen_range(1..4);
            let (mdp, policy) = random_mdp_for_test(n, a, rng.gen_range(0.2..0.95), &mut rng);
            let reward = DMatrix::from_fn(n, a, |_, _| rng.gen_range(-1.0..1.0));
            let occ = occupancy(&mdp, &policy).unwrap();
            let v = value_function(&mdp, &policy, &reward).unwrap();
            let pairing: f64 = occ.rho.iter().zip(reward.iter()).map(|(r, c)| r * c).sum();
            let initial = (1.0 - mdp.gamma()) * mdp.p0().dot(&v);
            assert_relative_eq!(pairing, initial, epsilon = 1e-8);
        }
    }

    #[test]
    fn value_function_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mdp, policy) = random_mdp_for_test(4, 2, 0.9, &mut rng);
        let zero = DMatrix::zeros(4, 2);
        let v0 = value_function(&mdp, &policy, &zero).unwrap();
        assert_relative_eq!(v0.amax(), 0.0, epsilon = 1e-12);
        let one = DMatrix::from_element(4, 2, 1.0);
        let v1 = value_function(&mdp, &policy, &one).unwrap();
        for s in 0..4 {
            assert_relative_eq!(v1[s], 10.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn value_function_matches_monte_carlo_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mdp, policy) = random_mdp_for_test(4, 2, 0.9, &mut rng);
        let reward = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let v = value_function(&mdp, &policy, &reward).unwrap();

        // Rollout oracle from state 0: truncate once gamma^t is negligible.
        let start = 0usize;
        let episodes = 100_000;
        let horizon = (f64::ln(1e-12) / f64::ln(mdp.gamma())).ceil() as usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..episodes {
            let mut s = start;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = sample_index(policy.probs().row(s).iter().copied(), &mut rng);
                ret += disc * reward[(s, a)];
                disc *= mdp.gamma();
                s = sample_index(mdp.action_dynamics(a).row(s).iter().copied(), &mut rng);
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / episodes as f64;
        let var = (sum_sq / episodes as f64 - mean * mean).max(0.0);
        let se = (var / episodes as f64).sqrt();
        assert!(
            (mean - v[start]).abs() <= 3.0 * se + 1e-9,
            "rollout mean {mean} vs solved {} (se {se})",
            v[start]
        );
    }

    fn sample_index(weights: impl Iterator<Item = f64>, rng: &mut ChaCha8Rng) -> usize {
        let w: Vec<f64> = weights.collect();
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for (i, &p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        w.len() - 1
    }

    #[test]
    fn advantage_of_policy_against_itself_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mdp, policy) = random_mdp_for_test(5, 2, 0.8, &mut rng);
        let reward = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
        let adv = advantage(&mdp, &policy, &policy, &reward).unwrap();
        assert!(adv.amax() <= 1e-10);
    }

    #[test]
    fn policy_difference_identity() {
        // E_{p0}[V1 - V2] = <mu_1, A> / (1 - gamma), both sides independent.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let na = rng.gen_range(1..4);
            let gamma = rng.gen_range(0.3..0.95);
            let (mdp, policy1) = random_mdp_for_test(n, na, gamma, &mut rng);
            let (_, policy2) = random_mdp_for_test(n, na, gamma, &mut rng);
            let reward = DMatrix::from_fn(n, na, |_, _| rng.gen_range(-1.0..1.0));
            let v1 = value_function(&mdp, &policy1, &reward).unwrap();
            let v2 = value_function(&mdp, &policy2, &reward).unwrap();
            let lhs = mdp.p0().dot(&(v1 - v2));
            let mu1 = stationary_restart(&mdp, &policy1).unwrap();
            let adv = advantage(&mdp, &policy1, &policy2, &reward).unwrap();
            let rhs = mu1.dot(&adv) / (1.0 - gamma);
            assert_relative_eq!(lhs, rhs, epsilon = 1e-8);
        }
    }

    #[test]
    fn advantage_is_bounded_for_bounded_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let gamma = rng.gen_range(0.2..0.95);
            let (mdp, policy1) = random_mdp_for_test(4, 2, gamma, &mut rng);
            let (_, policy2) = random_mdp_for_test(4, 2, gamma, &mut rng);
            let reward = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
            let adv = advantage(&mdp, &policy1, &policy2, &reward).unwrap();
            assert!(adv.amax() <= 2.0 / (1.0 - gamma) + 1e-9);
        }
    }

    #[test]
    fn imitation_loss_zero_for_transported_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (mdp, policy) = random_mdp_for_test(5, 2, 0.9, &mut rng);
        let pi = PermutationMap::random(5, &mut rng);
        let oracle = pi.transport_policy(&policy).unwrap();
        let loss = imitation_loss(&mdp, &policy, &pi, &oracle).unwrap();
        assert!(loss <= 1e-9, "oracle loss {loss}");
    }

    #[test]
    fn imitation_loss_matches_exhaustive_witness_search() {
        // sup over sign patterns c of <delta rho, c> equals the L1 norm.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 4;
        let na = 2;
        let (mdp, policy) = random_mdp_for_test(n, na, 0.8, &mut rng);
        let (_, policy_hat) = random_mdp_for_test(n, na, 0.8, &mut rng);
        let pi = PermutationMap::random(n, &mut rng);
        let loss = imitation_loss(&mdp, &policy, &pi, &policy_hat).unwrap();

        let transported = pi.transport_rows(&occupancy(&mdp, &policy).unwrap().rho);
        let target = pi.permuted_mdp(&mdp).unwrap();
        let hat = occupancy(&target, &policy_hat).unwrap().rho;
        let delta: Vec<f64> = transported
            .iter()
            .zip(hat.iter())
            .map(|(a, b)| a - b)
            .collect();
        let cells = delta.len();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << cells) {
            let mut dot = 0.0;
            for (k, d) in delta.iter().enumerate() {
                let c = if mask & (1 << k) != 0 { 1.0 } else { -1.0 };
                dot += c * d;
            }
            best = best.max(dot);
        }
        assert_relative_eq!(loss, best, epsilon = 1e-12);
    }

    #[test]
    fn permutation_matrix_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let n = rng.gen_range(1..9);
            let pi = PermutationMap::random(n, &mut rng);
            let p = pi.matrix();
            let eye = &p * p.transpose();
            assert_relative_eq!((eye - DMatrix::identity(n, n)).amax(), 0.0, epsilon = 0.0);
            assert!(pi.inverse().inverse() == pi);
        }
    }
}
