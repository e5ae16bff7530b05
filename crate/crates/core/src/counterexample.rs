//! The near-symmetric bandit-like MDP family behind the online lower bound,
//! the online interaction protocol, a reference elimination agent, and the
//! sample-complexity scaling experiment.
//!
//! The source MDP has eight states laid out as two mirrored branches. From a
//! start state the two actions deterministically select a branch; each branch
//! then forks to one of two absorbing terminals with bias `alpha = 1/2 + eps`
//! on the x side and `beta = 1/2 - eps` on the y side. The two candidate
//! bijections are the identity and the full x/y swap; the only observable
//! difference between the corresponding target domains is which fork carries
//! which bias. The behavior policy always enters the x branch, so any final
//! policy splitting its first move evenly pays imitation loss close to
//! `gamma` under one of the two hypotheses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{imitation_loss, PermutationMap, StochasticPolicy, TabularMdp};
use crate::sampling::{log_log_slope, RngSeed};

pub const N_STATES: usize = 8;
pub const N_ACTIONS: usize = 2;

/// State indices of the counterexample layout.
pub const X0: usize = 0;
pub const Y0: usize = 1;
pub const X1: usize = 2;
pub const Y1: usize = 3;
pub const X2: usize = 4;
pub const X3: usize = 5;
pub const Y2: usize = 6;
pub const Y3: usize = 7;

/// Action indices ("red" and "blue").
pub const ACT_R: usize = 0;
pub const ACT_B: usize = 1;

/// Fork-bias separation and discount of one counterexample instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditMdpParams {
    epsilon: f64,
    gamma: f64,
}

impl BanditMdpParams {
    pub fn new(epsilon: f64, gamma: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::Validation(format!(
                "epsilon must be in (0, 1/2), got {epsilon}"
            )));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Validation(format!(
                "gamma must be in (0, 1), got {gamma}"
            )));
        }
        Ok(Self { epsilon, gamma })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Fork bias on the x branch.
    pub fn alpha(&self) -> f64 {
        0.5 + self.epsilon
    }

    /// Fork bias on the y branch.
    pub fn beta(&self) -> f64 {
        0.5 - self.epsilon
    }
}

/// A built counterexample: source MDP, the branch-committed behavior policy,
/// and the two candidate bijections (identity and x/y swap).
#[derive(Debug, Clone)]
pub struct CounterexampleInstance {
    pub mdp: TabularMdp,
    pub behavior: StochasticPolicy,
    pub candidates: [PermutationMap; 2],
}

/// Builds the eight-state source MDP, the behavior policy that always enters
/// the x branch, and the two candidate state bijections.
pub fn build_counterexample(params: &BanditMdpParams) -> Result<CounterexampleInstance> {
    let alpha = params.alpha();
    let mut red = DMatrix::zeros(N_STATES, N_STATES);
    let mut blue = DMatrix::zeros(N_STATES, N_STATES);

    // Start states: red and blue select opposite branches.
    red[(X0, X1)] = 1.0;
    blue[(X0, Y1)] = 1.0;
    red[(Y0, Y1)] = 1.0;
    blue[(Y0, X1)] = 1.0;

    // Fork states: both actions take the biased step.
    for m in [&mut red, &mut blue] {
        m[(X1, X2)] = alpha;
        m[(X1, X3)] = 1.0 - alpha;
        m[(Y1, Y2)] = params.beta();
        m[(Y1, Y3)] = 1.0 - params.beta();
        for terminal in [X2, X3, Y2, Y3] {
            m[(terminal, terminal)] = 1.0;
        }
    }

    let mut p0 = DVector::zeros(N_STATES);
    p0[X0] = 0.5;
    p0[Y0] = 0.5;
    let mdp = TabularMdp::new(vec![red, blue], p0, params.gamma())?;

    // Behavior: from x0 play red, from y0 play blue (always reach x1);
    // elsewhere the action is irrelevant to the dynamics, split it evenly.
    let mut behavior = DMatrix::from_element(N_STATES, N_ACTIONS, 0.5);
    behavior[(X0, ACT_R)] = 1.0;
    behavior[(X0, ACT_B)] = 0.0;
    behavior[(Y0, ACT_R)] = 0.0;
    behavior[(Y0, ACT_B)] = 1.0;
    let behavior = StochasticPolicy::new(behavior)?;

    let identity = PermutationMap::identity(N_STATES);
    let swap = PermutationMap::new(vec![Y0, X0, Y1, X1, Y2, Y3, X2, X3])?;
    Ok(CounterexampleInstance {
        mdp,
        behavior,
        candidates: [identity, swap],
    })
}

/// Lower bound on the imitation loss of a policy under the identity
/// hypothesis, from the witness that puts weight one on the x branch:
/// `gamma - gamma (phi(r | x0_hat) + phi(b | y0_hat)) / 2`.
pub fn witness_lower_bound_identity(gamma: f64, policy_hat: &StochasticPolicy) -> f64 {
    gamma - gamma * (policy_hat.prob(X0, ACT_R) + policy_hat.prob(Y0, ACT_B)) / 2.0
}

/// Same witness under the swap hypothesis, with branch roles exchanged.
pub fn witness_lower_bound_swap(gamma: f64, policy_hat: &StochasticPolicy) -> f64 {
    gamma - gamma * (policy_hat.prob(X0, ACT_B) + policy_hat.prob(Y0, ACT_R)) / 2.0
}

/// One observed interaction: a sampled environment transition or a reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub from: usize,
    /// `None` for resets.
    pub action: Option<usize>,
    pub to: usize,
    pub reset: bool,
}

/// What an agent wants to do next.
#[derive(Debug, Clone)]
pub enum AgentDecision {
    /// Play one transition of the given policy from the current state.
    Play(StochasticPolicy),
    /// Reset to the initial distribution.
    Reset,
    /// Stop interacting and finalize.
    Stop,
}

/// An online learner interacting with [`OnlineEnv`] through [`run_online`].
pub trait OnlineAgent {
    /// Decide the next interaction given the current target-domain state.
    fn choose_policy(&mut self, current_state: usize) -> AgentDecision;
    /// Observe the outcome of the last interaction.
    fn observe(&mut self, transition: &Transition);
    /// Produce the final policy. Called exactly once, after the agent stops
    /// (or is truncated by the budget).
    fn finalize(&mut self) -> StochasticPolicy;
}

/// The target domain of a counterexample instance under a hidden candidate
/// bijection. Counts every sampled transition; resets count when
/// `count_resets` is set.
#[derive(Debug, Clone)]
pub struct OnlineEnv {
    target: TabularMdp,
    hidden_candidate: usize,
    state: usize,
    transitions: u64,
    count_resets: bool,
    rng: rand_chacha::ChaCha8Rng,
}

impl OnlineEnv {
    /// Builds the target domain for `candidates[hidden_candidate]`. The
    /// initial state is drawn immediately and is not counted against the
    /// budget.
    pub fn new(
        params: &BanditMdpParams,
        hidden_candidate: usize,
        seed: RngSeed,
        count_resets: bool,
    ) -> Result<Self> {
        if hidden_candidate >= 2 {
            return Err(Error::Validation(format!(
                "hidden candidate index must be 0 or 1, got {hidden_candidate}"
            )));
        }
        let instance = build_counterexample(params)?;
        let target = instance.candidates[hidden_candidate].permuted_mdp(&instance.mdp)?;
        let mut rng = seed.rng();
        let state = sample_from(&mut rng, target.p0().iter().copied());
        Ok(Self {
            target,
            hidden_candidate,
            state,
            transitions: 0,
            count_resets,
            rng,
        })
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    pub fn transitions_used(&self) -> u64 {
        self.transitions
    }

    /// Index of the hidden candidate; for scoring after a run, not for
    /// agents.
    pub fn hidden_candidate(&self) -> usize {
        self.hidden_candidate
    }

    /// Redraws the state from the initial distribution.
    pub fn reset(&mut self) -> Transition {
        let from = self.state;
        self.state = sample_from(&mut self.rng, self.target.p0().iter().copied());
        if self.count_resets {
            self.transitions += 1;
        }
        Transition {
            from,
            action: None,
            to: self.state,
            reset: true,
        }
    }

    /// Samples an action from the policy at the current state and takes one
    /// environment step.
    pub fn step_policy(&mut self, policy: &StochasticPolicy) -> Result<Transition> {
        if policy.n_states() != N_STATES || policy.n_actions() != N_ACTIONS {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, expected {N_STATES}x{N_ACTIONS}",
                policy.n_states(),
                policy.n_actions()
            )));
        }
        let from = self.state;
        let action = sample_from(
            &mut self.rng,
            (0..N_ACTIONS).map(|a| policy.prob(from, a)),
        );
        let row = self.target.action_dynamics(action).row(from).into_owned();
        self.state = sample_from(&mut self.rng, row.iter().copied());
        self.transitions += 1;
        Ok(Transition {
            from,
            action: Some(action),
            to: self.state,
            reset: false,
        })
    }
}

fn sample_from<R: rand::Rng>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
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

/// Runs the online protocol: the agent repeatedly chooses to play a policy
/// for one transition, reset, or stop; exceeding the budget truncates the
/// run and forces finalization. Returns the final policy and the transitions
/// consumed.
pub fn run_online(
    env: &mut OnlineEnv,
    agent: &mut dyn OnlineAgent,
    budget: u64,
) -> Result<(StochasticPolicy, u64)> {
    if budget < 1 {
        return Err(Error::Validation("budget must be at least 1".into()));
    }
    loop {
        if env.transitions_used() >= budget {
            break;
        }
        match agent.choose_policy(env.current_state()) {
            AgentDecision::Stop => break,
            AgentDecision::Reset => {
                let tr = env.reset();
                agent.observe(&tr);
            }
            AgentDecision::Play(policy) => {
                let tr = env.step_policy(&policy)?;
                agent.observe(&tr);
            }
        }
    }
    Ok((agent.finalize(), env.transitions_used()))
}

/// Reference agent: navigates to the two fork states in alternation, treats
/// each fork transition as a Bernoulli observation, and sequentially tests
/// the identity hypothesis against the swap hypothesis.
///
/// With the separation known, the test is a sequential probability ratio
/// test stopped at `|llr| >= ln((1 - delta) / delta)`; otherwise it compares
/// empirical fork means with anytime Hoeffding radii.
#[derive(Debug, Clone)]
pub struct EliminationAgent {
    alpha: f64,
    beta: f64,
    epsilon_known: bool,
    delta: f64,
    behavior: StochasticPolicy,
    candidates: [PermutationMap; 2],
    /// Log-likelihood ratio: positive favors the identity hypothesis.
    llr: f64,
    x_pulls: u64,
    x_highs: u64,
    y_pulls: u64,
    y_highs: u64,
    target_y_fork: bool,
    decided: bool,
}

impl EliminationAgent {
    pub fn new(params: &BanditMdpParams, epsilon_known: bool, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::Validation(format!(
                "delta must be in (0, 1/2), got {delta}"
            )));
        }
        let instance = build_counterexample(params)?;
        Ok(Self {
            alpha: params.alpha(),
            beta: params.beta(),
            epsilon_known,
            delta,
            behavior: instance.behavior,
            candidates: instance.candidates,
            llr: 0.0,
            x_pulls: 0,
            x_highs: 0,
            y_pulls: 0,
            y_highs: 0,
            target_y_fork: false,
            decided: false,
        })
    }

    /// Index of the candidate the evidence currently favors.
    pub fn selected_candidate(&self) -> usize {
        if self.llr >= 0.0 {
            0
        } else {
            1
        }
    }

    pub fn fork_observations(&self) -> u64 {
        self.x_pulls + self.y_pulls
    }

    fn deterministic_policy(action_by_state: [usize; N_STATES]) -> StochasticPolicy {
        let mut probs = DMatrix::zeros(N_STATES, N_ACTIONS);
        for (s, &a) in action_by_state.iter().enumerate() {
            probs[(s, a)] = 1.0;
        }
        StochasticPolicy::new(probs).expect("deterministic rows are stochastic")
    }

    fn stop_condition_met(&self) -> bool {
        if self.epsilon_known {
            self.llr.abs() >= ((1.0 - self.delta) / self.delta).ln()
        } else {
            if self.x_pulls == 0 || self.y_pulls == 0 {
                return false;
            }
            let radius = |n: u64| -> f64 {
                let n = n as f64;
                ((4.0 * n * (n + 1.0) / self.delta).ln() / (2.0 * n)).sqrt()
            };
            let px = self.x_highs as f64 / self.x_pulls as f64;
            let py = self.y_highs as f64 / self.y_pulls as f64;
            (px - py).abs() > radius(self.x_pulls) + radius(self.y_pulls)
        }
    }
}

impl OnlineAgent for EliminationAgent {
    fn choose_policy(&mut self, current_state: usize) -> AgentDecision {
        if self.decided {
            return AgentDecision::Stop;
        }
        match current_state {
            // Under either hypothesis these first moves are deterministic in
            // the observable target indices, so the agent can steer to the
            // fork it wants to sample.
            X0 | Y0 => {
                let to_x_fork = [ACT_R, ACT_B, 0, 0, 0, 0, 0, 0];
                let to_y_fork = [ACT_B, ACT_R, 0, 0, 0, 0, 0, 0];
                let plan = if self.target_y_fork { to_y_fork } else { to_x_fork };
                AgentDecision::Play(Self::deterministic_policy(plan))
            }
            X1 | Y1 => AgentDecision::Play(StochasticPolicy::uniform(N_STATES, N_ACTIONS)),
            _ => AgentDecision::Reset,
        }
    }

    fn observe(&mut self, transition: &Transition) {
        if transition.reset {
            return;
        }
        match transition.from {
            X1 => {
                self.x_pulls += 1;
                let high = transition.to == X2;
                if high {
                    self.x_highs += 1;
                }
                if self.epsilon_known {
                    self.llr += if high {
                        (self.alpha / self.beta).ln()
                    } else {
                        ((1.0 - self.alpha) / (1.0 - self.beta)).ln()
                    };
                }
                self.target_y_fork = true;
            }
            Y1 => {
                self.y_pulls += 1;
                let high = transition.to == Y2;
                if high {
                    self.y_highs += 1;
                }
                if self.epsilon_known {
                    self.llr += if high {
                        (self.beta / self.alpha).ln()
                    } else {
                        ((1.0 - self.beta) / (1.0 - self.alpha)).ln()
                    };
                }
                self.target_y_fork = false;
            }
            _ => return,
        }
        if !self.epsilon_known {
            // Mean comparison drives the decision; keep the llr sign in sync.
            let px = self.x_highs as f64 / self.x_pulls.max(1) as f64;
            let py = self.y_highs as f64 / self.y_pulls.max(1) as f64;
            self.llr = px - py;
        }
        if self.stop_condition_met() {
            self.decided = true;
        }
    }

    fn finalize(&mut self) -> StochasticPolicy {
        let pi = &self.candidates[self.selected_candidate()];
        pi.transport_policy(&self.behavior)
            .expect("candidate bijections match the behavior policy")
    }
}

/// One run of the scaling experiment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LowerBoundRow {
    pub epsilon: f64,
    pub seed: u64,
    /// Transitions consumed before the agent stopped.
    pub t_used: u64,
    pub final_loss: f64,
    /// 1-based hypothesis labels.
    pub selected_hypothesis: usize,
    pub true_hypothesis: usize,
}

/// Scaling experiment results across a separation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundTable {
    pub rows: Vec<LowerBoundRow>,
    /// `(epsilon, median T, success rate)` per grid point, where success is
    /// final loss below `gamma / 4`.
    pub medians: Vec<(f64, f64, f64)>,
    /// Least-squares slope of `ln(median T)` against `ln(epsilon)`.
    pub slope: f64,
}

/// Runs the elimination agent across a grid of separations; for each
/// `(epsilon, seed)` cell the hidden hypothesis is drawn from the seed, the
/// agent runs to its stopping rule (or `budget`), and the final policy is
/// scored with the exact imitation loss against the true bijection. Cells run
/// in parallel; results are gathered in grid-then-seed order.
pub fn lower_bound_experiment(
    eps_grid: &[f64],
    gamma: f64,
    delta: f64,
    seeds: &[u64],
    count_resets: bool,
    budget: u64,
) -> Result<LowerBoundTable> {
    if eps_grid.is_empty() || seeds.is_empty() {
        return Err(Error::Validation("epsilon grid and seeds must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(eps_grid.len() * seeds.len());
    for &epsilon in eps_grid {
        let params = BanditMdpParams::new(epsilon, gamma)?;
        let instance = build_counterexample(&params)?;
        let mut batch: Vec<LowerBoundRow> = seeds
            .par_iter()
            .map(|&seed| {
                let mut coin = RngSeed::new(seed, 0).rng();
                let truth = usize::from(rand::Rng::gen::<f64>(&mut coin) < 0.5);
                let mut env = OnlineEnv::new(&params, truth, RngSeed::new(seed, 1), count_resets)?;
                let mut agent = EliminationAgent::new(&params, true, delta)?;
                let (policy_hat, t_used) = run_online(&mut env, &mut agent, budget)?;
                let final_loss = imitation_loss(
                    &instance.mdp,
                    &instance.behavior,
                    &instance.candidates[truth],
                    &policy_hat,
                )?;
                Ok(LowerBoundRow {
                    epsilon,
                    seed,
                    t_used,
                    final_loss,
                    selected_hypothesis: agent.selected_candidate() + 1,
                    true_hypothesis: truth + 1,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.append(&mut batch);
    }

    let mut medians = Vec::with_capacity(eps_grid.len());
    for &epsilon in eps_grid {
        let cell: Vec<&LowerBoundRow> = rows.iter().filter(|r| r.epsilon == epsilon).collect();
        let mut ts: Vec<f64> = cell.iter().map(|r| r.t_used as f64).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if ts.len() % 2 == 1 {
            ts[ts.len() / 2]
        } else {
            0.5 * (ts[ts.len() / 2 - 1] + ts[ts.len() / 2])
        };
        let successes = cell
            .iter()
            .filter(|r| r.final_loss < gamma / 4.0)
            .count();
        medians.push((epsilon, median, successes as f64 / cell.len() as f64));
    }
    let slope = log_log_slope(
        &medians
            .iter()
            .map(|&(eps, t, _)| (eps, t))
            .collect::<Vec<_>>(),
    );
    Ok(LowerBoundTable {
        rows,
        medians,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> BanditMdpParams {
        BanditMdpParams::new(0.1, 0.9).unwrap()
    }

    #[test]
    fn structure_matches_the_layout() {
        let inst = build_counterexample(&params()).unwrap();
        let red = inst.mdp.action_dynamics(ACT_R);
        let blue = inst.mdp.action_dynamics(ACT_B);
        assert_relative_eq!(red[(X0, X1)], 1.0, epsilon = 0.0);
        assert_relative_eq!(blue[(X0, Y1)], 1.0, epsilon = 0.0);
        assert_relative_eq!(blue[(Y0, X1)], 1.0, epsilon = 0.0);
        assert_relative_eq!(red[(Y0, Y1)], 1.0, epsilon = 0.0);
        for m in [red, blue] {
            assert_relative_eq!(m[(X1, X2)], 0.6, epsilon = 1e-15);
            assert_relative_eq!(m[(X1, X3)], 0.4, epsilon = 1e-15);
            assert_relative_eq!(m[(Y1, Y2)], 0.4, epsilon = 1e-15);
            assert_relative_eq!(m[(Y1, Y3)], 0.6, epsilon = 1e-15);
            for t in [X2, X3, Y2, Y3] {
                assert_relative_eq!(m[(t, t)], 1.0, epsilon = 0.0);
            }
        }
    }

    #[test]
    fn zero_separation_makes_the_hypotheses_identical() {
        // epsilon = 0 is outside the valid domain, so approach it.
        let p = BanditMdpParams::new(1e-12, 0.9).unwrap();
        let inst = build_counterexample(&p).unwrap();
        let t1 = inst.candidates[0].permuted_mdp(&inst.mdp).unwrap();
        let t2 = inst.candidates[1].permuted_mdp(&inst.mdp).unwrap();
        for a in 0..N_ACTIONS {
            let diff = (t1.action_dynamics(a) - t2.action_dynamics(a)).amax();
            assert!(diff <= 2e-12, "action {a} differs by {diff}");
        }
        assert!(matches!(
            BanditMdpParams::new(0.0, 0.9),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn witness_bounds_the_true_loss_under_both_hypotheses() {
        let inst = build_counterexample(&params()).unwrap();
        let gamma = inst.mdp.gamma();
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        for _ in 0..1000 {
            let probs = DMatrix::from_fn(N_STATES, N_ACTIONS, |_, _| rng.gen::<f64>());
            let probs = DMatrix::from_fn(N_STATES, N_ACTIONS, |s, a| {
                probs[(s, a)] / (probs[(s, 0)] + probs[(s, 1)])
            });
            let policy_hat = StochasticPolicy::new(probs).unwrap();
            let loss_id = imitation_loss(
                &inst.mdp,
                &inst.behavior,
                &inst.candidates[0],
                &policy_hat,
            )
            .unwrap();
            assert!(
                loss_id >= witness_lower_bound_identity(gamma, &policy_hat) - 1e-9,
                "identity witness violated"
            );
            let loss_swap = imitation_loss(
                &inst.mdp,
                &inst.behavior,
                &inst.candidates[1],
                &policy_hat,
            )
            .unwrap();
            assert!(
                loss_swap >= witness_lower_bound_swap(gamma, &policy_hat) - 1e-9,
                "swap witness violated"
            );
        }
    }

    #[test]
    fn uniform_policy_pays_half_gamma_under_either_hypothesis() {
        let inst = build_counterexample(&params()).unwrap();
        let gamma = inst.mdp.gamma();
        let uniform = StochasticPolicy::uniform(N_STATES, N_ACTIONS);
        for candidate in &inst.candidates {
            let loss =
                imitation_loss(&inst.mdp, &inst.behavior, candidate, &uniform).unwrap();
            assert!(loss >= gamma / 2.0 - 1e-9, "loss {loss}");
        }
    }

    #[test]
    fn no_policy_wins_under_both_hypotheses() {
        // Coarse grid over the two decisive action probabilities; the finer
        // grid runs in the acceptance suite.
        let p = BanditMdpParams::new(0.05, 0.9).unwrap();
        let inst = build_counterexample(&p).unwrap();
        let gamma = inst.mdp.gamma();
        let steps = 21;
        for i in 0..steps {
            for j in 0..steps {
                let u = i as f64 / (steps - 1) as f64;
                let v = j as f64 / (steps - 1) as f64;
                let mut probs = DMatrix::from_element(N_STATES, N_ACTIONS, 0.5);
                probs[(X0, ACT_R)] = u;
                probs[(X0, ACT_B)] = 1.0 - u;
                probs[(Y0, ACT_B)] = v;
                probs[(Y0, ACT_R)] = 1.0 - v;
                let policy_hat = StochasticPolicy::new(probs).unwrap();
                let l1 = imitation_loss(&inst.mdp, &inst.behavior, &inst.candidates[0], &policy_hat)
                    .unwrap();
                let l2 = imitation_loss(&inst.mdp, &inst.behavior, &inst.candidates[1], &policy_hat)
                    .unwrap();
                assert!(
                    l1.max(l2) >= gamma / 4.0,
                    "policy (u={u}, v={v}) beat gamma/4 under both"
                );
            }
        }
    }

    #[test]
    fn oracle_told_the_truth_has_zero_loss() {
        let inst = build_counterexample(&params()).unwrap();
        for candidate in &inst.candidates {
            let oracle = candidate.transport_policy(&inst.behavior).unwrap();
            let loss = imitation_loss(&inst.mdp, &inst.behavior, candidate, &oracle).unwrap();
            assert!(loss <= 1e-9);
        }
    }

    #[test]
    fn elimination_agent_identifies_the_hypothesis() {
        let p = params();
        let inst = build_counterexample(&p).unwrap();
        let mut successes = 0;
        let n_seeds = 200;
        for seed in 0..n_seeds {
            let truth = (seed % 2) as usize;
            let mut env = OnlineEnv::new(&p, truth, RngSeed::new(seed, 9), true).unwrap();
            let mut agent = EliminationAgent::new(&p, true, 0.05).unwrap();
            let (policy_hat, _) = run_online(&mut env, &mut agent, 10_000_000).unwrap();
            let loss = imitation_loss(
                &inst.mdp,
                &inst.behavior,
                &inst.candidates[truth],
                &policy_hat,
            )
            .unwrap();
            if loss < p.gamma() / 4.0 {
                successes += 1;
            }
        }
        assert!(
            successes >= 190,
            "agent succeeded on {successes}/{n_seeds} seeds"
        );
    }

    #[test]
    fn unknown_separation_agent_still_works() {
        let p = params();
        let inst = build_counterexample(&p).unwrap();
        let mut successes = 0;
        let n_seeds = 50;
        for seed in 0..n_seeds {
            let truth = (seed % 2) as usize;
            let mut env = OnlineEnv::new(&p, truth, RngSeed::new(seed, 10), true).unwrap();
            let mut agent = EliminationAgent::new(&p, false, 0.05).unwrap();
            let (policy_hat, _) = run_online(&mut env, &mut agent, 10_000_000).unwrap();
            let loss = imitation_loss(
                &inst.mdp,
                &inst.behavior,
                &inst.candidates[truth],
                &policy_hat,
            )
            .unwrap();
            if loss < p.gamma() / 4.0 {
                successes += 1;
            }
        }
        assert!(
            successes >= 45,
            "agent succeeded on {successes}/{n_seeds} seeds"
        );
    }

    #[test]
    fn larger_separation_needs_fewer_samples() {
        let mut medians = Vec::new();
        for &eps in &[0.05, 0.25] {
            let p = BanditMdpParams::new(eps, 0.9).unwrap();
            let mut ts = Vec::new();
            for seed in 0..30u64 {
                let truth = (seed % 2) as usize;
                let mut env = OnlineEnv::new(&p, truth, RngSeed::new(seed, 11), true).unwrap();
                let mut agent = EliminationAgent::new(&p, true, 0.05).unwrap();
                let (_, t) = run_online(&mut env, &mut agent, 10_000_000).unwrap();
                ts.push(t);
            }
            ts.sort_unstable();
            medians.push(ts[ts.len() / 2]);
        }
        assert!(
            medians[1] < medians[0],
            "median T did not decrease: {medians:?}"
        );
    }

    #[test]
    fn replay_is_deterministic() {
        let p = params();
        let run = |seed: u64| {
            let mut env = OnlineEnv::new(&p, 1, RngSeed::new(seed, 12), true).unwrap();
            let mut agent = EliminationAgent::new(&p, true, 0.05).unwrap();
            let (_, t) = run_online(&mut env, &mut agent, 10_000_000).unwrap();
            (t, agent.selected_candidate())
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn budget_truncation_forces_finalize() {
        let p = params();
        let mut env = OnlineEnv::new(&p, 0, RngSeed::new(5, 13), true).unwrap();
        let mut agent = EliminationAgent::new(&p, true, 0.05).unwrap();
        let (policy, t) = run_online(&mut env, &mut agent, 4).unwrap();
        assert!(t <= 5, "used {t} transitions on a budget of 4");
        // The policy is still a valid transported candidate.
        assert_eq!(policy.n_states(), N_STATES);
    }

    #[test]
    fn scaling_experiment_slope_is_near_inverse_square() {
        let seeds: Vec<u64> = (0..60).collect();
        let table = lower_bound_experiment(
            &[0.04, 0.08, 0.16],
            0.9,
            0.05,
            &seeds,
            true,
            10_000_000,
        )
        .unwrap();
        assert!(
            table.slope >= -2.5 && table.slope <= -1.5,
            "slope {}",
            table.slope
        );
        for &(eps, _, success) in &table.medians {
            assert!(success >= 0.9, "success rate {success} at eps {eps}");
        }
        // Successful runs satisfy the success criterion by construction.
        for row in &table.rows {
            if row.selected_hypothesis == row.true_hypothesis {
                assert!(row.final_loss < 0.9 / 4.0);
            }
        }
    }
}
