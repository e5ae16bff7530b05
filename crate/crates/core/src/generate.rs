//! Random instance generation for experiments: dense Dirichlet-style MDPs
//! whose induced chains certify as friendly, with a bounded retry loop.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{induced_chain, stationary_restart, StochasticPolicy, TabularMdp};
use crate::sampling::RngSeed;
use crate::spectral::{friendliness, rescale};

/// What kind of instance to generate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Retry random MDPs until the induced chain's rescaled matrix passes the
    /// friendliness certificate.
    RandomFriendlyChain,
    /// A single random MDP, no certification.
    RandomMdp,
    /// The eight-state lower-bound instance (`epsilon` must be set).
    Counterexample,
}

/// Parameters of the instance generator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// Attempts before giving up on certification.
    pub retry_cap: usize,
    /// Certificate tolerances the generated instance must clear.
    pub tol_alpha: f64,
    pub tol_beta: f64,
    /// Fork separation, only for [`GeneratorKind::Counterexample`].
    pub epsilon: Option<f64>,
}

impl GeneratorSpec {
    pub fn random_friendly(n_states: usize, n_actions: usize, gamma: f64) -> Self {
        Self {
            kind: GeneratorKind::RandomFriendlyChain,
            n_states,
            n_actions,
            gamma,
            retry_cap: 50,
            tol_alpha: 1e-6,
            tol_beta: 1e-6,
            epsilon: None,
        }
    }
}

/// A generated MDP/policy pair with the friendliness margins it achieved.
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub mdp: TabularMdp,
    pub policy: StochasticPolicy,
    pub alpha: f64,
    pub beta: f64,
    pub attempts: usize,
}

/// A positive probability row sampled uniformly from the simplex
/// (normalized unit exponentials).
fn simplex_row<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.gen::<f64>();
            -(1.0 - u).ln()
        })
        .collect();
    let total: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= total;
    }
    row
}

/// A dense random MDP (simplex-sampled dynamics rows, initial distribution,
/// and policy). The dense initial distribution makes every induced restart
/// chain ergodic.
pub fn random_mdp<R: Rng>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<(TabularMdp, StochasticPolicy)> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::Validation(
            "generator needs at least one state and one action".into(),
        ));
    }
    let dynamics: Vec<DMatrix<f64>> = (0..n_actions)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..n_states).map(|_| simplex_row(n_states, rng)).collect();
            DMatrix::from_fn(n_states, n_states, |i, j| rows[i][j])
        })
        .collect();
    let p0 = DVector::from_vec(simplex_row(n_states, rng));
    let mdp = TabularMdp::new(dynamics, p0, gamma)?;
    let policy_rows: Vec<Vec<f64>> = (0..n_states).map(|_| simplex_row(n_actions, rng)).collect();
    let policy = StochasticPolicy::new(DMatrix::from_fn(n_states, n_actions, |i, j| {
        policy_rows[i][j]
    }))?;
    Ok((mdp, policy))
}

/// Generates an MDP/policy pair whose induced chain's rescaled matrix passes
/// the friendliness certificate at the spec's tolerances, retrying up to
/// `retry_cap` times. On failure reports the best margins seen.
pub fn generate_random_friendly(spec: &GeneratorSpec, seed: u64) -> Result<GeneratedInstance> {
    if spec.retry_cap == 0 {
        return Err(Error::Validation("retry cap must be at least 1".into()));
    }
    let mut rng = RngSeed::new(seed, 0).rng();
    let mut best_alpha = f64::NEG_INFINITY;
    let mut best_beta = f64::NEG_INFINITY;
    for attempt in 1..=spec.retry_cap {
        let (mdp, policy) = random_mdp(spec.n_states, spec.n_actions, spec.gamma, &mut rng)?;
        let m = induced_chain(&mdp, &policy)?;
        let mu = stationary_restart(&mdp, &policy)?;
        let summary = rescale(&m, &mu)?;
        let cert = friendliness(&summary, spec.tol_alpha, spec.tol_beta);
        if cert.is_friendly {
            return Ok(GeneratedInstance {
                mdp,
                policy,
                alpha: cert.alpha,
                beta: cert.beta,
                attempts: attempt,
            });
        }
        if cert.alpha.min(cert.beta) > best_alpha.min(best_beta) {
            best_alpha = cert.alpha;
            best_beta = cert.beta;
        }
    }
    Err(Error::Generation {
        attempts: spec.retry_cap,
        best_alpha,
        best_beta,
    })
}

/// Deterministically finds a friendly instance whose stationary distribution
/// admits a threshold clipping exactly one state with margin at least
/// `min_gap` on both sides. Returns the instance and the threshold.
///
/// Scans generator seeds in order, so the result is reproducible.
pub fn friendly_instance_with_clipped_state(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    min_gap: f64,
) -> (GeneratedInstance, f64) {
    let spec = GeneratorSpec::random_friendly(n_states, n_actions, gamma);
    for seed in 0..10_000u64 {
        let Ok(inst) = generate_random_friendly(&spec, seed) else {
            continue;
        };
        let mu = stationary_restart(&inst.mdp, &inst.policy).expect("generated instance is valid");
        let mut sorted: Vec<f64> = mu.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let t = 0.5 * (sorted[0] + sorted[1]);
        if t - sorted[0] >= min_gap && sorted[1] - t >= min_gap {
            return (inst, t);
        }
    }
    panic!("no instance with a clean clipping threshold in 10000 seeds");
}
