//! Seeded trajectory generation from the permuted oracle chain and empirical
//! estimation of the chain and its stationary mass, with convergence-rate
//! diagnostics.
//!
//! Trajectories are single long walks of the restart chain (the reset
//! probability is already folded into the chain), reproducible bit-exactly
//! from an [`RngSeed`]. Reproducibility is tied to the pinned `rand_chacha`
//! version in this crate's manifest.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{induced_chain, stationary_restart, PermutationMap, StochasticPolicy, TabularMdp};

/// A (seed, stream) pair; identical pairs reproduce identical trajectories
/// bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Counter-based generator for this (seed, stream) pair.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Transition counts of an observed trajectory together with the derived
/// estimators.
///
/// With `N[(i, j)]` counting observed `i -> j` transitions over a length-`m`
/// trajectory: the stationary estimate is `mu_hat[i] = sum_j N[(i, j)] /
/// (m - 1)` and the chain estimate normalizes each visited row by its count
/// total; rows never left are filled uniformly (they carry no stationary
/// estimate, so thresholded procedures ignore them).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalChain {
    counts: Vec<Vec<u64>>,
    samples: usize,
    mu_hat: DVector<f64>,
    m_hat: DMatrix<f64>,
}

impl EmpiricalChain {
    /// Counts transitions of `trajectory` over a state space of size
    /// `n_states` and builds both estimators.
    pub fn from_trajectory(trajectory: &[usize], n_states: usize) -> Result<Self> {
        if trajectory.len() < 2 {
            return Err(Error::Validation(
                "trajectory must contain at least two states".into(),
            ));
        }
        if let Some(&bad) = trajectory.iter().find(|&&s| s >= n_states) {
            return Err(Error::Validation(format!(
                "trajectory visits state {bad}, but the chain has {n_states} states"
            )));
        }
        let mut counts = vec![vec![0u64; n_states]; n_states];
        for window in trajectory.windows(2) {
            counts[window[0]][window[1]] += 1;
        }
        Ok(Self::from_counts(counts, trajectory.len()))
    }

    fn from_counts(counts: Vec<Vec<u64>>, samples: usize) -> Self {
        let n = counts.len();
        let transitions = (samples - 1) as f64;
        let row_totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
        let mu_hat = DVector::from_fn(n, |i, _| row_totals[i] as f64 / transitions);
        let m_hat = DMatrix::from_fn(n, n, |i, j| {
            if row_totals[i] == 0 {
                1.0 / n as f64
            } else {
                counts[i][j] as f64 / row_totals[i] as f64
            }
        });
        Self {
            counts,
            samples,
            mu_hat,
            m_hat,
        }
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Trajectory length `m` the counts were built from.
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `mu_hat` with the outgoing-transition convention (divisor `m - 1`).
    pub fn stationary(&self) -> &DVector<f64> {
        &self.mu_hat
    }

    pub fn chain(&self) -> &DMatrix<f64> {
        &self.m_hat
    }

    /// Alternative stationary estimate from a trajectory's visit frequencies
    /// (divisor `m`, so the final state also counts). Differs from
    /// [`Self::stationary`] only by the last state's edge effect; kept for
    /// sensitivity checks.
    pub fn stationary_visit_convention(trajectory: &[usize], n_states: usize) -> DVector<f64> {
        let mut visits = vec![0u64; n_states];
        for &s in trajectory {
            visits[s] += 1;
        }
        DVector::from_fn(n_states, |i, _| {
            visits[i] as f64 / trajectory.len() as f64
        })
    }
}

/// Draws an index from cumulative row weights. `u` is uniform on `[0, 1)`.
fn sample_cumulative(cum: &[f64], u: f64) -> usize {
    let idx = cum.partition_point(|&c| c <= u);
    idx.min(cum.len() - 1)
}

fn cumulative_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| {
            let mut acc = 0.0;
            (0..m.ncols())
                .map(|j| {
                    acc += m[(i, j)];
                    acc
                })
                .collect()
        })
        .collect()
}

/// Samples a length-`m` realization of an explicit row-stochastic chain with
/// the first state drawn from `start`.
pub fn sample_chain_trajectory(
    chain: &DMatrix<f64>,
    start: &DVector<f64>,
    m: usize,
    seed: RngSeed,
) -> Result<Vec<usize>> {
    if m < 1 {
        return Err(Error::Validation("trajectory length must be at least 1".into()));
    }
    if chain.nrows() != chain.ncols() || start.len() != chain.nrows() {
        return Err(Error::Dimension(format!(
            "chain is {}x{}, start distribution has length {}",
            chain.nrows(),
            chain.ncols(),
            start.len()
        )));
    }
    let mut rng = seed.rng();
    let cum_rows = cumulative_rows(chain);
    let mut cum_start = Vec::with_capacity(start.len());
    let mut acc = 0.0;
    for &p in start.iter() {
        acc += p;
        cum_start.push(acc);
    }
    let mut out = Vec::with_capacity(m);
    let mut state = sample_cumulative(&cum_start, rng.gen::<f64>());
    out.push(state);
    for _ in 1..m {
        state = sample_cumulative(&cum_rows[state], rng.gen::<f64>());
        out.push(state);
    }
    Ok(out)
}

/// Samples `m` states of the target-domain oracle chain: the induced chain of
/// `(mdp, policy)` conjugated through `pi_star`, started from the transported
/// initial distribution.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    pi_star: &PermutationMap,
    m: usize,
    seed: RngSeed,
) -> Result<Vec<usize>> {
    if pi_star.size() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "permutation size {} does not match MDP with {} states",
            pi_star.size(),
            mdp.n_states()
        )));
    }
    let chain = pi_star.conjugate(&induced_chain(mdp, policy)?);
    let start = pi_star.transport_vector(mdp.p0());
    sample_chain_trajectory(&chain, &start, m, seed)
}

/// Estimator errors of an empirical target chain, measured back in source
/// coordinates: the un-permuted estimate is compared row-wise against the
/// exact chain (`max_i || row_i difference ||_2`) and entrywise-relatively
/// against the exact stationary vector, over states with stationary mass.
pub fn estimation_errors(
    m_source: &DMatrix<f64>,
    mu_source: &DVector<f64>,
    pi_star: &PermutationMap,
    empirical: &EmpiricalChain,
) -> (f64, f64) {
    let m_tilde = pi_star.unconjugate(empirical.chain());
    let mu_tilde = pi_star.inverse().transport_vector(empirical.stationary());
    let mut chain_err = 0.0f64;
    let mut mu_err = 0.0f64;
    for i in 0..m_source.nrows() {
        if mu_source[i] <= 0.0 {
            continue;
        }
        let row_err = (m_tilde.row(i) - m_source.row(i)).norm();
        chain_err = chain_err.max(row_err);
        mu_err = mu_err.max((mu_tilde[i] - mu_source[i]).abs() / mu_source[i]);
    }
    (chain_err, mu_err)
}

/// One sampled point of the convergence-rate table.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RateRow {
    pub m: usize,
    pub seed: u64,
    /// `max_i || exact row i - un-permuted estimated row i ||_2`.
    pub chain_row_err: f64,
    /// `max_i |mu_i - mu_tilde_i| / mu_i`.
    pub mu_rel_err: f64,
}

/// Convergence-rate table with per-`m` medians and fitted log-log slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct RateDiagnostics {
    pub rows: Vec<RateRow>,
    /// `(m, median chain error)` per grid point.
    pub chain_medians: Vec<(usize, f64)>,
    pub mu_medians: Vec<(usize, f64)>,
    /// Least-squares slope of `ln(median error)` against `ln m`.
    pub chain_slope: f64,
    pub mu_slope: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares slope of `ln y` regressed on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Samples trajectories over an increasing `m` grid for every seed and
/// tabulates estimator errors; seeds within a grid point run in parallel and
/// results are gathered in deterministic order.
pub fn rate_diagnostics(
    mdp: &TabularMdp,
    policy: &StochasticPolicy,
    pi_star: &PermutationMap,
    m_grid: &[usize],
    seeds: &[u64],
) -> Result<RateDiagnostics> {
    if m_grid.is_empty() || seeds.is_empty() {
        return Err(Error::Validation("m grid and seeds must be nonempty".into()));
    }
    if m_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("m grid must be strictly increasing".into()));
    }
    let m_exact = induced_chain(mdp, policy)?;
    let mu_exact = stationary_restart(mdp, policy)?;

    let mut rows = Vec::with_capacity(m_grid.len() * seeds.len());
    for (gi, &m) in m_grid.iter().enumerate() {
        let mut batch: Vec<RateRow> = seeds
            .par_iter()
            .map(|&seed| {
                let traj = sample_trajectory(
                    mdp,
                    policy,
                    pi_star,
                    m,
                    RngSeed::new(seed, gi as u64),
                )?;
                let emp = EmpiricalChain::from_trajectory(&traj, mdp.n_states())?;
                let (chain_row_err, mu_rel_err) =
                    estimation_errors(&m_exact, &mu_exact, pi_star, &emp);
                Ok(RateRow {
                    m,
                    seed,
                    chain_row_err,
                    mu_rel_err,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.append(&mut batch);
    }

    let mut chain_medians = Vec::with_capacity(m_grid.len());
    let mut mu_medians = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let mut chain_errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.m == m)
            .map(|r| r.chain_row_err)
            .collect();
        let mut mu_errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.m == m)
            .map(|r| r.mu_rel_err)
            .collect();
        chain_medians.push((m, median(&mut chain_errs)));
        mu_medians.push((m, median(&mut mu_errs)));
    }
    let chain_slope = log_log_slope(
        &chain_medians
            .iter()
            .map(|&(m, e)| (m as f64, e))
            .collect::<Vec<_>>(),
    );
    let mu_slope = log_log_slope(
        &mu_medians
            .iter()
            .map(|&(m, e)| (m as f64, e))
            .collect::<Vec<_>>(),
    );
    Ok(RateDiagnostics {
        rows,
        chain_medians,
        mu_medians,
        chain_slope,
        mu_slope,
    })
}
