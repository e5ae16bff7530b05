//! On-disk formats: the JSON MDP file, newline-delimited trajectory replays,
//! and serializable records for chain summaries and alignment results
//! (matrices as nested arrays at full double precision).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentResult;
use crate::error::{Error, Result};
use crate::mdp::{StochasticPolicy, TabularMdp};
use crate::spectral::{ChainSummary, FriendlinessCertificate};

/// MDP file schema. `P` is indexed action-major: `p[a][s][s']`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub p0: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<Vec<Vec<f64>>>,
}

impl MdpFile {
    pub fn from_parts(mdp: &TabularMdp, policy: Option<&StochasticPolicy>) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.gamma(),
            p0: mdp.p0().iter().copied().collect(),
            p: mdp
                .dynamics()
                .iter()
                .map(|m| matrix_rows(m))
                .collect(),
            policy: policy.map(|phi| matrix_rows(phi.probs())),
        }
    }

    /// Validates and converts into domain types.
    pub fn into_parts(self) -> Result<(TabularMdp, Option<StochasticPolicy>)> {
        if self.p.len() != self.n_actions {
            return Err(Error::Validation(format!(
                "P has {} actions, header says {}",
                self.p.len(),
                self.n_actions
            )));
        }
        if self.p0.len() != self.n_states {
            return Err(Error::Validation(format!(
                "p0 has length {}, header says {}",
                self.p0.len(),
                self.n_states
            )));
        }
        let dynamics: Vec<DMatrix<f64>> = self
            .p
            .iter()
            .map(|per_action| rows_matrix(per_action, self.n_states, self.n_states))
            .collect::<Result<_>>()?;
        let mdp = TabularMdp::new(dynamics, DVector::from_vec(self.p0), self.gamma)?;
        let policy = match self.policy {
            Some(rows) => Some(StochasticPolicy::new(rows_matrix(
                &rows,
                self.n_states,
                self.n_actions,
            )?)?),
            None => None,
        };
        Ok((mdp, policy))
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Validation(format!(
            "expected a {nrows}x{ncols} nested array"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Loads and validates an MDP file.
pub fn load_mdp(path: &Path) -> Result<(TabularMdp, Option<StochasticPolicy>)> {
    let text = fs::read_to_string(path)?;
    let file: MdpFile =
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{path:?}: {e}")))?;
    file.into_parts()
}

/// Writes an MDP (and optionally a policy) as pretty-printed JSON.
pub fn save_mdp(
    path: &Path,
    mdp: &TabularMdp,
    policy: Option<&StochasticPolicy>,
) -> Result<()> {
    let file = MdpFile::from_parts(mdp, policy);
    let text =
        serde_json::to_string_pretty(&file).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes a trajectory as newline-delimited state indices.
pub fn save_trajectory(path: &Path, trajectory: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(trajectory.len() * 4);
    for &s in trajectory {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a newline-delimited trajectory.
pub fn load_trajectory(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| Error::Serde(format!("bad trajectory line {l:?}: {e}")))
        })
        .collect()
}

/// Serializable view of a [`ChainSummary`].
#[derive(Debug, Clone, Serialize)]
pub struct ChainSummaryRecord {
    pub m: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub l: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub v: Vec<Vec<f64>>,
}

impl From<&ChainSummary> for ChainSummaryRecord {
    fn from(s: &ChainSummary) -> Self {
        Self {
            m: matrix_rows(&s.m),
            mu: s.mu.iter().copied().collect(),
            l: matrix_rows(&s.l),
            u: matrix_rows(&s.svd.u),
            sigma: s.svd.sigma.iter().copied().collect(),
            v: matrix_rows(&s.svd.v),
        }
    }
}

/// Serializable view of an [`AlignmentResult`].
#[derive(Debug, Clone, Serialize)]
pub struct AlignmentResultRecord {
    pub pi_hat: Vec<usize>,
    pub matched_indices: Vec<usize>,
    pub policy_hat: Vec<Vec<f64>>,
    pub certificate: FriendlinessCertificate,
    pub samples: usize,
    pub retained: usize,
    pub threshold_gap: f64,
}

impl From<&AlignmentResult> for AlignmentResultRecord {
    fn from(r: &AlignmentResult) -> Self {
        Self {
            pi_hat: r.pi_hat.as_slice().to_vec(),
            matched_indices: r.matched_indices.clone(),
            policy_hat: matrix_rows(r.policy_hat.probs()),
            certificate: r.certificate,
            samples: r.diagnostics.samples,
            retained: r.diagnostics.retained,
            threshold_gap: r.diagnostics.threshold_gap,
        }
    }
}
