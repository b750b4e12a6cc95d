use serde::{Deserialize, Serialize};

use crate::datagen::EncodedDemo;
use crate::error::{Error, Result};
use crate::taxonomy::{ActionId, TaskId, Taxonomy};

/// Probability of leaving the current task between consecutive frames.
pub const SWITCH_PROB: f64 = 1e-3;

/// Task-level HMM whose observations are action labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    /// Initial task distribution, length `m`.
    pub pi: Vec<f64>,
    /// `m × m`, row-stochastic.
    pub trans: Vec<Vec<f64>>,
    /// `m × n`, row `t` is the action distribution under task `t`.
    pub emit: Vec<Vec<f64>>,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn n_symbols(&self) -> usize {
        self.emit.first().map_or(0, Vec::len)
    }

    /// Shape, sign and row-sum checks.
    pub fn validate(&self) -> Result<()> {
        let (m, n) = (self.n_states(), self.n_symbols());
        if m == 0 || n == 0 || self.trans.len() != m || self.emit.len() != m {
            return Err(Error::shape(format!("HMM with {m} states needs {m}×{m} transitions and {m}×n emissions")));
        }
        let rows = std::iter::once(&self.pi).chain(&self.trans).chain(&self.emit);
        for (i, row) in rows.enumerate() {
            let width = if i <= m { m } else { n };
            if row.len() != width || row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("HMM distribution {i} is not a probability vector of length {width}")));
            }
        }
        Ok(())
    }
}

/// Counts-based estimate from labelled training demonstrations.
///
/// `emit[t][a] = (frames of a in task-t demos + s) / (frames in task-t demos + n·s)`,
/// `pi[t] = (task-t demos + s) / (demos + m·s)`, and a sticky transition
/// matrix with [`SWITCH_PROB`] spread over the other tasks.
pub fn fit_hmm<D: AsRef<EncodedDemo>>(train: &[D], tax: &Taxonomy, smoothing: f64) -> Result<HmmParams> {
    if train.is_empty() {
        return Err(Error::Validation("cannot fit an HMM on an empty training set".into()));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing must be a finite non-negative number, got {smoothing}")));
    }
    let (m, n) = (tax.n_tasks(), tax.n_actions());
    let mut task_counts = vec![0.0f64; m];
    let mut counts = vec![vec![0.0f64; n]; m];
    for d in train {
        let d = d.as_ref();
        task_counts[d.task.0] += 1.0;
        for a in &d.actions {
            counts[d.task.0][a.0] += 1.0;
        }
    }
    let total = train.len() as f64;
    let pi = task_counts.iter().map(|c| (c + smoothing) / (total + m as f64 * smoothing)).collect();
    let emit = counts
        .iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            let denom = sum + n as f64 * smoothing;
            if denom == 0.0 {
                vec![1.0 / n as f64; n]
            } else {
                row.iter().map(|c| (c + smoothing) / denom).collect()
            }
        })
        .collect();
    let trans = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| match (m, i == j) {
                    (1, _) => 1.0,
                    (_, true) => 1.0 - SWITCH_PROB,
                    (_, false) => SWITCH_PROB / (m - 1) as f64,
                })
                .collect()
        })
        .collect();
    let hmm = HmmParams { pi, trans, emit };
    hmm.validate()?;
    Ok(hmm)
}

/// Most probable task path and its log probability. Ties go to the lower
/// state index, both for predecessors and for the final state.
pub fn viterbi_with_score(obs: &[ActionId], hmm: &HmmParams) -> Result<(Vec<TaskId>, f64)> {
    let (m, n) = (hmm.n_states(), hmm.n_symbols());
    if let Some(bad) = obs.iter().find(|a| a.0 >= n) {
        return Err(Error::Lookup {
            kind: "observation",
            id: bad.0.to_string(),
        });
    }
    if obs.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let ln = |p: &f64| p.ln();
    let log_pi: Vec<f64> = hmm.pi.iter().map(ln).collect();
    let log_trans: Vec<Vec<f64>> = hmm.trans.iter().map(|r| r.iter().map(ln).collect()).collect();
    let log_emit: Vec<Vec<f64>> = hmm.emit.iter().map(|r| r.iter().map(ln).collect()).collect();

    let mut delta: Vec<f64> = (0..m).map(|s| log_pi[s] + log_emit[s][obs[0].0]).collect();
    let mut back = vec![0usize; obs.len() * m];
    let mut next = vec![0.0; m];
    for (t, o) in obs.iter().enumerate().skip(1) {
        for (s, slot) in next.iter_mut().enumerate() {
            let mut best = (0, delta[0] + log_trans[0][s]);
            for (p, d) in delta.iter().enumerate().skip(1) {
                let v = d + log_trans[p][s];
                if v > best.1 {
                    best = (p, v);
                }
            }
            back[t * m + s] = best.0;
            *slot = best.1 + log_emit[s][o.0];
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = 0;
    for s in 1..m {
        if delta[s] > delta[state] {
            state = s;
        }
    }
    let score = delta[state];
    let mut path = vec![TaskId(state); obs.len()];
    for t in (1..obs.len()).rev() {
        state = back[t * m + state];
        path[t - 1] = TaskId(state);
    }
    Ok((path, score))
}

pub fn viterbi(obs: &[ActionId], hmm: &HmmParams) -> Result<Vec<TaskId>> {
    Ok(viterbi_with_score(obs, hmm)?.0)
}

/// Log probability of one joint (state path, observation) sequence, summed in
/// the same order the decoder uses.
pub fn path_log_prob(path: &[TaskId], obs: &[ActionId], hmm: &HmmParams) -> f64 {
    let mut s = hmm.pi[path[0].0].ln() + hmm.emit[path[0].0][obs[0].0].ln();
    for t in 1..obs.len() {
        s = s + hmm.trans[path[t - 1].0][path[t].0].ln() + hmm.emit[path[t].0][obs[t].0].ln();
    }
    s
}
