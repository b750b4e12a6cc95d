//! Comparison systems: an independent two-head network without conditioning
//! or dependence loss, and a two-stage network + HMM decoder.

mod hmm;

pub use hmm::{fit_hmm, path_log_prob, viterbi, viterbi_with_score, HmmParams, SWITCH_PROB};

use crate::datagen::{Demonstration, EncodedDemo};
use crate::error::Result;
use crate::taxonomy::{ActionId, TaskId, Taxonomy};
use crate::training::{train_on_dataset, Predictor, TrainConfig, TrainRun, WindowSet};

/// Add-one smoothing for HMM counts.
pub const HMM_SMOOTHING: f64 = 1.0;

/// Same pipeline, seeds and budget as the hierarchical model, but the action
/// head reads `X_A` alone and the dependence term is switched off.
pub fn train_independent(demos: &[Demonstration], tax: &Taxonomy, cfg: &TrainConfig) -> Result<TrainRun> {
    let mut cfg = cfg.clone();
    cfg.loss.beta = 0.0;
    train_on_dataset(demos, tax, &cfg, false)
}

/// Per-frame `(task, action)` for one normalized demonstration: actions from
/// the network's argmax, tasks from Viterbi over those hard actions.
pub fn nn_hmm_predict<D: AsRef<EncodedDemo>>(demo: &D, predictor: &Predictor<'_>, hmm: &HmmParams) -> Result<Vec<(TaskId, ActionId)>> {
    let demos = std::slice::from_ref(demo);
    let set = WindowSet::new(demos, predictor.net().arch.mask(), 1)?;
    let actions = predictor.predict(&set)?.actions;
    let tasks = viterbi(&actions, hmm)?;
    Ok(tasks.into_iter().zip(actions).collect())
}
