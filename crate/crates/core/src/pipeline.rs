//! End-to-end steps shared by the command line and the tests: evaluate a
//! trained model and its baselines on the held-out split, and record what a
//! run consumed in a manifest.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baselines::{fit_hmm, viterbi, HMM_SMOOTHING};
use crate::datagen::Demonstration;
use crate::error::{Error, Result};
use crate::eval::{evaluate, predict_demo, DemoPrediction, EvalReport, RunMeta};
use crate::taxonomy::Taxonomy;
use crate::training::{split_dataset, ModelParams, NormalizedDemo, Predictor, Split, TrainConfig};

pub const HIERARCHICAL: &str = "hierarchical";
pub const INDEPENDENT: &str = "independent";
pub const NN_HMM: &str = "nn-hmm";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of a serializable value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config serializes"))
}

/// The split a model was trained with, rebuilt from its recorded config.
pub fn split_for(params: &ModelParams, demos: &[Demonstration]) -> Result<Split> {
    split_dataset(demos, params.config.split_fractions, params.config.split_seed)
}

fn same_split(a: &TrainConfig, b: &TrainConfig) -> bool {
    a.split_fractions == b.split_fractions && a.split_seed == b.split_seed
}

fn normalized(params: &ModelParams, demos: &[Demonstration], tax: &Taxonomy) -> Result<Vec<NormalizedDemo>> {
    demos.iter().map(|d| params.normalizer.normalize(&d.encode(tax)?)).collect()
}

/// Per-frame predictions of one model on demonstrations it did not train on.
pub fn predict_all(params: &ModelParams, demos: &[Demonstration], tax: &Taxonomy, guard: bool) -> Result<Vec<DemoPrediction>> {
    let predictor = Predictor::new(&params.net);
    normalized(params, demos, tax)?
        .iter()
        .map(|d| predict_demo(&predictor, d, guard.then_some(tax)))
        .collect()
}

pub fn run_meta(params: &ModelParams, dataset_seed: Option<u64>) -> RunMeta {
    RunMeta {
        dataset_seed,
        split_seed: Some(params.config.split_seed),
        train_seed: Some(params.config.seed),
        config_hash: Some(config_hash(&params.config)),
        taxonomy_hash: Some(params.taxonomy_hash.clone()),
    }
}

/// Which comparison rows to produce next to the hierarchical model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BaselineSelection {
    pub independent: bool,
    pub nn_hmm: bool,
}

/// Reports for the hierarchical model and the selected baselines on the test
/// split. Both baselines use `independent`, the unconditioned network; the
/// HMM is fitted on the ground-truth labels of the training split.
pub fn compare_methods(
    demos: &[Demonstration],
    tax: &Taxonomy,
    hier: &ModelParams,
    independent: Option<&ModelParams>,
    select: BaselineSelection,
    dataset_seed: Option<u64>,
) -> Result<Vec<EvalReport>> {
    let split = split_for(hier, demos)?;
    if split.test.is_empty() {
        return Err(Error::Validation("the test split is empty".into()));
    }
    let mut reports = vec![evaluate(
        HIERARCHICAL,
        &predict_all(hier, &split.test, tax, false)?,
        tax,
        run_meta(hier, dataset_seed),
    )?];
    if !(select.independent || select.nn_hmm) {
        return Ok(reports);
    }
    let ind = independent.ok_or_else(|| Error::Validation("baselines need an independent model".into()))?;
    if ind.net.arch.conditioned {
        return Err(Error::Validation("the independent baseline must use the unconditioned action head".into()));
    }
    if !same_split(&hier.config, &ind.config) {
        return Err(Error::Validation("the independent model was trained on a different split".into()));
    }
    let ind_preds = predict_all(ind, &split.test, tax, false)?;
    if select.independent {
        reports.push(evaluate(INDEPENDENT, &ind_preds, tax, run_meta(ind, dataset_seed))?);
    }
    if select.nn_hmm {
        let train = split.train.iter().map(|d| d.encode(tax)).collect::<Result<Vec<_>>>()?;
        let hmm = fit_hmm(&train, tax, HMM_SMOOTHING)?;
        let decoded = ind_preds
            .into_iter()
            .map(|mut p| {
                p.pred_tasks = viterbi(&p.pred_actions, &hmm)?;
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(evaluate(NN_HMM, &decoded, tax, run_meta(ind, dataset_seed))?);
    }
    Ok(reports)
}
