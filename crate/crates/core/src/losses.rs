//! Training signal: class-weighted entropy loss, hierarchy indicators,
//! dependence loss and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{argmax, Real};
use crate::model::BatchOutput;
use crate::taxonomy::{ActionId, TaskId, Taxonomy};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Source of the dependence-loss magnitude `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlossMode {
    /// `p = ploss_value`.
    Constant,
    /// `p` is the sample's own entropy loss.
    LinkedToError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DlossMode {
    /// `-(p)^(D·I_A) · (p)^(D·I_T)`, exactly as written.
    Verbatim,
    /// `p · (1 - D)`: charge `p` whenever the predicted action falls outside
    /// the true task's admissible set.
    Penalty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub ploss_mode: PlossMode,
    pub ploss_value: f64,
    pub dloss_mode: DlossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.8,
            beta: 0.2,
            ploss_mode: PlossMode::LinkedToError,
            ploss_value: 1.0,
            dloss_mode: DlossMode::Penalty,
        }
    }
}

impl LossConfig {
    /// `alpha ∈ (0, 1)`, `beta ∈ [0, 1)`; `beta = 0` switches the dependence term off.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.ploss_mode == PlossMode::Constant && !(self.ploss_value > 0.0 && self.ploss_value.is_finite()) {
            return Err(Error::Config(format!("constant ploss must be positive, got {}", self.ploss_value)));
        }
        Ok(())
    }
}

/// Per-class loss weights for both hierarchy levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub task: Vec<f64>,
    pub action: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(n_tasks: usize, n_actions: usize) -> Self {
        ClassWeights {
            task: vec![1.0; n_tasks],
            action: vec![1.0; n_actions],
        }
    }
}

/// `w_i = N / (K · count_i)` where `K` counts the classes that occur, and 0
/// for classes that never occur. `K = n_classes` whenever every class is
/// present; using `K` keeps `Σ w_i · count_i = N` for any label list.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::Validation("cannot weight classes of an empty label list".into()));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        *counts.get_mut(l).ok_or_else(|| {
            Error::Validation(format!("label {l} out of range for {n_classes} classes"))
        })? += 1;
    }
    let total = labels.len() as f64;
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    Ok(counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { total / (present * c as f64) })
        .collect())
}

/// Class-weighted cross entropy of both levels for one sample.
pub fn entropy_loss<R: Real>(
    task_probs: &[R],
    action_probs: &[R],
    true_task: TaskId,
    true_action: ActionId,
    weights: &ClassWeights,
) -> R {
    let floor = R::of(PROB_FLOOR);
    let nll = |p: R| -(p.max(floor)).ln();
    R::of(weights.task[true_task.0]) * nll(task_probs[true_task.0])
        + R::of(weights.action[true_action.0]) * nll(action_probs[true_action.0])
}

/// `D`, `I_T`, `I_A` for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyIndicators {
    /// Predicted action lies in the ground-truth task's admissible set.
    pub d: bool,
    pub i_t: bool,
    pub i_a: bool,
}

pub fn indicators(
    pred_task: TaskId,
    pred_action: ActionId,
    true_task: TaskId,
    true_action: ActionId,
    tax: &Taxonomy,
) -> Result<HierarchyIndicators> {
    // validates the predicted ids as well
    tax.is_consistent(pred_task, pred_action)?;
    Ok(HierarchyIndicators {
        d: tax.is_consistent(true_task, pred_action)?,
        i_t: pred_task == true_task,
        i_a: pred_action == true_action,
    })
}

/// Dependence-loss value and its derivative with respect to the sample's
/// entropy loss (non-zero only when `p` is linked to it).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DependenceTerm<R> {
    pub value: R,
    pub d_eloss: R,
}

pub fn dependence_term<R: Real>(ind: HierarchyIndicators, cfg: &LossConfig, sample_eloss: R) -> Result<DependenceTerm<R>> {
    let (p, linked) = match cfg.ploss_mode {
        PlossMode::Constant => {
            if !(cfg.ploss_value > 0.0) {
                return Err(Error::Config(format!("constant ploss must be positive, got {}", cfg.ploss_value)));
            }
            (R::of(cfg.ploss_value), false)
        }
        PlossMode::LinkedToError => (sample_eloss, true),
    };
    let d = u8::from(ind.d);
    Ok(match cfg.dloss_mode {
        DlossMode::Verbatim => {
            let k = (d * u8::from(ind.i_a) + d * u8::from(ind.i_t)) as i32;
            DependenceTerm {
                value: -p.powi(k),
                d_eloss: if linked && k > 0 { -R::of(k as f64) * p.powi(k - 1) } else { R::zero() },
            }
        }
        DlossMode::Penalty => {
            let miss = R::of((1 - d) as f64);
            DependenceTerm {
                value: p * miss,
                d_eloss: if linked { miss } else { R::zero() },
            }
        }
    })
}

pub fn dependence_loss<R: Real>(ind: HierarchyIndicators, cfg: &LossConfig, sample_eloss: R) -> Result<R> {
    Ok(dependence_term(ind, cfg, sample_eloss)?.value)
}

pub fn total_loss(eloss: f64, dloss: f64, cfg: &LossConfig) -> f64 {
    cfg.alpha * eloss + cfg.beta * dloss
}

/// Batch-mean objective and its gradients with respect to both sets of logits.
#[derive(Clone, Debug)]
pub struct BatchLoss<R> {
    pub loss: R,
    pub eloss: R,
    pub dloss: R,
    /// Samples whose predicted action violates the true task's admissible set.
    pub violations: usize,
    pub d_task_logits: Vec<R>,
    pub d_action_logits: Vec<R>,
}

pub fn batch_loss<R: Real>(
    out: &BatchOutput<R>,
    tasks: &[TaskId],
    actions: &[ActionId],
    weights: &ClassWeights,
    cfg: &LossConfig,
    tax: &Taxonomy,
) -> Result<BatchLoss<R>> {
    let b = out.batch;
    if tasks.len() != b || actions.len() != b {
        return Err(Error::shape(format!("{b} outputs but {} / {} labels", tasks.len(), actions.len())));
    }
    let (m, n) = (out.n_tasks, out.n_actions);
    let scale = R::one() / R::of(b as f64);
    let floor = R::of(PROB_FLOOR);
    let (alpha, beta) = (R::of(cfg.alpha), R::of(cfg.beta));

    let mut res = BatchLoss {
        loss: R::zero(),
        eloss: R::zero(),
        dloss: R::zero(),
        violations: 0,
        d_task_logits: vec![R::zero(); b * m],
        d_action_logits: vec![R::zero(); b * n],
    };
    for i in 0..b {
        let (tp, ap) = (out.task_row(i), out.action_row(i));
        let (t, a) = (tasks[i], actions[i]);
        let e = entropy_loss(tp, ap, t, a, weights);
        let ind = indicators(TaskId(argmax(tp)), ActionId(argmax(ap)), t, a, tax)?;
        let dep = dependence_term(ind, cfg, e)?;
        res.violations += usize::from(!ind.d);
        res.eloss += e * scale;
        res.dloss += dep.value * scale;
        res.loss += (alpha * e + beta * dep.value) * scale;

        // d loss / d e, then softmax-cross-entropy gradient per level
        let s = (alpha + beta * dep.d_eloss) * scale;
        for (probs, label, w, grad) in [
            (tp, t.0, weights.task[t.0], &mut res.d_task_logits[i * m..(i + 1) * m]),
            (ap, a.0, weights.action[a.0], &mut res.d_action_logits[i * n..(i + 1) * n]),
        ] {
            if probs[label] < floor || w == 0.0 {
                continue;
            }
            let k = s * R::of(w);
            for (j, (g, p)) in grad.iter_mut().zip(probs).enumerate() {
                *g = k * (*p - if j == label { R::one() } else { R::zero() });
            }
        }
    }
    Ok(res)
}
