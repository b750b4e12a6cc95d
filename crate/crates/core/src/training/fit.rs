use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::normalize::{fit_normalizer, NormalizedDemo, Normalizer};
use super::optim::Adam;
use super::split::{split_dataset, Split};
use super::windows::WindowSet;
use crate::datagen::{Demonstration, EncodedDemo};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, class_weights, ClassWeights};
use crate::model::{LayerState, Network};
use crate::taxonomy::{ActionId, TaskId, Taxonomy};

/// Rows per forward call when only predictions are needed.
pub const INFERENCE_BATCH: usize = 256;

/// A trained network together with what is needed to feed it raw frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub net: Network<f32>,
    pub normalizer: Normalizer,
    pub taxonomy_hash: String,
    pub config: TrainConfig,
}

/// One epoch of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_eloss: f64,
    pub train_dloss: f64,
    /// Training windows whose predicted action left the true task's set.
    pub violations: usize,
    pub mean_grad_norm: f64,
    pub val_task_accuracy: Option<f64>,
    pub val_action_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
}

/// Hard predictions for a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub tasks: Vec<TaskId>,
    pub actions: Vec<ActionId>,
}

/// Forward passes that reuse the masked-prefix state across calls.
pub struct Predictor<'a> {
    net: &'a Network<f32>,
    prefix: Option<Vec<LayerState<f32>>>,
}

impl<'a> Predictor<'a> {
    pub fn new(net: &'a Network<f32>) -> Self {
        Predictor {
            prefix: net.masked_prefix(&net.arch.mask()),
            net,
        }
    }

    pub fn net(&self) -> &'a Network<f32> {
        self.net
    }

    pub fn forward(&self, windows: &[f32], batch: usize) -> Result<crate::model::BatchOutput<f32>> {
        self.net.forward_batch_with_prefix(windows, batch, self.prefix.as_deref())
    }

    /// Argmax task and action for every window of `set`, in index order.
    pub fn predict<D: AsRef<EncodedDemo>>(&self, set: &WindowSet<'_, D>) -> Result<Predictions> {
        let mut out = Predictions {
            tasks: Vec::with_capacity(set.len()),
            actions: Vec::with_capacity(set.len()),
        };
        let rows: Vec<usize> = (0..set.len()).collect();
        for chunk in rows.chunks(INFERENCE_BATCH) {
            let batch = set.batch(chunk);
            let res = self.forward(&batch.inputs, chunk.len())?;
            for i in 0..chunk.len() {
                out.tasks.push(TaskId(res.predicted_task(i)));
                out.actions.push(ActionId(res.predicted_action(i)));
            }
        }
        Ok(out)
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Minibatch optimization of `net` on the training windows. Returns the
/// weights with the best validation action accuracy (the last epoch's when
/// there is no validation set).
pub fn train(
    mut net: Network<f32>,
    train_set: &WindowSet<'_, NormalizedDemo>,
    val_set: &WindowSet<'_, NormalizedDemo>,
    weights: &ClassWeights,
    cfg: &TrainConfig,
    tax: &Taxonomy,
) -> Result<(Network<f32>, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("no training windows".into()));
    }
    if train_set.mask() != &net.arch.mask() {
        return Err(Error::Config("training windows do not match the network's window and mask".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let clip = cfg.grad_clip.map(|c| c as f32);
    let mut opt = Adam::new(&net, cfg.learning_rate as f32, clip);
    let mut grads = Network::<f32>::zeros(net.arch.clone());
    let val_tasks = val_set.task_labels();
    let val_actions = val_set.action_labels();

    let mut history = History::default();
    let mut best: Option<(f64, Network<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(cfg.windows_per_epoch.unwrap_or(usize::MAX));

        let (mut loss, mut eloss, mut dloss, mut norm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let mut violations = 0;
        let n_batches = order.len().div_ceil(cfg.batch_size);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.batch(rows);
            let (out, trace) = net.forward_train(&batch.inputs, rows.len()).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            let bl = batch_loss(&out, &batch.task_labels, &batch.action_labels, weights, &cfg.loss, tax)?;
            if !bl.loss.is_finite() {
                let (d, t) = batch.source[0];
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b} (first window: demo `{}`, frame {t})",
                    train_set.demos()[d].demo_id
                )));
            }
            let frac = rows.len() as f64 / order.len() as f64;
            loss += bl.loss as f64 * frac;
            eloss += bl.eloss as f64 * frac;
            dloss += bl.dloss as f64 * frac;
            violations += bl.violations;

            for g in grads.tensors_mut() {
                g.fill(0.0);
            }
            net.backward(&out, &trace, &bl.d_task_logits, &bl.d_action_logits, &mut grads);
            norm += opt.step(&mut net, &grads) as f64 / n_batches as f64;
        }
        if !net.is_finite() {
            return Err(Error::Numeric(format!("weights became non-finite during epoch {epoch}")));
        }

        let (val_task_accuracy, val_action_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let p = Predictor::new(&net).predict(val_set)?;
            let tasks: Vec<usize> = p.tasks.iter().map(|t| t.0).collect();
            let actions: Vec<usize> = p.actions.iter().map(|a| a.0).collect();
            (Some(accuracy(&tasks, &val_tasks)), Some(accuracy(&actions, &val_actions)))
        };
        info!(
            "epoch {epoch}: loss {loss:.4} (e {eloss:.4}, d {dloss:.4}), violations {violations}, val task {:?}, val action {:?}",
            val_task_accuracy, val_action_accuracy
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            train_eloss: eloss,
            train_dloss: dloss,
            violations,
            mean_grad_norm: norm,
            val_task_accuracy,
            val_action_accuracy,
        });
        let score = val_action_accuracy.unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(s, _)| score > *s || score.is_infinite()) {
            best = Some((score, net.clone()));
            history.best_epoch = epoch;
        }
    }
    let (_, best_net) = best.expect("at least one epoch");
    Ok((best_net, history))
}

/// Result of the full data-to-weights pipeline.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub params: ModelParams,
    pub history: History,
    pub split: Split,
    pub weights: ClassWeights,
}

/// Encodes and normalizes a split with statistics from its training part.
pub struct PreparedData {
    pub normalizer: Normalizer,
    pub train: Vec<NormalizedDemo>,
    pub val: Vec<NormalizedDemo>,
    pub test: Vec<NormalizedDemo>,
}

pub fn prepare(split: &Split, tax: &Taxonomy) -> Result<PreparedData> {
    let encode = |ds: &[Demonstration]| ds.iter().map(|d| d.encode(tax)).collect::<Result<Vec<_>>>();
    let train = encode(&split.train)?;
    let normalizer = fit_normalizer(&train)?;
    Ok(PreparedData {
        train: normalizer.normalize_all(&train)?,
        val: normalizer.normalize_all(&encode(&split.val)?)?,
        test: normalizer.normalize_all(&encode(&split.test)?)?,
        normalizer,
    })
}

/// Inverse-frequency weights computed from every training frame.
pub fn training_class_weights(train: &[NormalizedDemo], tax: &Taxonomy) -> Result<ClassWeights> {
    let tasks: Vec<usize> = train.iter().flat_map(|d| std::iter::repeat_n(d.task.0, d.len())).collect();
    let actions: Vec<usize> = train.iter().flat_map(|d| d.actions.iter().map(|a| a.0)).collect();
    Ok(ClassWeights {
        task: class_weights(&tasks, tax.n_tasks())?,
        action: class_weights(&actions, tax.n_actions())?,
    })
}

/// Split, normalize, weight and train. `conditioned` selects the
/// hierarchical action head; the loss comes from `cfg.loss` unchanged.
pub fn train_on_dataset(demos: &[Demonstration], tax: &Taxonomy, cfg: &TrainConfig, conditioned: bool) -> Result<TrainRun> {
    cfg.validate()?;
    crate::datagen::validate_labels(demos, tax)?;
    let split = split_dataset(demos, cfg.split_fractions, cfg.split_seed)?;
    let data = prepare(&split, tax)?;
    let weights = training_class_weights(&data.train, tax)?;
    let arch = cfg.arch(data.normalizer.n_features(), tax.n_tasks(), tax.n_actions(), conditioned);
    arch.validate()?;
    let mask = arch.mask();
    let train_set = WindowSet::new(&data.train, mask.clone(), 1)?;
    let val_set = WindowSet::new(&data.val, mask, cfg.val_stride)?;
    let (net, history) = train(Network::init(arch, cfg.seed), &train_set, &val_set, &weights, cfg, tax)?;
    Ok(TrainRun {
        params: ModelParams {
            net,
            normalizer: data.normalizer,
            taxonomy_hash: tax.content_hash(),
            config: cfg.clone(),
        },
        history,
        split,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaskVector;
    use rand::Rng;

    fn toy_tax() -> Taxonomy {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Taxonomy::new(
            s(&["t0", "t1"]),
            s(&["a0", "a1", "a2"]),
            [("t0".to_string(), s(&["a0", "a1"])), ("t1".to_string(), s(&["a1", "a2"]))],
        )
        .unwrap()
    }

    fn toy_demo(id: usize, task: usize, rng: &mut ChaCha8Rng) -> EncodedDemo {
        let len = 30;
        let mut frames = Vec::new();
        let mut actions = Vec::new();
        for t in 0..len {
            let a = if task == 0 { [0, 1][(t / 5) % 2] } else { [1, 2][(t / 5) % 2] };
            actions.push(ActionId(a));
            frames.push(task as f32 + rng.random_range(-0.3..0.3));
            frames.push(a as f32 + rng.random_range(-0.3..0.3));
        }
        EncodedDemo {
            demo_id: format!("d{id}"),
            task: TaskId(task),
            actions,
            n_features: 2,
            frames,
        }
    }

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            window: 6,
            visible: 3,
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.01,
            windows_per_epoch: None,
            val_stride: 1,
            hidden: 6,
            layers: 1,
            encoder_hidden: 6,
            embed_dim: 4,
            ..TrainConfig::default()
        }
    }

    struct Toy {
        tax: Taxonomy,
        train: Vec<NormalizedDemo>,
        val: Vec<NormalizedDemo>,
    }

    fn toy() -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<EncodedDemo> = (0..8).map(|i| toy_demo(i, i % 2, &mut rng)).collect();
        let norm = fit_normalizer(&raw[..6]).unwrap();
        Toy {
            tax: toy_tax(),
            train: norm.normalize_all(&raw[..6]).unwrap(),
            val: norm.normalize_all(&raw[6..]).unwrap(),
        }
    }

    fn run(toy: &Toy, cfg: &TrainConfig) -> Result<(Network<f32>, History)> {
        let arch = cfg.arch(2, 2, 3, true);
        let mask = MaskVector::for_window(cfg.window, cfg.visible).unwrap();
        let tr = WindowSet::new(&toy.train, mask.clone(), 1).unwrap();
        let va = WindowSet::new(&toy.val, mask, cfg.val_stride).unwrap();
        let w = training_class_weights(&toy.train, &toy.tax).unwrap();
        train(Network::init(arch, cfg.seed), &tr, &va, &w, cfg, &toy.tax)
    }

    #[test]
    fn loss_decreases_over_two_epochs() {
        let (_, h) = run(&toy(), &toy_cfg()).unwrap();
        assert_eq!(h.epochs.len(), 2);
        assert!(h.epochs[1].train_loss < h.epochs[0].train_loss, "{h:?}");
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let toy = toy();
        assert_eq!(run(&toy, &toy_cfg()).unwrap(), run(&toy, &toy_cfg()).unwrap());
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise() {
        let cfg = TrainConfig { learning_rate: 0.0, ..toy_cfg() };
        let (net, _) = run(&toy(), &cfg).unwrap();
        assert_eq!(net, Network::init(cfg.arch(2, 2, 3, true), cfg.seed));
    }

    #[test]
    fn best_epoch_has_best_validation_accuracy() {
        let cfg = TrainConfig { epochs: 4, ..toy_cfg() };
        let (_, h) = run(&toy(), &cfg).unwrap();
        let best = h.epochs[h.best_epoch - 1].val_action_accuracy.unwrap();
        for e in &h.epochs {
            assert!(best >= e.val_action_accuracy.unwrap());
        }
    }

    #[test]
    fn nan_frames_abort_naming_the_batch() {
        let mut toy = toy();
        let mut raw = toy.train[2].inner().clone();
        raw.frames[10] = f32::NAN;
        let ident = Normalizer { mean: vec![0.0; 2], std: vec![1.0; 2] };
        toy.train[2] = ident.normalize(&raw).unwrap();
        let err = run(&toy, &toy_cfg()).unwrap_err();
        assert!(matches!(&err, Error::Numeric(m) if m.contains("epoch 1, batch")), "{err}");
    }
}
