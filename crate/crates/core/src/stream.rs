//! Online inference: frames arrive one at a time, a ring buffer holds the
//! last `L` normalized frames, and every `emit_every`-th frame yields an
//! estimate.

use std::path::Path;

use crate::datagen::{read_dataset, Demonstration};
use crate::error::{Error, Result};
use crate::eval::{evaluate, DemoPrediction, EvalReport, RunMeta};
use crate::linalg::argmax;
use crate::model::LayerState;
use crate::taxonomy::{ActionId, TaskId, Taxonomy};
use crate::training::{load_checkpoint, ModelParams};

/// 10 Hz input decimated to 2 Hz output.
pub const DEFAULT_EMIT_EVERY: usize = 5;

/// The best action admissible under the most probable task. Ties go to the
/// lower index at both levels.
pub fn guard_action(task_probs: &[f32], action_probs: &[f32], tax: &Taxonomy) -> Result<ActionId> {
    if task_probs.len() != tax.n_tasks() || action_probs.len() != tax.n_actions() {
        return Err(Error::shape(format!(
            "posteriors of length {}/{} for a taxonomy of {}/{}",
            task_probs.len(),
            action_probs.len(),
            tax.n_tasks(),
            tax.n_actions()
        )));
    }
    let set = tax.action_set_of(TaskId(argmax(task_probs)))?;
    let mut best = set[0];
    for &a in &set[1..] {
        if action_probs[a.0] > action_probs[best.0] {
            best = a;
        }
    }
    Ok(best)
}

/// One emitted estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentEstimate {
    pub frame_index: usize,
    pub task: TaskId,
    pub task_probs: Vec<f32>,
    /// Unrestricted argmax of the action posterior.
    pub action: ActionId,
    pub action_probs: Vec<f32>,
    /// Whether `action` is admissible under `task`.
    pub consistent: bool,
    /// Always admissible under `task`.
    pub guarded_action: ActionId,
}

/// Streaming engine over one set of trained parameters.
pub struct StreamState<'a> {
    params: &'a ModelParams,
    tax: &'a Taxonomy,
    prefix: Option<Vec<LayerState<f32>>>,
    ring: Vec<f32>,
    head: usize,
    window: Vec<f32>,
    frame_counter: usize,
    emit_every: usize,
    guard: bool,
}

impl<'a> StreamState<'a> {
    pub fn new(params: &'a ModelParams, tax: &'a Taxonomy, emit_every: usize, guard: bool) -> Result<Self> {
        if emit_every == 0 {
            return Err(Error::Config("emit_every must be at least 1".into()));
        }
        if params.taxonomy_hash != tax.content_hash() {
            return Err(Error::TaxonomyMismatch {
                expected: params.taxonomy_hash.clone(),
                found: tax.content_hash(),
            });
        }
        let arch = &params.net.arch;
        let size = arch.window * arch.input_dim;
        Ok(StreamState {
            prefix: params.net.masked_prefix(&arch.mask()),
            params,
            tax,
            ring: vec![0.0; size],
            head: 0,
            window: vec![0.0; size],
            frame_counter: 0,
            emit_every,
            guard,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frame_counter
    }

    pub fn guard(&self) -> bool {
        self.guard
    }

    /// Current buffer, oldest row first; always `L × F`.
    pub fn buffer(&self) -> Vec<f32> {
        let split = self.head * self.params.net.arch.input_dim;
        [&self.ring[split..], &self.ring[..split]].concat()
    }

    /// Feeds one raw frame. Frames `0, e, 2e, …` (for `emit_every = e`)
    /// produce an estimate, starting with the very first frame.
    pub fn push_frame(&mut self, raw: &[f32]) -> Result<Option<IntentEstimate>> {
        let arch = &self.params.net.arch;
        let f = arch.input_dim;
        if raw.len() != f {
            return Err(Error::shape(format!("frame has {} features, expected {f}", raw.len())));
        }
        if let Some(j) = raw.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature {j} in frame {}", self.frame_counter)));
        }
        let slot = &mut self.ring[self.head * f..(self.head + 1) * f];
        slot.copy_from_slice(raw);
        self.params.normalizer.apply_frames(slot)?;
        self.head = (self.head + 1) % arch.window;
        let index = self.frame_counter;
        self.frame_counter += 1;
        if index % self.emit_every != 0 {
            return Ok(None);
        }

        let split = self.head * f;
        let tail = self.ring.len() - split;
        self.window[..tail].copy_from_slice(&self.ring[split..]);
        self.window[tail..].copy_from_slice(&self.ring[..split]);
        let out = self.params.net.forward_batch_with_prefix(&self.window, 1, self.prefix.as_deref())?;
        let (task, action) = (TaskId(out.predicted_task(0)), ActionId(out.predicted_action(0)));
        Ok(Some(IntentEstimate {
            frame_index: index,
            consistent: self.tax.is_consistent(task, action)?,
            guarded_action: guard_action(out.task_row(0), out.action_row(0), self.tax)?,
            task,
            action,
            task_probs: out.task_probs,
            action_probs: out.action_probs,
        }))
    }

    /// The action reported downstream: guarded when the guard is on.
    pub fn reported_action(&self, est: &IntentEstimate) -> ActionId {
        if self.guard {
            est.guarded_action
        } else {
            est.action
        }
    }
}

/// One line of a replay timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct TimelineRow {
    pub frame_index: usize,
    pub true_task: TaskId,
    pub pred_task: TaskId,
    pub true_action: ActionId,
    pub pred_action: ActionId,
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timeline {
    pub demo_id: String,
    pub rows: Vec<TimelineRow>,
}

/// Replay output: one timeline per demonstration and metrics over the
/// emitted frames.
#[derive(Clone, Debug)]
pub struct ReplayOutput {
    pub timelines: Vec<Timeline>,
    pub report: EvalReport,
}

/// Pushes every frame of every demonstration through a fresh engine.
pub fn replay_demos(params: &ModelParams, tax: &Taxonomy, demos: &[Demonstration], emit_every: usize, guard: bool) -> Result<ReplayOutput> {
    if demos.is_empty() {
        return Err(Error::Validation("nothing to replay".into()));
    }
    let f = params.net.arch.input_dim;
    if let Some(d) = demos.iter().find(|d| d.n_features() != f) {
        return Err(Error::Schema(format!(
            "demonstration `{}` has {} features but the checkpoint expects {f}",
            d.demo_id,
            d.n_features()
        )));
    }
    let mut timelines = Vec::with_capacity(demos.len());
    let mut preds = Vec::with_capacity(demos.len());
    for demo in demos {
        let enc = demo.encode(tax)?;
        let mut engine = StreamState::new(params, tax, emit_every, guard)?;
        let mut rows = Vec::new();
        for t in 0..enc.len() {
            if let Some(est) = engine.push_frame(enc.frame(t))? {
                let pred_action = engine.reported_action(&est);
                rows.push(TimelineRow {
                    frame_index: est.frame_index,
                    true_task: enc.task,
                    pred_task: est.task,
                    true_action: enc.actions[t],
                    pred_action,
                    consistent: tax.is_consistent(est.task, pred_action)?,
                });
            }
        }
        preds.push(DemoPrediction {
            demo_id: enc.demo_id.clone(),
            true_task: enc.task,
            true_actions: rows.iter().map(|r| r.true_action).collect(),
            pred_tasks: rows.iter().map(|r| r.pred_task).collect(),
            pred_actions: rows.iter().map(|r| r.pred_action).collect(),
        });
        timelines.push(Timeline { demo_id: enc.demo_id, rows });
    }
    let method = if guard { "stream-guarded" } else { "stream" };
    let meta = RunMeta {
        train_seed: Some(params.config.seed),
        split_seed: Some(params.config.split_seed),
        taxonomy_hash: Some(params.taxonomy_hash.clone()),
        ..RunMeta::default()
    };
    Ok(ReplayOutput {
        report: evaluate(method, &preds, tax, meta)?,
        timelines,
    })
}

/// Loads a dataset and a checkpoint from disk and replays the dataset.
pub fn replay(dataset: impl AsRef<Path>, checkpoint: impl AsRef<Path>, tax: &Taxonomy, emit_every: usize, guard: bool) -> Result<ReplayOutput> {
    let demos = read_dataset(dataset)?;
    let params = load_checkpoint(checkpoint, tax)?;
    replay_demos(&params, tax, &demos, emit_every, guard)
}

/// Writes `frame_index,true_task,pred_task,true_action,pred_action,consistent`
/// lines for one timeline.
pub fn write_timeline(timeline: &Timeline, tax: &Taxonomy, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("frame_index,true_task,pred_task,true_action,pred_action,consistent\n");
    for r in &timeline.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.frame_index,
            tax.task_name(r.true_task),
            tax.task_name(r.pred_task),
            tax.action_name(r.true_action),
            tax.action_name(r.pred_action),
            r.consistent
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
