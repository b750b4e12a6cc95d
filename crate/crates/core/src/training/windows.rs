use crate::datagen::EncodedDemo;
use crate::error::{Error, Result};
use crate::model::MaskVector;
use crate::taxonomy::{ActionId, TaskId};

/// One `L × F` window ending at frame `end`, labelled by that frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub data: Vec<f32>,
    pub task: TaskId,
    pub action: ActionId,
    pub end: usize,
}

/// Copies the window of `len` rows ending at `end` into `out`, left-padding
/// with zero rows before frame 0.
pub fn fill_window(frames: &[f32], n_features: usize, end: usize, len: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), len * n_features);
    let first = end as isize + 1 - len as isize;
    let pad = (-first).max(0) as usize;
    out[..pad * n_features].fill(0.0);
    let start = first.max(0) as usize;
    out[pad * n_features..].copy_from_slice(&frames[start * n_features..(end + 1) * n_features]);
}

/// Every stride-1 window of `demo`, one per frame.
pub fn make_windows(demo: &EncodedDemo, len: usize) -> Result<Vec<Window>> {
    if len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let f = demo.n_features;
    Ok((0..demo.len())
        .map(|t| {
            let mut data = vec![0.0; len * f];
            fill_window(&demo.frames, f, t, len, &mut data);
            Window {
                data,
                task: demo.task,
                action: demo.actions[t],
                end: t,
            }
        })
        .collect())
}

/// Windows stacked into one batch. All rows share the architecture's mask.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `B × L × F`, row-major.
    pub inputs: Vec<f32>,
    pub mask: MaskVector,
    pub task_labels: Vec<TaskId>,
    pub action_labels: Vec<ActionId>,
    /// `(demo index, end frame)` per row.
    pub source: Vec<(usize, usize)>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.task_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_labels.is_empty()
    }
}

/// Index over all windows of a corpus. Windows are materialized only when a
/// batch is requested, since the full set would not fit comfortably in memory.
#[derive(Clone, Debug)]
pub struct WindowSet<'a, D> {
    demos: &'a [D],
    mask: MaskVector,
    index: Vec<(usize, usize)>,
}

impl<'a, D: AsRef<EncodedDemo>> WindowSet<'a, D> {
    /// Windows ending at every `stride`-th frame of each demonstration.
    pub fn new(demos: &'a [D], mask: MaskVector, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("window stride must be at least 1".into()));
        }
        let mut index = Vec::new();
        for (d, demo) in demos.iter().enumerate() {
            index.extend((0..demo.as_ref().len()).step_by(stride).map(|t| (d, t)));
        }
        Ok(WindowSet { demos, mask, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn demos(&self) -> &'a [D] {
        self.demos
    }

    pub fn mask(&self) -> &MaskVector {
        &self.mask
    }

    pub fn source(&self, i: usize) -> (usize, usize) {
        self.index[i]
    }

    /// Action labels of every window, in index order.
    pub fn action_labels(&self) -> Vec<usize> {
        self.index.iter().map(|&(d, t)| self.demos[d].as_ref().actions[t].0).collect()
    }

    pub fn task_labels(&self) -> Vec<usize> {
        self.index.iter().map(|&(d, _)| self.demos[d].as_ref().task.0).collect()
    }

    /// Builds the batch made of the windows at positions `rows`.
    pub fn batch(&self, rows: &[usize]) -> WindowBatch {
        let len = self.mask.len();
        let f = self.demos.first().map_or(0, |d| d.as_ref().n_features);
        let mut inputs = vec![0.0; rows.len() * len * f];
        let mut out = WindowBatch {
            inputs: Vec::new(),
            mask: self.mask.clone(),
            task_labels: Vec::with_capacity(rows.len()),
            action_labels: Vec::with_capacity(rows.len()),
            source: Vec::with_capacity(rows.len()),
        };
        for (slot, &r) in inputs.chunks_exact_mut(len * f).zip(rows) {
            let (d, t) = self.index[r];
            let demo = self.demos[d].as_ref();
            fill_window(&demo.frames, f, t, len, slot);
            out.task_labels.push(demo.task);
            out.action_labels.push(demo.actions[t]);
            out.source.push((d, t));
        }
        out.inputs = inputs;
        out
    }
}
