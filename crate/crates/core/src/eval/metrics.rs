use crate::error::{Error, Result};
use crate::taxonomy::{ActionId, TaskId, Taxonomy};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{a} predictions for {b} ground-truth labels")));
    }
    if a == 0 {
        return Err(Error::Validation("no frames to score".into()));
    }
    Ok(())
}

/// Fraction of frames whose prediction equals the ground truth.
pub fn per_frame_accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(preds.len(), truths.len())?;
    let hits = preds.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Rows are ground truth, columns predictions. With `normalize`, each row with
/// at least one frame is divided by its total; empty rows stay zero.
pub fn confusion_matrix(preds: &[usize], truths: &[usize], n_classes: usize, normalize: bool) -> Result<Vec<Vec<f64>>> {
    check_lengths(preds.len(), truths.len())?;
    let mut m = vec![vec![0.0f64; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Validation(format!("label {} out of range for {n_classes} classes", p.max(t))));
        }
        m[t][p] += 1.0;
    }
    if normalize {
        for row in m.iter_mut() {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|x| *x /= total);
            }
        }
    }
    Ok(m)
}

/// Recall per class from an unnormalized matrix; `None` for classes with no
/// ground-truth frames.
pub fn per_class_recall(counts: &[Vec<f64>]) -> Vec<Option<f64>> {
    counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: f64 = row.iter().sum();
            (total > 0.0).then(|| row[i] / total)
        })
        .collect()
}

/// Fraction of frames whose predicted action is admissible for the predicted task.
pub fn consistency_rate(task_preds: &[TaskId], action_preds: &[ActionId], tax: &Taxonomy) -> Result<f64> {
    check_lengths(task_preds.len(), action_preds.len())?;
    let mut ok = 0usize;
    for (&t, &a) in task_preds.iter().zip(action_preds) {
        ok += usize::from(tax.is_consistent(t, a)?);
    }
    Ok(ok as f64 / task_preds.len() as f64)
}

/// Accuracy by elapsed fraction of each demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyCurve {
    /// Mean over demonstrations of the per-bucket accuracy.
    pub accuracy: Vec<f64>,
    /// Frames that fell into each bucket, over all demonstrations.
    pub population: Vec<usize>,
    /// Demonstrations shorter than the number of buckets, left out.
    pub skipped: usize,
}

/// Frame `t` of a length-`T` demo goes to bucket `⌊t·k/T⌋`.
pub fn early_curve(per_demo_correct: &[Vec<bool>], deciles: usize) -> Result<EarlyCurve> {
    if deciles == 0 {
        return Err(Error::Config("need at least one bucket".into()));
    }
    let mut sum = vec![0.0f64; deciles];
    let mut population = vec![0usize; deciles];
    let mut used = 0usize;
    let mut skipped = 0usize;
    for demo in per_demo_correct {
        let len = demo.len();
        if len < deciles {
            skipped += 1;
            continue;
        }
        used += 1;
        let mut hits = vec![0usize; deciles];
        let mut count = vec![0usize; deciles];
        for (t, &c) in demo.iter().enumerate() {
            let b = t * deciles / len;
            hits[b] += usize::from(c);
            count[b] += 1;
        }
        for b in 0..deciles {
            sum[b] += hits[b] as f64 / count[b] as f64;
            population[b] += count[b];
        }
    }
    if used == 0 {
        return Err(Error::Validation(format!("no demonstration has at least {deciles} frames")));
    }
    Ok(EarlyCurve {
        accuracy: sum.iter().map(|s| s / used as f64).collect(),
        population,
        skipped,
    })
}
