use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion_matrix, consistency_rate, early_curve, per_class_recall, per_frame_accuracy};
use crate::baselines::{nn_hmm_predict, HmmParams};
use crate::datagen::EncodedDemo;
use crate::error::{Error, Result};
use crate::stream::guard_action;
use crate::taxonomy::{ActionId, TaskId, Taxonomy};
use crate::training::{Predictor, WindowSet, INFERENCE_BATCH};

/// Number of elapsed-fraction buckets in the early-identification curve.
pub const DECILES: usize = 10;

/// Per-frame predictions for one demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoPrediction {
    pub demo_id: String,
    pub true_task: TaskId,
    pub true_actions: Vec<ActionId>,
    pub pred_tasks: Vec<TaskId>,
    pub pred_actions: Vec<ActionId>,
}

/// Seeds and hashes identifying the run that produced a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub config_hash: Option<String>,
    pub taxonomy_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub demos: usize,
    pub frames: usize,
    pub task_accuracy: f64,
    pub action_accuracy: f64,
    pub consistency_rate: f64,
    pub task_names: Vec<String>,
    pub action_names: Vec<String>,
    /// Row-normalized, rows = ground truth.
    pub task_confusion: Vec<Vec<f64>>,
    pub action_confusion: Vec<Vec<f64>>,
    pub task_recall: Vec<Option<f64>>,
    pub action_recall: Vec<Option<f64>>,
    /// Task accuracy per elapsed-fraction decile.
    pub early_task_curve: Vec<f64>,
    pub early_action_curve: Vec<f64>,
    pub early_population: Vec<usize>,
    pub early_skipped: usize,
    pub meta: RunMeta,
}

fn ids<T: Copy>(xs: &[T], f: impl Fn(T) -> usize) -> Vec<usize> {
    xs.iter().map(|&x| f(x)).collect()
}

/// Pooled per-frame metrics over every demonstration.
pub fn evaluate(method: &str, preds: &[DemoPrediction], tax: &Taxonomy, meta: RunMeta) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let (mut tt, mut pt, mut ta, mut pa) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut task_hits = Vec::new();
    let mut action_hits = Vec::new();
    for d in preds {
        let n = d.true_actions.len();
        if d.pred_tasks.len() != n || d.pred_actions.len() != n {
            return Err(Error::shape(format!("demonstration `{}`: {n} frames but {}/{} predictions", d.demo_id, d.pred_tasks.len(), d.pred_actions.len())));
        }
        tt.extend(std::iter::repeat_n(d.true_task, n));
        pt.extend_from_slice(&d.pred_tasks);
        ta.extend_from_slice(&d.true_actions);
        pa.extend_from_slice(&d.pred_actions);
        task_hits.push(d.pred_tasks.iter().map(|p| *p == d.true_task).collect::<Vec<_>>());
        action_hits.push(d.pred_actions.iter().zip(&d.true_actions).map(|(p, t)| p == t).collect::<Vec<_>>());
    }
    let (tt, pt) = (ids(&tt, |t| t.0), ids(&pt, |t| t.0));
    let (ta, pa) = (ids(&ta, |a| a.0), ids(&pa, |a| a.0));
    let (m, n) = (tax.n_tasks(), tax.n_actions());

    let task_accuracy = per_frame_accuracy(&pt, &tt)?;
    let action_accuracy = per_frame_accuracy(&pa, &ta)?;
    let task_counts = confusion_matrix(&pt, &tt, m, false)?;
    let action_counts = confusion_matrix(&pa, &ta, n, false)?;
    for (acc, counts, name) in [(task_accuracy, &task_counts, "task"), (action_accuracy, &action_counts, "action")] {
        let trace: f64 = (0..counts.len()).map(|i| counts[i][i]).sum();
        if (trace / tt.len() as f64 - acc).abs() > 1e-12 {
            return Err(Error::Numeric(format!("{name} accuracy disagrees with its confusion matrix")));
        }
    }
    let task_preds: Vec<TaskId> = pt.iter().map(|&t| TaskId(t)).collect();
    let action_preds: Vec<ActionId> = pa.iter().map(|&a| ActionId(a)).collect();
    let early_t = early_curve(&task_hits, DECILES)?;
    let early_a = early_curve(&action_hits, DECILES)?;
    Ok(EvalReport {
        method: method.to_string(),
        demos: preds.len(),
        frames: tt.len(),
        task_accuracy,
        action_accuracy,
        consistency_rate: consistency_rate(&task_preds, &action_preds, tax)?,
        task_names: tax.task_names().to_vec(),
        action_names: tax.action_names().to_vec(),
        task_confusion: confusion_matrix(&pt, &tt, m, true)?,
        action_confusion: confusion_matrix(&pa, &ta, n, true)?,
        task_recall: per_class_recall(&task_counts),
        action_recall: per_class_recall(&action_counts),
        early_task_curve: early_t.accuracy,
        early_action_curve: early_a.accuracy,
        early_population: early_t.population,
        early_skipped: early_t.skipped,
        meta,
    })
}

/// Network predictions for every frame of one normalized demonstration,
/// optionally projected onto the predicted task's admissible set.
pub fn predict_demo<D: AsRef<EncodedDemo>>(predictor: &Predictor<'_>, demo: &D, guard: Option<&Taxonomy>) -> Result<DemoPrediction> {
    let enc = demo.as_ref();
    let set = WindowSet::new(std::slice::from_ref(demo), predictor.net().arch.mask(), 1)?;
    let mut pred_tasks = Vec::with_capacity(enc.len());
    let mut pred_actions = Vec::with_capacity(enc.len());
    let rows: Vec<usize> = (0..set.len()).collect();
    for chunk in rows.chunks(INFERENCE_BATCH) {
        let batch = set.batch(chunk);
        let out = predictor.forward(&batch.inputs, chunk.len())?;
        for i in 0..chunk.len() {
            pred_tasks.push(TaskId(out.predicted_task(i)));
            pred_actions.push(match guard {
                Some(tax) => guard_action(out.task_row(i), out.action_row(i), tax)?,
                None => ActionId(out.predicted_action(i)),
            });
        }
    }
    Ok(DemoPrediction {
        demo_id: enc.demo_id.clone(),
        true_task: enc.task,
        true_actions: enc.actions.clone(),
        pred_tasks,
        pred_actions,
    })
}

/// The network + HMM baseline on one normalized demonstration.
pub fn predict_demo_nn_hmm<D: AsRef<EncodedDemo>>(predictor: &Predictor<'_>, demo: &D, hmm: &HmmParams) -> Result<DemoPrediction> {
    let enc = demo.as_ref();
    let (pred_tasks, pred_actions) = nn_hmm_predict(demo, predictor, hmm)?.into_iter().unzip();
    Ok(DemoPrediction {
        demo_id: enc.demo_id.clone(),
        true_task: enc.task,
        true_actions: enc.actions.clone(),
        pred_tasks,
        pred_actions,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_confusion(path: &Path, names: &[String], m: &[Vec<f64>]) -> Result<()> {
    let header: Vec<String> = std::iter::once("truth\\pred".to_string()).chain(names.iter().cloned()).collect();
    let rows: Vec<Vec<String>> = names
        .iter()
        .zip(m)
        .map(|(n, row)| std::iter::once(n.clone()).chain(row.iter().map(|x| x.to_string())).collect())
        .collect();
    write_csv(path, &header, &rows)
}

/// Writes `metrics.json`, `comparison.csv`, `early_curve.csv` and the
/// confusion matrices. The first report's matrices go to
/// `confusion_task.csv`/`confusion_action.csv`; later ones get a
/// `_<method>` suffix. Output is a pure function of the reports.
pub fn write_report(reports: &[EvalReport], out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    if reports.is_empty() {
        return Err(Error::Validation("no reports to write".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = reports.iter().find(|r| !seen.insert(r.method.as_str())) {
        return Err(Error::Validation(format!("method `{}` reported twice", dup.method)));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let keyed: IndexMap<&str, &EvalReport> = reports.iter().map(|r| (r.method.as_str(), r)).collect();
    let json = serde_json::to_string_pretty(&keyed).expect("reports serialize") + "\n";
    let path = dir.join("metrics.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let header: Vec<String> = ["Method", "Action", "Task", "Consistency"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| vec![r.method.clone(), r.action_accuracy.to_string(), r.task_accuracy.to_string(), r.consistency_rate.to_string()])
        .collect();
    write_csv(&dir.join("comparison.csv"), &header, &rows)?;

    let mut header = vec!["decile".to_string()];
    for r in reports {
        header.push(format!("{}_task", r.method));
        header.push(format!("{}_action", r.method));
    }
    let rows: Vec<Vec<String>> = (0..DECILES)
        .map(|b| {
            std::iter::once(format!("{}", b + 1))
                .chain(reports.iter().flat_map(|r| [r.early_task_curve[b].to_string(), r.early_action_curve[b].to_string()]))
                .collect()
        })
        .collect();
    write_csv(&dir.join("early_curve.csv"), &header, &rows)?;

    for (i, r) in reports.iter().enumerate() {
        let suffix = if i == 0 { String::new() } else { format!("_{}", r.method) };
        write_confusion(&dir.join(format!("confusion_task{suffix}.csv")), &r.task_names, &r.task_confusion)?;
        write_confusion(&dir.join(format!("confusion_action{suffix}.csv")), &r.action_names, &r.action_confusion)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(tax: &Taxonomy) -> Vec<DemoPrediction> {
        let house = tax.task_id("house").unwrap();
        let car = tax.task_id("car").unwrap();
        let a = |s: &str| tax.action_id(s).unwrap();
        vec![
            DemoPrediction {
                demo_id: "h".into(),
                true_task: house,
                true_actions: vec![a("pick_block"); 12],
                pred_tasks: [vec![car; 2], vec![house; 10]].concat(),
                pred_actions: [vec![a("pick_screw"); 3], vec![a("pick_block"); 9]].concat(),
            },
            DemoPrediction {
                demo_id: "c".into(),
                true_task: car,
                true_actions: vec![a("fasten_wheel"); 10],
                pred_tasks: vec![car; 10],
                pred_actions: vec![a("fasten_wheel"); 10],
            },
        ]
    }

    #[test]
    fn pooled_metrics() {
        let tax = Taxonomy::default_assembly();
        let r = evaluate("hier", &sample(&tax), &tax, RunMeta::default()).unwrap();
        assert_eq!(r.frames, 22);
        assert_eq!(r.task_accuracy, 20.0 / 22.0);
        assert_eq!(r.action_accuracy, 19.0 / 22.0);
        // frame 2 pairs house with pick_screw
        assert_eq!(r.consistency_rate, 21.0 / 22.0);
        for (i, row) in r.task_confusion.iter().enumerate() {
            let s: f64 = row.iter().sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "row {i}");
        }
        assert_eq!(r.early_task_curve[0], 0.5);
        assert_eq!(r.early_task_curve[9], 1.0);
    }

    #[test]
    fn written_files_are_deterministic() {
        let tax = Taxonomy::default_assembly();
        let a = evaluate("hierarchical", &sample(&tax), &tax, RunMeta::default()).unwrap();
        let mut b = a.clone();
        b.method = "independent".into();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_report(&[a.clone(), b.clone()], d1.path()).unwrap();
        write_report(&[a, b], d2.path()).unwrap();
        for f in ["metrics.json", "comparison.csv", "early_curve.csv", "confusion_task.csv", "confusion_action_independent.csv"] {
            assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let cmp = std::fs::read_to_string(d1.path().join("comparison.csv")).unwrap();
        assert_eq!(cmp.lines().count(), 3);
        assert!(cmp.starts_with("Method,Action,Task"));
    }

    #[test]
    fn empty_or_duplicate_reports_rejected() {
        let d = tempfile::tempdir().unwrap();
        assert!(write_report(&[], d.path()).is_err());
        let tax = Taxonomy::default_assembly();
        let a = evaluate("x", &sample(&tax), &tax, RunMeta::default()).unwrap();
        assert!(write_report(&[a.clone(), a], d.path()).is_err());
        assert!(evaluate("x", &[], &tax, RunMeta::default()).is_err());
    }
}
