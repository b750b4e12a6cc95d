use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::Demonstration;
use crate::error::{Error, Result};

/// Demonstration-level partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Demonstration>,
    pub val: Vec<Demonstration>,
    pub test: Vec<Demonstration>,
}

pub fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    if fractions[0] == 0.0 {
        return Err(Error::Config("the training fraction must be positive".into()));
    }
    Ok(())
}

/// Shuffles each task's demonstrations with `seed` and cuts them by
/// `fractions` (train, val, test), so every split sees every task. Within a
/// split, demonstrations keep their input order.
pub fn split_dataset(demos: &[Demonstration], fractions: [f64; 3], seed: u64) -> Result<Split> {
    check_fractions(fractions)?;
    if demos.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    let mut by_task: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, d) in demos.iter().enumerate() {
        by_task.entry(d.task.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0u8; demos.len()];
    for (task, idx) in by_task.iter_mut() {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = (n as f64 * fractions[1]).round() as usize;
        let n_test = (n as f64 * fractions[2]).round() as usize;
        let short = (fractions[1] > 0.0 && n_val == 0)
            || (fractions[2] > 0.0 && n_test == 0)
            || (n_val + n_test >= n && n_val + n_test > 0);
        if short {
            return Err(Error::Validation(format!(
                "task `{task}` has {n} demonstrations, too few to stratify by {fractions:?}"
            )));
        }
        for &i in &idx[..n_val] {
            assign[i] = 1;
        }
        for &i in &idx[n_val..n_val + n_test] {
            assign[i] = 2;
        }
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (d, a) in demos.iter().zip(assign) {
        match a {
            0 => split.train.push(d.clone()),
            1 => split.val.push(d.clone()),
            _ => split.test.push(d.clone()),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn corpus(per_task: usize, tasks: usize) -> Vec<Demonstration> {
        (0..tasks)
            .flat_map(|t| {
                (0..per_task).map(move |i| Demonstration {
                    demo_id: format!("t{t}-{i:03}"),
                    task: format!("t{t}"),
                    rate_hz: 10.0,
                    frames: vec![vec![0.0]],
                    action_labels: vec!["a".into()],
                })
            })
            .collect()
    }

    fn ids(d: &[Demonstration]) -> BTreeSet<String> {
        d.iter().map(|d| d.demo_id.clone()).collect()
    }

    #[test]
    fn default_benchmark_counts() {
        let s = split_dataset(&corpus(34, 6), [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (144, 30, 30));
        for part in [&s.train, &s.val, &s.test] {
            let tasks: BTreeSet<&str> = part.iter().map(|d| d.task.as_str()).collect();
            assert_eq!(tasks.len(), 6);
        }
        let (a, b, c) = (ids(&s.train), ids(&s.val), ids(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), 204);
    }

    #[test]
    fn everything_in_train() {
        let s = split_dataset(&corpus(3, 2), [1.0, 0.0, 0.0], 9).unwrap();
        assert_eq!(s.train.len(), 6);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn seeded_membership_is_stable() {
        let c = corpus(10, 3);
        let a = split_dataset(&c, [0.6, 0.2, 0.2], 5).unwrap();
        let b = split_dataset(&c, [0.6, 0.2, 0.2], 5).unwrap();
        assert_eq!(a, b);
        let other = split_dataset(&c, [0.6, 0.2, 0.2], 6).unwrap();
        assert_ne!(ids(&a.test), ids(&other.test));
    }

    #[test]
    fn too_few_demos_or_bad_fractions_rejected() {
        assert!(matches!(split_dataset(&corpus(2, 2), [0.7, 0.15, 0.15], 0), Err(Error::Validation(_))));
        assert!(matches!(split_dataset(&corpus(5, 2), [0.5, 0.3, 0.3], 0), Err(Error::Config(_))));
        assert!(matches!(split_dataset(&corpus(5, 2), [0.0, 0.5, 0.5], 0), Err(Error::Config(_))));
    }
}
