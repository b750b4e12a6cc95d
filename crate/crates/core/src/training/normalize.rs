use serde::{Deserialize, Serialize};

use crate::datagen::EncodedDemo;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as this value.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature z-score statistics, fitted on training frames only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Pooled per-feature mean and population standard deviation over every frame.
pub fn fit_normalizer(train: &[EncodedDemo]) -> Result<Normalizer> {
    let f = train.first().map(|d| d.n_features).unwrap_or(0);
    let rows: usize = train.iter().map(EncodedDemo::len).sum();
    if rows == 0 || f == 0 {
        return Err(Error::Validation("cannot fit a normalizer on an empty training set".into()));
    }
    if let Some(d) = train.iter().find(|d| d.n_features != f) {
        return Err(Error::Schema(format!("demonstration `{}` has {} features, expected {f}", d.demo_id, d.n_features)));
    }
    let mut mean = vec![0.0f64; f];
    for d in train {
        for row in d.frames.chunks_exact(f) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x as f64;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0f64; f];
    for d in train {
        for row in d.frames.chunks_exact(f) {
            for ((v, &x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
    }
    let std = var.iter().map(|v| (v / rows as f64).sqrt().max(STD_FLOOR)).collect();
    Ok(Normalizer { mean, std })
}

impl Normalizer {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes rows of `x` in place. Not idempotent: callers that might see
    /// the same data twice should go through [`Normalizer::normalize`].
    pub fn apply_frames(&self, x: &mut [f32]) -> Result<()> {
        let f = self.n_features();
        if f == 0 || x.len() % f != 0 {
            return Err(Error::shape(format!("{} values do not form rows of {f} features", x.len())));
        }
        for row in x.chunks_exact_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        Ok(())
    }

    /// Normalizes one raw demonstration.
    pub fn normalize(&self, demo: &EncodedDemo) -> Result<NormalizedDemo> {
        if demo.n_features != self.n_features() {
            return Err(Error::Schema(format!(
                "demonstration `{}` has {} features, normalizer expects {}",
                demo.demo_id,
                demo.n_features,
                self.n_features()
            )));
        }
        let mut out = demo.clone();
        self.apply_frames(&mut out.frames)?;
        Ok(NormalizedDemo(out))
    }

    pub fn normalize_all(&self, demos: &[EncodedDemo]) -> Result<Vec<NormalizedDemo>> {
        demos.iter().map(|d| self.normalize(d)).collect()
    }
}

/// `apply_normalizer` on free-standing rows.
pub fn apply_normalizer(x: &mut [f32], stats: &Normalizer) -> Result<()> {
    stats.apply_frames(x)
}

/// A demonstration whose frames are already z-scored. The type is the
/// "normalized" flag: only [`Normalizer::normalize`] produces it and it cannot
/// be fed back in.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDemo(EncodedDemo);

impl NormalizedDemo {
    pub fn inner(&self) -> &EncodedDemo {
        &self.0
    }
}

impl std::ops::Deref for NormalizedDemo {
    type Target = EncodedDemo;

    fn deref(&self) -> &EncodedDemo {
        &self.0
    }
}

impl AsRef<EncodedDemo> for NormalizedDemo {
    fn as_ref(&self) -> &EncodedDemo {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{ActionId, TaskId};

    fn demo(id: &str, rows: &[[f32; 3]]) -> EncodedDemo {
        EncodedDemo {
            demo_id: id.into(),
            task: TaskId(0),
            actions: vec![ActionId(0); rows.len()],
            n_features: 3,
            frames: rows.iter().flatten().copied().collect(),
        }
    }

    fn corpus() -> Vec<EncodedDemo> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        (0..4)
            .map(|i| {
                let rows: Vec<[f32; 3]> = (0..50 + i * 7)
                    .map(|_| [rng.random_range(-3.0..5.0), 2.5, rng.random_range(10.0..11.0)])
                    .collect();
                demo(&format!("d{i}"), &rows)
            })
            .collect()
    }

    #[test]
    fn normalized_moments_recomputed() {
        let train = corpus();
        let stats = fit_normalizer(&train).unwrap();
        let normed = stats.normalize_all(&train).unwrap();
        let all: Vec<&[f32]> = normed.iter().flat_map(|d| d.frames.chunks_exact(3)).collect();
        let n = all.len() as f64;
        for j in [0, 2] {
            let mu = all.iter().map(|r| r[j] as f64).sum::<f64>() / n;
            let sd = (all.iter().map(|r| (r[j] as f64 - mu).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mu.abs() < 1e-6, "feature {j} mean {mu}");
            assert!((sd - 1.0).abs() < 1e-6, "feature {j} std {sd}");
        }
    }

    #[test]
    fn constant_feature_goes_to_zero() {
        let train = corpus();
        let stats = fit_normalizer(&train).unwrap();
        assert_eq!(stats.std[1], STD_FLOOR);
        let normed = stats.normalize(&train[0]).unwrap();
        assert!(normed.frames.chunks_exact(3).all(|r| r[1] == 0.0));
    }

    #[test]
    fn applying_twice_differs_from_once() {
        let stats = fit_normalizer(&corpus()).unwrap();
        let mut once = vec![4.0f32, 2.5, 10.2];
        apply_normalizer(&mut once, &stats).unwrap();
        let mut twice = once.clone();
        apply_normalizer(&mut twice, &stats).unwrap();
        assert_ne!(once, twice);
    }

    #[test]
    fn empty_and_mismatched_inputs_rejected() {
        assert!(matches!(fit_normalizer(&[]), Err(Error::Validation(_))));
        let stats = fit_normalizer(&corpus()).unwrap();
        let mut bad = vec![0.0f32; 4];
        assert!(matches!(apply_normalizer(&mut bad, &stats), Err(Error::Shape(_))));
    }

    #[test]
    fn stats_depend_only_on_given_demos() {
        let train = corpus();
        let a = fit_normalizer(&train[..2]).unwrap();
        let b = fit_normalizer(&train[..2]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fit_normalizer(&train).unwrap());
    }
}
