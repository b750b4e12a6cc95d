use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Real;

/// Binary time mask over an `L`-frame window: the first `masked` frames are
/// hidden, the trailing `visible` frames are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskVector {
    masked: usize,
    visible: usize,
}

impl MaskVector {
    pub fn new(masked: usize, visible: usize) -> Result<Self> {
        if visible == 0 {
            return Err(Error::Config("mask must keep at least one frame".into()));
        }
        Ok(MaskVector { masked, visible })
    }

    /// Mask for a window of `len` frames keeping the last `visible`.
    pub fn for_window(len: usize, visible: usize) -> Result<Self> {
        if visible > len {
            return Err(Error::Config(format!("visible length {visible} exceeds window length {len}")));
        }
        Self::new(len - visible, visible)
    }

    pub fn masked(&self) -> usize {
        self.masked
    }

    pub fn visible(&self) -> usize {
        self.visible
    }

    pub fn len(&self) -> usize {
        self.masked + self.visible
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `M[i]`: 0 inside the masked prefix, 1 after it.
    pub fn get(&self, i: usize) -> u8 {
        u8::from(i >= self.masked)
    }

    pub fn to_vec(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

/// Applies `mask` to a row-major `L × F` window: rows with `M[i] = 0` become zero.
pub fn mask<R: Real>(x: &[R], n_features: usize, m: &MaskVector) -> Result<Vec<R>> {
    if n_features == 0 || x.len() != m.len() * n_features {
        return Err(Error::shape(format!(
            "window has {} values, mask expects {} rows of {n_features}",
            x.len(),
            m.len()
        )));
    }
    let mut out = x.to_vec();
    out[..m.masked * n_features].fill(R::zero());
    Ok(out)
}
