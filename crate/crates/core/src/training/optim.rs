use crate::model::Network;

/// Adaptive-moment optimizer over every tensor of a [`Network`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Rescale the whole gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f32>,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &Network<f32>, lr: f32, clip_norm: Option<f32>) -> Self {
        let sizes: Vec<usize> = net.tensors().iter().map(|t| t.data.len()).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step(&mut self, net: &mut Network<f32>, grads: &Network<f32>) -> f32 {
        self.step += 1;
        let norm = grads
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt() as f32;
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let step_size = self.lr / bc1;
        let g_tensors = grads.tensors();
        for (((p, g), m), v) in net.tensors_mut().into_iter().zip(&g_tensors).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g.data).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g * scale;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let u = step_size * *m / ((*v / bc2).sqrt() + self.eps);
                // skipping zero updates keeps signed zeros intact
                if u != 0.0 {
                    *p -= u;
                }
            }
        }
        norm
    }
}
