use rand::Rng;

use crate::linalg::{gemm, tanh, Layout, Real};

/// One-hidden-layer perceptron: `tanh(x W1ᵀ + b1) W2ᵀ + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<R> {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<R>,
    pub b1: Vec<R>,
    pub w2: Vec<R>,
    pub b2: Vec<R>,
}

#[derive(Clone, Debug)]
pub struct MlpTrace<R> {
    x: Vec<R>,
    act: Vec<R>,
}

impl<R: Real> Mlp<R> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            input,
            hidden,
            output,
            w1: vec![R::zero(); hidden * input],
            b1: vec![R::zero(); hidden],
            w2: vec![R::zero(); output * hidden],
            b2: vec![R::zero(); output],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input, hidden, output);
        let b1 = (6.0 / (input + hidden) as f64).sqrt();
        let b2 = (6.0 / (hidden + output) as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = R::of(rng.random_range(-b1..b1)));
        m.w2.iter_mut().for_each(|w| *w = R::of(rng.random_range(-b2..b2)));
        m
    }

    /// Forward over `batch` rows; returns `batch × output` and the trace.
    pub fn forward(&self, x: &[R], batch: usize) -> (Vec<R>, MlpTrace<R>) {
        let mut act = vec![R::zero(); batch * self.hidden];
        gemm(batch, self.input, self.hidden, R::one(), x, Layout::rows(self.input), &self.w1, Layout::transposed(self.input), R::zero(), &mut act, Layout::rows(self.hidden));
        for row in act.chunks_exact_mut(self.hidden) {
            for (a, b) in row.iter_mut().zip(&self.b1) {
                *a = tanh(*a + *b);
            }
        }
        let mut out = vec![R::zero(); batch * self.output];
        gemm(batch, self.hidden, self.output, R::one(), &act, Layout::rows(self.hidden), &self.w2, Layout::transposed(self.hidden), R::zero(), &mut out, Layout::rows(self.output));
        for row in out.chunks_exact_mut(self.output) {
            for (o, b) in row.iter_mut().zip(&self.b2) {
                *o += *b;
            }
        }
        (out, MlpTrace { x: x.to_vec(), act })
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&self, tr: &MlpTrace<R>, d_out: &[R], batch: usize, grad: &mut Mlp<R>) -> Vec<R> {
        let one = R::one();
        gemm(self.output, batch, self.hidden, one, d_out, Layout::transposed(self.output), &tr.act, Layout::rows(self.hidden), one, &mut grad.w2, Layout::rows(self.hidden));
        for row in d_out.chunks_exact(self.output) {
            for (g, d) in grad.b2.iter_mut().zip(row) {
                *g += *d;
            }
        }
        let mut dz = vec![R::zero(); batch * self.hidden];
        gemm(batch, self.output, self.hidden, one, d_out, Layout::rows(self.output), &self.w2, Layout::rows(self.hidden), R::zero(), &mut dz, Layout::rows(self.hidden));
        for (d, a) in dz.iter_mut().zip(&tr.act) {
            *d *= one - *a * *a;
        }
        gemm(self.hidden, batch, self.input, one, &dz, Layout::transposed(self.hidden), &tr.x, Layout::rows(self.input), one, &mut grad.w1, Layout::rows(self.input));
        for row in dz.chunks_exact(self.hidden) {
            for (g, d) in grad.b1.iter_mut().zip(row) {
                *g += *d;
            }
        }
        let mut dx = vec![R::zero(); batch * self.input];
        gemm(batch, self.hidden, self.input, one, &dz, Layout::rows(self.hidden), &self.w1, Layout::rows(self.input), R::zero(), &mut dx, Layout::rows(self.input));
        dx
    }
}
