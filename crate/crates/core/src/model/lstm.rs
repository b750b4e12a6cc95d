//! Stacked LSTM over batches of equal-length sequences, with full
//! backpropagation through time.
//!
//! Sequence buffers are row-major `(batch · steps) × width` with row
//! `b * steps + t`. Gates are laid out `[input, forget, cell, output]`.

use rand::Rng;

use crate::linalg::{gemm, sigmoid, tanh, Layout, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<R> {
    pub input: usize,
    pub hidden: usize,
    /// `4H × input`
    pub w_ih: Vec<R>,
    /// `4H × H`
    pub w_hh: Vec<R>,
    /// `4H`
    pub bias: Vec<R>,
}

impl<R: Real> LstmLayer<R> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            input,
            hidden,
            w_ih: vec![R::zero(); 4 * hidden * input],
            w_hh: vec![R::zero(); 4 * hidden * hidden],
            bias: vec![R::zero(); 4 * hidden],
        }
    }

    /// Uniform in `±1/sqrt(H)`, forget-gate bias offset by one.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize| -> Vec<R> { (0..n).map(|_| R::of(rng.random_range(-bound..bound))).collect() };
        let w_ih = draw(4 * hidden * input);
        let w_hh = draw(4 * hidden * hidden);
        let mut bias = draw(4 * hidden);
        for b in &mut bias[hidden..2 * hidden] {
            *b += R::one();
        }
        LstmLayer {
            input,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }
}

/// Hidden and cell state of one layer for a whole batch (`B × H` each).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<R> {
    pub h: Vec<R>,
    pub c: Vec<R>,
}

impl<R: Real> LayerState<R> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LayerState {
            h: vec![R::zero(); batch * hidden],
            c: vec![R::zero(); batch * hidden],
        }
    }

    /// Repeats a single-row state `batch` times.
    pub fn broadcast(&self, batch: usize) -> Self {
        LayerState {
            h: self.h.repeat(batch),
            c: self.c.repeat(batch),
        }
    }

    /// Sums a batch of states down to one row.
    pub fn sum_rows(&self, hidden: usize) -> Self {
        let fold = |v: &[R]| {
            let mut out = vec![R::zero(); hidden];
            for row in v.chunks_exact(hidden) {
                for (o, x) in out.iter_mut().zip(row) {
                    *o += *x;
                }
            }
            out
        };
        LayerState {
            h: fold(&self.h),
            c: fold(&self.c),
        }
    }
}

/// Everything backward needs from one layer's forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace<R> {
    input: Vec<R>,
    gates: Vec<R>,
    cell: Vec<R>,
    cell_tanh: Vec<R>,
    hidden: Vec<R>,
    init: LayerState<R>,
}

#[derive(Clone, Debug)]
pub struct StackTrace<R> {
    pub batch: usize,
    pub steps: usize,
    layers: Vec<LayerTrace<R>>,
}

impl<R: Real> StackTrace<R> {
    /// Top-layer hidden state at the final step, `B × H`.
    pub fn last_hidden(&self) -> Vec<R> {
        let top = self.layers.last().expect("non-empty stack");
        let h = top.init.h.len() / self.batch;
        let mut out = Vec::with_capacity(self.batch * h);
        for b in 0..self.batch {
            let r = b * self.steps + self.steps - 1;
            out.extend_from_slice(&top.hidden[r * h..(r + 1) * h]);
        }
        out
    }

    /// Final `(h, c)` of every layer.
    pub fn final_states(&self) -> Vec<LayerState<R>> {
        self.layers
            .iter()
            .map(|l| {
                let h = l.init.h.len() / self.batch;
                let mut st = LayerState {
                    h: Vec::with_capacity(self.batch * h),
                    c: Vec::with_capacity(self.batch * h),
                };
                for b in 0..self.batch {
                    let r = b * self.steps + self.steps - 1;
                    st.h.extend_from_slice(&l.hidden[r * h..(r + 1) * h]);
                    st.c.extend_from_slice(&l.cell[r * h..(r + 1) * h]);
                }
                st
            })
            .collect()
    }
}

fn forward_layer<R: Real>(layer: &LstmLayer<R>, x: Vec<R>, batch: usize, steps: usize, init: LayerState<R>) -> LayerTrace<R> {
    let (n_in, h) = (layer.input, layer.hidden);
    let g4 = 4 * h;
    let rows = batch * steps;
    debug_assert_eq!(x.len(), rows * n_in);

    let mut gates = vec![R::zero(); rows * g4];
    gemm(rows, n_in, g4, R::one(), &x, Layout::rows(n_in), &layer.w_ih, Layout::transposed(n_in), R::zero(), &mut gates, Layout::rows(g4));
    for row in gates.chunks_exact_mut(g4) {
        for (g, b) in row.iter_mut().zip(&layer.bias) {
            *g += *b;
        }
    }

    let mut cell = vec![R::zero(); rows * h];
    let mut cell_tanh = vec![R::zero(); rows * h];
    let mut hidden = vec![R::zero(); rows * h];
    for t in 0..steps {
        let c_out = Layout {
            offset: t * g4,
            rs: steps * g4,
            cs: 1,
        };
        if t == 0 {
            gemm(batch, h, g4, R::one(), &init.h, Layout::rows(h), &layer.w_hh, Layout::transposed(h), R::one(), &mut gates, c_out);
        } else {
            let prev = Layout {
                offset: (t - 1) * h,
                rs: steps * h,
                cs: 1,
            };
            gemm(batch, h, g4, R::one(), &hidden, prev, &layer.w_hh, Layout::transposed(h), R::one(), &mut gates, c_out);
        }
        for b in 0..batch {
            let r = b * steps + t;
            let g = &mut gates[r * g4..(r + 1) * g4];
            for j in 0..h {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[h + j]);
                let cc = tanh(g[2 * h + j]);
                let o = sigmoid(g[3 * h + j]);
                g[j] = i;
                g[h + j] = f;
                g[2 * h + j] = cc;
                g[3 * h + j] = o;
                let c_prev = if t == 0 { init.c[b * h + j] } else { cell[(r - 1) * h + j] };
                let c = f * c_prev + i * cc;
                let tc = tanh(c);
                cell[r * h + j] = c;
                cell_tanh[r * h + j] = tc;
                hidden[r * h + j] = o * tc;
            }
        }
    }
    LayerTrace {
        input: x,
        gates,
        cell,
        cell_tanh,
        hidden,
        init,
    }
}

/// Runs the stack over `x` (`(batch · steps) × input`). `init` supplies
/// per-layer starting states; zeros otherwise.
pub fn forward_stack<R: Real>(
    layers: &[LstmLayer<R>],
    x: &[R],
    batch: usize,
    steps: usize,
    init: Option<Vec<LayerState<R>>>,
) -> StackTrace<R> {
    assert!(!layers.is_empty() && steps > 0 && batch > 0);
    let mut init = init.map(|v| v.into_iter());
    let mut traces: Vec<LayerTrace<R>> = Vec::with_capacity(layers.len());
    for layer in layers {
        let state = match init.as_mut() {
            Some(it) => it.next().expect("one initial state per layer"),
            None => LayerState::zeros(batch, layer.hidden),
        };
        let input = match traces.last() {
            Some(prev) => prev.hidden.clone(),
            None => x.to_vec(),
        };
        traces.push(forward_layer(layer, input, batch, steps, state));
    }
    StackTrace {
        batch,
        steps,
        layers: traces,
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_layer<R: Real>(
    layer: &LstmLayer<R>,
    tr: &LayerTrace<R>,
    batch: usize,
    steps: usize,
    dh_seq: Option<&[R]>,
    dh_final: Vec<R>,
    dc_final: Vec<R>,
    grad: &mut LstmLayer<R>,
    need_dx: bool,
) -> (Option<Vec<R>>, LayerState<R>) {
    let (n_in, h) = (layer.input, layer.hidden);
    let g4 = 4 * h;
    let rows = batch * steps;
    let one = R::one();

    let mut dgates = vec![R::zero(); rows * g4];
    let mut dh_next = dh_final;
    let mut dc_next = dc_final;
    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = b * steps + t;
            let g = &tr.gates[r * g4..(r + 1) * g4];
            let dg = &mut dgates[r * g4..(r + 1) * g4];
            for j in 0..h {
                let (i, f, cc, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = tr.cell_tanh[r * h + j];
                let c_prev = if t == 0 { tr.init.c[b * h + j] } else { tr.cell[(r - 1) * h + j] };
                let mut dh = dh_next[b * h + j];
                if let Some(seq) = dh_seq {
                    dh += seq[r * h + j];
                }
                let d_o = dh * tc;
                let dc = dc_next[b * h + j] + dh * o * (one - tc * tc);
                dc_next[b * h + j] = dc * f;
                dg[j] = dc * cc * i * (one - i);
                dg[h + j] = dc * c_prev * f * (one - f);
                dg[2 * h + j] = dc * i * (one - cc * cc);
                dg[3 * h + j] = d_o * o * (one - o);
            }
        }
        let a = Layout {
            offset: t * g4,
            rs: steps * g4,
            cs: 1,
        };
        gemm(batch, g4, h, one, &dgates, a, &layer.w_hh, Layout::rows(h), R::zero(), &mut dh_next, Layout::rows(h));
    }

    // h_{t-1} for every row, with the initial state at t = 0
    let mut h_prev = vec![R::zero(); rows * h];
    for b in 0..batch {
        h_prev[b * steps * h..(b * steps + 1) * h].copy_from_slice(&tr.init.h[b * h..(b + 1) * h]);
        let src = &tr.hidden[b * steps * h..(b * steps + steps - 1) * h];
        h_prev[(b * steps + 1) * h..(b + 1) * steps * h].copy_from_slice(src);
    }
    gemm(g4, rows, h, one, &dgates, Layout::transposed(g4), &h_prev, Layout::rows(h), one, &mut grad.w_hh, Layout::rows(h));
    gemm(g4, rows, n_in, one, &dgates, Layout::transposed(g4), &tr.input, Layout::rows(n_in), one, &mut grad.w_ih, Layout::rows(n_in));
    for row in dgates.chunks_exact(g4) {
        for (gb, d) in grad.bias.iter_mut().zip(row) {
            *gb += *d;
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![R::zero(); rows * n_in];
        gemm(rows, g4, n_in, one, &dgates, Layout::rows(g4), &layer.w_ih, Layout::rows(n_in), R::zero(), &mut dx, Layout::rows(n_in));
        dx
    });
    (dx, LayerState { h: dh_next, c: dc_next })
}

/// Backpropagates through a stack run. `d_last` is the gradient on the top
/// layer's final hidden state (`B × H`); `d_final` adds gradients on every
/// layer's final `(h, c)`. Parameter gradients are accumulated into `grads`;
/// the gradients on the initial states are returned.
pub fn backward_stack<R: Real>(
    layers: &[LstmLayer<R>],
    trace: &StackTrace<R>,
    d_last: Option<&[R]>,
    d_final: Option<&[LayerState<R>]>,
    grads: &mut [LstmLayer<R>],
) -> Vec<LayerState<R>> {
    let (batch, steps) = (trace.batch, trace.steps);
    let top = layers.len() - 1;
    let mut d_init: Vec<LayerState<R>> = Vec::with_capacity(layers.len());
    let mut dh_seq: Option<Vec<R>> = None;
    for l in (0..layers.len()).rev() {
        let h = layers[l].hidden;
        let mut dh_final = vec![R::zero(); batch * h];
        let mut dc_final = vec![R::zero(); batch * h];
        if l == top {
            if let Some(d) = d_last {
                for (o, x) in dh_final.iter_mut().zip(d) {
                    *o += *x;
                }
            }
        }
        if let Some(fin) = d_final {
            for (o, x) in dh_final.iter_mut().zip(&fin[l].h) {
                *o += *x;
            }
            for (o, x) in dc_final.iter_mut().zip(&fin[l].c) {
                *o += *x;
            }
        }
        let (dx, d0) = backward_layer(
            &layers[l],
            &trace.layers[l],
            batch,
            steps,
            dh_seq.as_deref(),
            dh_final,
            dc_final,
            &mut grads[l],
            l > 0,
        );
        dh_seq = dx;
        d_init.push(d0);
    }
    d_init.reverse();
    d_init
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_zero_input_give_zero_state() {
        let layers = vec![LstmLayer::<f64>::zeros(3, 4), LstmLayer::zeros(4, 4)];
        let tr = forward_stack(&layers, &[0.0; 2 * 5 * 3], 2, 5, None);
        assert!(tr.last_hidden().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_matches_hand_recursion() {
        // one layer, one hidden unit, one feature, two steps
        let w_ih = [0.5, -0.3, 0.8, 0.2];
        let w_hh = [0.1, 0.4, -0.6, 0.7];
        let bias = [0.05, 1.0, -0.1, 0.0];
        let layer = LstmLayer::<f64> {
            input: 1,
            hidden: 1,
            w_ih: w_ih.to_vec(),
            w_hh: w_hh.to_vec(),
            bias: bias.to_vec(),
        };
        let xs = [0.7, -1.2];
        let (mut h, mut c) = (0.0, 0.0);
        for x in xs {
            let z = |k: usize| w_ih[k] * x + w_hh[k] * h + bias[k];
            let (i, f, g, o) = (sig(z(0)), sig(z(1)), z(2).tanh(), sig(z(3)));
            c = f * c + i * g;
            h = o * c.tanh();
        }
        let tr = forward_stack(std::slice::from_ref(&layer), &xs, 1, 2, None);
        assert!((tr.last_hidden()[0] - h).abs() < 1e-15);
        assert!((tr.final_states()[0].c[0] - c).abs() < 1e-15);
    }

    #[test]
    fn resuming_from_final_state_matches_one_long_run() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layers = vec![LstmLayer::<f64>::init(2, 3, &mut rng), LstmLayer::init(3, 3, &mut rng)];
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let whole = forward_stack(&layers, &x, 1, 6, None);
        let head = forward_stack(&layers, &x[..8], 1, 4, None);
        let tail = forward_stack(&layers, &x[8..], 1, 2, Some(head.final_states()));
        for (a, b) in whole.last_hidden().iter().zip(tail.last_hidden()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    use rand::SeedableRng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let layers = vec![LstmLayer::<f64>::init(2, 3, &mut rng), LstmLayer::init(3, 2, &mut rng)];
        let (batch, steps) = (2, 3);
        let x: Vec<f64> = (0..batch * steps * 2).map(|i| (i as f64 * 0.71).cos()).collect();
        let init = vec![
            LayerState { h: vec![0.1, -0.2, 0.3, 0.0, 0.2, 0.1], c: vec![0.05, 0.1, -0.1, 0.2, 0.0, 0.3] },
            LayerState { h: vec![0.2, -0.1, 0.1, 0.4], c: vec![-0.3, 0.1, 0.2, 0.0] },
        ];
        // objective: weighted sum of last hidden + final cell of layer 0
        let wl: Vec<f64> = (0..batch * 2).map(|i| 0.3 + i as f64 * 0.2).collect();
        let wc: Vec<f64> = (0..batch * 3).map(|i| 0.5 - i as f64 * 0.1).collect();
        let objective = |ls: &[LstmLayer<f64>], init: &[LayerState<f64>]| {
            let tr = forward_stack(ls, &x, batch, steps, Some(init.to_vec()));
            let a: f64 = tr.last_hidden().iter().zip(&wl).map(|(h, w)| h * w).sum();
            let b: f64 = tr.final_states()[0].c.iter().zip(&wc).map(|(c, w)| c * w).sum();
            a + b
        };

        let tr = forward_stack(&layers, &x, batch, steps, Some(init.clone()));
        let mut grads: Vec<_> = layers.iter().map(|l| LstmLayer::zeros(l.input, l.hidden)).collect();
        let d_final = vec![LayerState { h: vec![0.0; 6], c: wc.clone() }, LayerState::zeros(batch, 2)];
        let d_init = backward_stack(&layers, &tr, Some(&wl), Some(&d_final), &mut grads);

        let eps = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * eps);
            assert!((analytic - fd).abs() < 1e-8 * (1.0 + fd.abs()), "analytic {analytic} vs fd {fd}");
        };
        for l in 0..2 {
            for k in 0..layers[l].w_hh.len() {
                let mut p = layers.clone();
                p[l].w_hh[k] += eps;
                let mut m = layers.clone();
                m[l].w_hh[k] -= eps;
                check(grads[l].w_hh[k], objective(&p, &init), objective(&m, &init));
            }
            for k in 0..layers[l].w_ih.len() {
                let mut p = layers.clone();
                p[l].w_ih[k] += eps;
                let mut m = layers.clone();
                m[l].w_ih[k] -= eps;
                check(grads[l].w_ih[k], objective(&p, &init), objective(&m, &init));
            }
            for k in 0..init[l].c.len() {
                let mut p = init.clone();
                p[l].c[k] += eps;
                let mut m = init.clone();
                m[l].c[k] -= eps;
                check(d_init[l].c[k], objective(&layers, &p), objective(&layers, &m));
                let mut p = init.clone();
                p[l].h[k] += eps;
                let mut m = init.clone();
                m[l].h[k] -= eps;
                check(d_init[l].h[k], objective(&layers, &p), objective(&layers, &m));
            }
        }
    }
}
