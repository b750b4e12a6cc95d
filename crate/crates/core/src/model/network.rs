use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dense::{Mlp, MlpTrace};
use super::lstm::{backward_stack, forward_stack, LayerState, LstmLayer, StackTrace};
use super::mask::MaskVector;
use crate::error::{Error, Result};
use crate::linalg::{argmax, gemm, softmax_into, Layout, Real};

/// Shapes of the hierarchical network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub n_tasks: usize,
    pub n_actions: usize,
    /// Window length `L` seen by the task branch.
    pub window: usize,
    /// Trailing frames `L1` seen by the action branch.
    pub visible: usize,
    /// When set the action head reads `X_A ⊕ X_T`; otherwise `X_A` alone.
    pub conditioned: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_dim: crate::datagen::N_FEATURES,
            hidden: 128,
            layers: 2,
            encoder_hidden: 64,
            embed_dim: 64,
            n_tasks: 6,
            n_actions: 21,
            window: 35,
            visible: 10,
            conditioned: true,
        }
    }
}

impl ArchConfig {
    pub fn mask(&self) -> MaskVector {
        MaskVector::for_window(self.window, self.visible).expect("validated arch")
    }

    pub fn action_head_width(&self) -> usize {
        if self.conditioned {
            2 * self.embed_dim
        } else {
            self.embed_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("encoder_hidden", self.encoder_hidden),
            ("embed_dim", self.embed_dim),
            ("n_tasks", self.n_tasks),
            ("n_actions", self.n_actions),
            ("window", self.window),
            ("visible", self.visible),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("architecture field `{name}` must be positive")));
        }
        if self.visible > self.window {
            return Err(Error::Config("visible length exceeds window length".into()));
        }
        Ok(())
    }
}

/// All trainable weights: backbone `θ_r`, encoders `θ_T`/`θ_A`, heads `W_T`/`W_A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<R> {
    pub arch: ArchConfig,
    pub backbone: Vec<LstmLayer<R>>,
    pub task_encoder: Mlp<R>,
    pub action_encoder: Mlp<R>,
    /// `m × embed_dim`, no bias.
    pub task_head: Vec<R>,
    /// `n × action_head_width`, no bias.
    pub action_head: Vec<R>,
}

/// Name, shape and values of one parameter tensor.
pub struct TensorView<'a, R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [R],
}

/// Posteriors and embeddings for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<R> {
    pub task_probs: Vec<R>,
    pub action_probs: Vec<R>,
    pub task_embed: Vec<R>,
    pub action_embed: Vec<R>,
    /// Action-head input: `X_A ⊕ X_T` (or `X_A` for the unconditioned head).
    pub concat: Vec<R>,
    pub task: usize,
    pub action: usize,
}

/// Row-major batch results.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput<R> {
    pub batch: usize,
    pub n_tasks: usize,
    pub n_actions: usize,
    pub task_probs: Vec<R>,
    pub action_probs: Vec<R>,
    pub task_embed: Vec<R>,
    pub action_embed: Vec<R>,
    pub head_input: Vec<R>,
}

impl<R: Real> BatchOutput<R> {
    pub fn task_row(&self, i: usize) -> &[R] {
        &self.task_probs[i * self.n_tasks..(i + 1) * self.n_tasks]
    }

    pub fn action_row(&self, i: usize) -> &[R] {
        &self.action_probs[i * self.n_actions..(i + 1) * self.n_actions]
    }

    pub fn predicted_task(&self, i: usize) -> usize {
        argmax(self.task_row(i))
    }

    pub fn predicted_action(&self, i: usize) -> usize {
        argmax(self.action_row(i))
    }

    pub fn row(&self, i: usize) -> ForwardOutput<R> {
        let e = self.task_embed.len() / self.batch;
        let w = self.head_input.len() / self.batch;
        ForwardOutput {
            task_probs: self.task_row(i).to_vec(),
            action_probs: self.action_row(i).to_vec(),
            task_embed: self.task_embed[i * e..(i + 1) * e].to_vec(),
            action_embed: self.action_embed[i * e..(i + 1) * e].to_vec(),
            concat: self.head_input[i * w..(i + 1) * w].to_vec(),
            task: self.predicted_task(i),
            action: self.predicted_action(i),
        }
    }
}

/// Forward intermediates kept for [`Network::backward`].
pub struct Trace<R> {
    batch: usize,
    full: StackTrace<R>,
    prefix: Option<StackTrace<R>>,
    suffix: StackTrace<R>,
    task_enc: MlpTrace<R>,
    action_enc: MlpTrace<R>,
}

/// Softmax regression over rows of `x` (`batch × width`) with weights `w` (`classes × width`).
fn head<R: Real>(x: &[R], w: &[R], batch: usize, width: usize, classes: usize) -> Vec<R> {
    let mut logits = vec![R::zero(); batch * classes];
    gemm(batch, width, classes, R::one(), x, Layout::rows(width), w, Layout::transposed(width), R::zero(), &mut logits, Layout::rows(classes));
    let mut probs = vec![R::zero(); batch * classes];
    for (l, p) in logits.chunks_exact(classes).zip(probs.chunks_exact_mut(classes)) {
        softmax_into(l, p);
    }
    probs
}

/// Task posterior `ỹ_T = softmax(W_T X_T)` for one embedding.
pub fn classify_task<R: Real>(task_embed: &[R], task_head: &[R]) -> Result<Vec<R>> {
    let width = task_embed.len();
    if width == 0 || task_head.len() % width != 0 {
        return Err(Error::shape(format!(
            "task head of {} weights does not fit an embedding of {width}",
            task_head.len()
        )));
    }
    Ok(head(task_embed, task_head, 1, width, task_head.len() / width))
}

/// Action posterior `ỹ_A = softmax(W_A (X_A ⊕ X_T))` for one pair of embeddings.
pub fn classify_action<R: Real>(action_embed: &[R], task_embed: &[R], action_head: &[R], n_actions: usize) -> Result<Vec<R>> {
    let width = action_embed.len() + task_embed.len();
    if n_actions == 0 || action_head.len() != n_actions * width {
        return Err(Error::shape(format!(
            "action head holds {} weights, expected {n_actions} × {width}",
            action_head.len()
        )));
    }
    let concat: Vec<R> = action_embed.iter().chain(task_embed).copied().collect();
    Ok(head(&concat, action_head, 1, width, n_actions))
}

impl<R: Real> Network<R> {
    pub fn zeros(arch: ArchConfig) -> Self {
        let mut backbone = Vec::with_capacity(arch.layers);
        for l in 0..arch.layers {
            let input = if l == 0 { arch.input_dim } else { arch.hidden };
            backbone.push(LstmLayer::zeros(input, arch.hidden));
        }
        Network {
            task_encoder: Mlp::zeros(arch.hidden, arch.encoder_hidden, arch.embed_dim),
            action_encoder: Mlp::zeros(arch.hidden, arch.encoder_hidden, arch.embed_dim),
            task_head: vec![R::zero(); arch.n_tasks * arch.embed_dim],
            action_head: vec![R::zero(); arch.n_actions * arch.action_head_width()],
            backbone,
            arch,
        }
    }

    /// Random initialization; identical seeds give identical weights.
    pub fn init(arch: ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(arch);
        for layer in net.backbone.iter_mut() {
            *layer = LstmLayer::init(layer.input, layer.hidden, &mut rng);
        }
        let a = &net.arch;
        net.task_encoder = Mlp::init(a.hidden, a.encoder_hidden, a.embed_dim, &mut rng);
        net.action_encoder = Mlp::init(a.hidden, a.encoder_hidden, a.embed_dim, &mut rng);
        let bound_t = 1.0 / (a.embed_dim as f64).sqrt();
        let bound_a = 1.0 / (a.action_head_width() as f64).sqrt();
        use rand::Rng;
        for w in net.task_head.iter_mut() {
            *w = R::of(rng.random_range(-bound_t..bound_t));
        }
        for w in net.action_head.iter_mut() {
            *w = R::of(rng.random_range(-bound_a..bound_a));
        }
        net
    }

    /// Parameter tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<TensorView<'_, R>> {
        fn view<'a, R>(name: String, shape: Vec<usize>, data: &'a [R]) -> TensorView<'a, R> {
            TensorView { name, shape, data }
        }
        let mut out = Vec::new();
        for (l, layer) in self.backbone.iter().enumerate() {
            let g4 = 4 * layer.hidden;
            out.push(view(format!("backbone.{l}.w_ih"), vec![g4, layer.input], &layer.w_ih));
            out.push(view(format!("backbone.{l}.w_hh"), vec![g4, layer.hidden], &layer.w_hh));
            out.push(view(format!("backbone.{l}.bias"), vec![g4], &layer.bias));
        }
        for (name, mlp) in [("task_encoder", &self.task_encoder), ("action_encoder", &self.action_encoder)] {
            out.push(view(format!("{name}.w1"), vec![mlp.hidden, mlp.input], &mlp.w1));
            out.push(view(format!("{name}.b1"), vec![mlp.hidden], &mlp.b1));
            out.push(view(format!("{name}.w2"), vec![mlp.output, mlp.hidden], &mlp.w2));
            out.push(view(format!("{name}.b2"), vec![mlp.output], &mlp.b2));
        }
        out.push(view("task_head".into(), vec![self.arch.n_tasks, self.arch.embed_dim], &self.task_head));
        out.push(view("action_head".into(), vec![self.arch.n_actions, self.arch.action_head_width()], &self.action_head));
        out
    }

    /// Mutable parameter slices in the same order as [`Network::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [R]> {
        let mut out: Vec<&mut [R]> = Vec::new();
        for layer in self.backbone.iter_mut() {
            out.push(&mut layer.w_ih);
            out.push(&mut layer.w_hh);
            out.push(&mut layer.bias);
        }
        for mlp in [&mut self.task_encoder, &mut self.action_encoder] {
            out.push(&mut mlp.w1);
            out.push(&mut mlp.b1);
            out.push(&mut mlp.w2);
            out.push(&mut mlp.b2);
        }
        out.push(&mut self.task_head);
        out.push(&mut self.action_head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Converts every weight to another float type.
    pub fn cast<S: Real>(&self) -> Network<S> {
        let mut out = Network::<S>::zeros(self.arch.clone());
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d = S::of(s.to_f64_lossy());
            }
        }
        out
    }

    /// Latent `X_r`: the top layer's hidden state after the last of `steps` rows.
    pub fn encode_backbone(&self, x: &[R], steps: usize) -> Result<Vec<R>> {
        self.check_input(x, 1, steps)?;
        Ok(forward_stack(&self.backbone, x, 1, steps, None).last_hidden())
    }

    /// Backbone state after running over an all-zero masked prefix, which is
    /// the same for every window. `None` when nothing is masked.
    pub fn masked_prefix(&self, mask: &MaskVector) -> Option<Vec<LayerState<R>>> {
        (mask.masked() > 0).then(|| self.prefix_trace(mask).final_states())
    }

    fn prefix_trace(&self, mask: &MaskVector) -> StackTrace<R> {
        let zeros = vec![R::zero(); mask.masked() * self.arch.input_dim];
        forward_stack(&self.backbone, &zeros, 1, mask.masked(), None)
    }

    /// `(X_T, X_A)` for one window under an arbitrary mask.
    pub fn embed_hierarchical(&self, x: &[R], mask: &MaskVector) -> Result<(Vec<R>, Vec<R>)> {
        let (out, _) = self.run(x, 1, mask, None, false)?;
        Ok((out.task_embed, out.action_embed))
    }

    /// Full pipeline on one `L × F` window using the architecture's mask.
    pub fn forward(&self, x: &[R]) -> Result<ForwardOutput<R>> {
        Ok(self.forward_batch(x, 1)?.row(0))
    }

    /// Forward over `batch` windows stored back to back.
    pub fn forward_batch(&self, windows: &[R], batch: usize) -> Result<BatchOutput<R>> {
        Ok(self.run(windows, batch, &self.arch.mask(), None, false)?.0)
    }

    /// Like [`Network::forward_batch`] with a prefix state from [`Network::masked_prefix`].
    pub fn forward_batch_with_prefix(&self, windows: &[R], batch: usize, prefix: Option<&[LayerState<R>]>) -> Result<BatchOutput<R>> {
        Ok(self.run(windows, batch, &self.arch.mask(), prefix, false)?.0)
    }

    /// Forward that also returns the trace needed for [`Network::backward`].
    pub fn forward_train(&self, windows: &[R], batch: usize) -> Result<(BatchOutput<R>, Trace<R>)> {
        let (out, trace) = self.run(windows, batch, &self.arch.mask(), None, true)?;
        Ok((out, trace.expect("trace requested")))
    }

    fn check_input(&self, x: &[R], batch: usize, steps: usize) -> Result<()> {
        let expected = batch * steps * self.arch.input_dim;
        if batch == 0 || x.len() != expected {
            return Err(Error::shape(format!(
                "input has {} values, expected {batch} × {steps} × {}",
                x.len(),
                self.arch.input_dim
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let per = steps * self.arch.input_dim;
            return Err(Error::Numeric(format!(
                "non-finite input at window {} frame {} feature {}",
                pos / per,
                (pos % per) / self.arch.input_dim,
                pos % self.arch.input_dim
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        windows: &[R],
        batch: usize,
        mask: &MaskVector,
        prefix: Option<&[LayerState<R>]>,
        keep_trace: bool,
    ) -> Result<(BatchOutput<R>, Option<Trace<R>>)> {
        let a = &self.arch;
        let (len, f) = (mask.len(), a.input_dim);
        self.check_input(windows, batch, len)?;

        let full = forward_stack(&self.backbone, windows, batch, len, None);
        let latent_full = full.last_hidden();

        // Masked branch: the hidden prefix is all zeros, so its state is shared by
        // every window; only the visible suffix is run per window.
        let visible = mask.visible();
        let mut suffix_x = Vec::with_capacity(batch * visible * f);
        for w in windows.chunks_exact(len * f) {
            suffix_x.extend_from_slice(&w[mask.masked() * f..]);
        }
        let (prefix_trace, init) = if mask.masked() == 0 {
            (None, None)
        } else if let (Some(p), false) = (prefix, keep_trace) {
            (None, Some(p.iter().map(|s| s.broadcast(batch)).collect()))
        } else {
            let tr = self.prefix_trace(mask);
            let init = tr.final_states().iter().map(|s| s.broadcast(batch)).collect();
            (Some(tr), Some(init))
        };
        let suffix = forward_stack(&self.backbone, &suffix_x, batch, visible, init);
        let latent_masked = suffix.last_hidden();

        let (task_embed, task_enc) = self.task_encoder.forward(&latent_full, batch);
        let (action_embed, action_enc) = self.action_encoder.forward(&latent_masked, batch);

        let e = a.embed_dim;
        let head_input = if a.conditioned {
            let mut cat = Vec::with_capacity(batch * 2 * e);
            for (xa, xt) in action_embed.chunks_exact(e).zip(task_embed.chunks_exact(e)) {
                cat.extend_from_slice(xa);
                cat.extend_from_slice(xt);
            }
            cat
        } else {
            action_embed.clone()
        };
        let task_probs = head(&task_embed, &self.task_head, batch, e, a.n_tasks);
        let action_probs = head(&head_input, &self.action_head, batch, a.action_head_width(), a.n_actions);

        let out = BatchOutput {
            batch,
            n_tasks: a.n_tasks,
            n_actions: a.n_actions,
            task_probs,
            action_probs,
            task_embed,
            action_embed,
            head_input,
        };
        let trace = keep_trace.then(|| Trace {
            batch,
            full,
            prefix: prefix_trace,
            suffix,
            task_enc,
            action_enc,
        });
        Ok((out, trace))
    }

    /// Accumulates into `grads` the gradient of a loss whose derivatives with
    /// respect to the task and action logits are given (`B × m`, `B × n`).
    pub fn backward(&self, out: &BatchOutput<R>, trace: &Trace<R>, d_task_logits: &[R], d_action_logits: &[R], grads: &mut Network<R>) {
        let a = &self.arch;
        let (b, e, w) = (trace.batch, a.embed_dim, a.action_head_width());
        let one = R::one();

        gemm(a.n_tasks, b, e, one, d_task_logits, Layout::transposed(a.n_tasks), &out.task_embed, Layout::rows(e), one, &mut grads.task_head, Layout::rows(e));
        let mut d_task_embed = vec![R::zero(); b * e];
        gemm(b, a.n_tasks, e, one, d_task_logits, Layout::rows(a.n_tasks), &self.task_head, Layout::rows(e), R::zero(), &mut d_task_embed, Layout::rows(e));

        gemm(a.n_actions, b, w, one, d_action_logits, Layout::transposed(a.n_actions), &out.head_input, Layout::rows(w), one, &mut grads.action_head, Layout::rows(w));
        let mut d_head_in = vec![R::zero(); b * w];
        gemm(b, a.n_actions, w, one, d_action_logits, Layout::rows(a.n_actions), &self.action_head, Layout::rows(w), R::zero(), &mut d_head_in, Layout::rows(w));

        let mut d_action_embed = Vec::with_capacity(b * e);
        for (i, row) in d_head_in.chunks_exact(w).enumerate() {
            d_action_embed.extend_from_slice(&row[..e]);
            if a.conditioned {
                for (d, x) in d_task_embed[i * e..(i + 1) * e].iter_mut().zip(&row[e..]) {
                    *d += *x;
                }
            }
        }

        let d_latent_full = self.task_encoder.backward(&trace.task_enc, &d_task_embed, b, &mut grads.task_encoder);
        let d_latent_masked = self.action_encoder.backward(&trace.action_enc, &d_action_embed, b, &mut grads.action_encoder);

        backward_stack(&self.backbone, &trace.full, Some(&d_latent_full), None, &mut grads.backbone);
        let d_init = backward_stack(&self.backbone, &trace.suffix, Some(&d_latent_masked), None, &mut grads.backbone);
        if let Some(prefix) = &trace.prefix {
            let d_final: Vec<LayerState<R>> = d_init.iter().map(|s| s.sum_rows(a.hidden)).collect();
            backward_stack(&self.backbone, prefix, None, Some(&d_final), &mut grads.backbone);
        }
    }
}
