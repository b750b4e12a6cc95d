//! The hierarchical network: a shared recurrent backbone read twice (full
//! window for the task branch, masked window for the action branch), two
//! perceptron encoders, a task softmax head and a task-conditioned action
//! softmax head.

mod dense;
mod lstm;
mod mask;
mod network;

pub use dense::Mlp;
pub use lstm::{backward_stack, forward_stack, LayerState, LstmLayer, StackTrace};
pub use mask::{mask, MaskVector};
pub use network::{classify_action, classify_task, ArchConfig, BatchOutput, ForwardOutput, Network, TensorView, Trace};
