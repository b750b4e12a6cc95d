//! Sliding windows, normalization, demonstration-level splits, the
//! optimization loop and checkpoint persistence.

mod checkpoint;
mod config;
mod fit;
mod normalize;
mod optim;
mod split;
mod windows;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest, TensorEntry, MANIFEST_FILE, WEIGHTS_FILE};
pub use config::TrainConfig;
pub use fit::{
    prepare, train, train_on_dataset, training_class_weights, EpochRecord, History, ModelParams, Predictions, Predictor,
    PreparedData, TrainRun, INFERENCE_BATCH,
};
pub use normalize::{apply_normalizer, fit_normalizer, NormalizedDemo, Normalizer, STD_FLOOR};
pub use optim::Adam;
pub use split::{check_fractions, split_dataset, Split};
pub use windows::{fill_window, make_windows, Window, WindowBatch, WindowSet};
