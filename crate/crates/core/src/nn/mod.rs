//! Feed-forward classifiers with masked weights, trained by mini-batch SGD.

mod arch;
mod check;
mod io;
mod model;
mod train;

pub use arch::{ArchitectureSpec, LayerSpec, ParamGeometry, Shape};
pub use check::numerical_gradient;
pub use io::{decode_model, encode_model, load_model, save_model, MAGIC};
pub use model::{Batch, GradientSet, Model, ParamLayer};
pub use train::{evaluate, full_gradient, train, EpochRecord, Schedule, TrainConfig};
