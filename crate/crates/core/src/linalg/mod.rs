//! Dense matrix arithmetic and layer stacks with exact reverse-mode gradients.

pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport, ParamCheck, Perturbable};
pub use layers::{Activation, BatchNorm, Dense, Layer, LayerSpec, MaskSource, Mode, Stack, Tape};
pub use tensor::{elementwise, sigmoid, Elementwise, Tensor2};
