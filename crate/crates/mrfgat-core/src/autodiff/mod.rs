//! Reverse-mode automatic differentiation: dense tensors, a flat tape,
//! parameter storage, the Adam optimizer, and finite-difference gradient
//! checking.

mod matmul;

pub mod adam;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    format_block_reports, grad_check, grad_check_param_blocks, overall_max_rel_err, BlockReport,
    GradCheckReport,
};
pub use params::{BnStats, ParamId, ParamStore, Parameter};
pub use tape::{Activation, Tape, Var};
pub use tensor::Tensor;
