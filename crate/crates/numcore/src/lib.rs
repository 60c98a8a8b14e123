//! Numeric kernel of the hseq translation engine: dense tensors, a
//! reverse-mode autodiff tape, LSTM cells, SGD with step decay, gradient
//! checking and the binary checkpoint format.

mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod lstm;
mod optim;
mod param;
mod scalar;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use error::{NumError, Result};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, Stencil};
pub use graph::{softmax, Gradients, Graph, Var};
pub use lstm::{lstm_cell, BoundLstm, LstmCellParams, LstmCellState, LstmCellWeights, LstmState};
pub use optim::{clip_global_norm, clip_store_grads, lr_at_step, sgd_step, SgdSchedule};
pub use param::{check_compatible, ParamId, ParamStore, Parameter};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
