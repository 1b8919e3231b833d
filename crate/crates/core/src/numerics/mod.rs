//! Dense values, reverse-mode differentiation, and the LSTM / pooling /
//! softmax primitives the model is built from.

mod nn;
mod params;
mod tape;
mod tensor;

pub use nn::{
    bilstm_sequence, elementwise_max_pool, lstm_cell_forward, masked_softmax, max_pool_rows,
    BiLstmParams, LstmState,
};
pub use params::{to_f32_grid, Init, ParamId, ParamSet};
pub use tape::{LstmParams, NodeId, Tape};
pub use tensor::Tensor;

/// Accumulates `d loss / d param` for every parameter into `params`.
pub fn backward(tape: &Tape, loss: NodeId, params: &mut ParamSet) -> crate::Result<()> {
    tape.backward(loss, params)
}
