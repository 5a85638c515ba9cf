//! Small post-norm transformer encoder with MLM and classification heads.

pub mod batch;
pub mod config;
pub mod forward;
pub mod gradcheck;
pub mod io;
pub mod params;

pub use batch::{TokenBatch, CLS, MASK, NUM_RESERVED, PAD, SEP, UNK};
pub use config::ModelConfig;
pub use forward::{
    embed, forward, hidden_states, input_gradient, value_and_grad, ForwardOutput, Gradients, Head,
    HiddenStates, ScalarFn, Substitution,
};
pub use gradcheck::{gradient_check, gradient_check_against, GradCheckOptions, GradCheckReport};
pub use params::{ParamGroup, Parameters};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Classify,
    Mlm,
}

/// Batch forward: one [`ForwardOutput`] per row, in row order.
///
/// `offsets`, when given, holds one `len_i × d_model` matrix per row. In MLM
/// mode the batch must carry mask positions.
pub fn forward_batch(
    params: &Parameters,
    batch: &TokenBatch,
    mode: Mode,
    offsets: Option<&[Matrix]>,
    substitution: Option<(usize, &[Matrix])>,
    exec: Exec,
) -> Result<Vec<ForwardOutput>> {
    if let Some(o) = offsets {
        if o.len() != batch.len() {
            return Err(Error::input("one offset matrix per row required"));
        }
    }
    if let Some((_, reps)) = substitution {
        if reps.len() != batch.len() {
            return Err(Error::input("one substitution matrix per row required"));
        }
    }
    let masks = match mode {
        Mode::Mlm => Some(
            batch
                .masks
                .as_ref()
                .ok_or_else(|| Error::input("MLM forward needs mask positions"))?,
        ),
        Mode::Classify => None,
    };
    let results = exec.map_range(batch.len(), |i| {
        let positions: Vec<usize> = masks.map(|m| m[i].iter().map(|&(p, _)| p).collect()).unwrap_or_default();
        let head = match mode {
            Mode::Classify => Head::Classify,
            Mode::Mlm => Head::Mlm(&positions),
        };
        let sub = substitution.map(|(layer, reps)| Substitution {
            layer,
            replacement: &reps[i],
        });
        forward(params, batch.row(i), head, offsets.map(|o| &o[i]), sub)
    });
    results.into_iter().collect()
}
