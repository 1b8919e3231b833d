use rand::Rng;

use super::params::{Init, ParamSet};
use super::tape::{column_max, masked_max, LstmParams, NodeId, Tape};
use crate::error::{Error, Result};

const GATES: [&str; 4] = ["i", "f", "g", "o"];

impl LstmParams {
    /// Registers `{prefix}.W_{i,f,g,o}` and `{prefix}.b_{i,f,g,o}`.
    ///
    /// Weights and biases are uniform in `±1/sqrt(input + hidden)`, except the
    /// forget-gate bias which starts at 1.
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = input + hidden;
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for g in GATES {
            weights.push(params.add(
                &format!("{prefix}.W_{g}"),
                vec![hidden, fan_in],
                Init::Uniform { fan_in },
                rng,
            )?);
        }
        for g in GATES {
            let init = if g == "f" {
                Init::Constant(1.0)
            } else {
                Init::Uniform { fan_in }
            };
            biases.push(params.add(&format!("{prefix}.b_{g}"), vec![hidden], init, rng)?);
        }
        Ok(LstmParams {
            input,
            hidden,
            weights: weights.try_into().expect("four gates"),
            biases: biases.try_into().expect("four gates"),
        })
    }

    /// Looks up an already-registered cell by prefix.
    pub fn lookup(params: &ParamSet, prefix: &str) -> Result<Self> {
        let get = |n: String| {
            params
                .id(&n)
                .ok_or_else(|| Error::Config(format!("missing parameter `{n}`")))
        };
        let mut weights = Vec::with_capacity(4);
        let mut biases = Vec::with_capacity(4);
        for g in GATES {
            weights.push(get(format!("{prefix}.W_{g}"))?);
            biases.push(get(format!("{prefix}.b_{g}"))?);
        }
        let w = params.value(weights[0]);
        let hidden = w.rows();
        let input = w
            .cols()
            .checked_sub(hidden)
            .ok_or_else(|| Error::shape(format!("{prefix}.W_i has fewer columns than rows")))?;
        Ok(LstmParams {
            input,
            hidden,
            weights: weights.try_into().expect("four gates"),
            biases: biases.try_into().expect("four gates"),
        })
    }
}

/// Forward and backward cells of a bidirectional LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmParams::register(params, &format!("{prefix}.fwd"), input, hidden, rng)?,
            backward: LstmParams::register(params, &format!("{prefix}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn lookup(params: &ParamSet, prefix: &str) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmParams::lookup(params, &format!("{prefix}.fwd"))?,
            backward: LstmParams::lookup(params, &format!("{prefix}.bwd"))?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// The same weights with the two directions exchanged.
    pub fn swapped(&self) -> Self {
        BiLstmParams {
            forward: self.backward,
            backward: self.forward,
        }
    }
}

/// Hidden and cell state handles after one LSTM step.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden: usize) -> Self {
        let z = tape.input(vec![0.0; hidden]);
        LstmState { h: z, c: z }
    }
}

/// Standard LSTM update: sigmoid input/forget/output gates, tanh candidate,
/// `c' = f∘c + i∘g`, `h' = o∘tanh(c')`.
pub fn lstm_cell_forward(
    tape: &mut Tape,
    params: &ParamSet,
    cell: &LstmParams,
    x: NodeId,
    state: LstmState,
) -> Result<LstmState> {
    let joint = tape.lstm(params, cell, x, state.h, state.c)?;
    let h = tape.slice(joint, 0, cell.hidden)?;
    let c = tape.slice(joint, cell.hidden, cell.hidden)?;
    Ok(LstmState { h, c })
}

/// Runs both directions from zero state; row `t` is `[h_fwd(t); h_bwd(t)]`.
pub fn bilstm_sequence(
    tape: &mut Tape,
    params: &ParamSet,
    cells: &BiLstmParams,
    inputs: &[NodeId],
) -> Result<Vec<NodeId>> {
    if inputs.is_empty() {
        return Err(Error::EmptySequence("bi-LSTM input"));
    }
    let n = inputs.len();
    let mut fwd = Vec::with_capacity(n);
    let mut state = LstmState::zeros(tape, cells.forward.hidden);
    for &x in inputs {
        state = lstm_cell_forward(tape, params, &cells.forward, x, state)?;
        fwd.push(state.h);
    }
    let mut bwd = vec![fwd[0]; n];
    let mut state = LstmState::zeros(tape, cells.backward.hidden);
    for t in (0..n).rev() {
        state = lstm_cell_forward(tape, params, &cells.backward, inputs[t], state)?;
        bwd[t] = state.h;
    }
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect()
}

/// Column maxima of the given rows and the smallest row index attaining each.
pub fn elementwise_max_pool(tape: &mut Tape, rows: &[NodeId]) -> Result<(NodeId, Vec<usize>)> {
    tape.max_pool(rows)
}

/// Tape-free max-pool over plain rows.
pub fn max_pool_rows(rows: &[&[f64]]) -> Result<(Vec<f64>, Vec<usize>)> {
    if rows.is_empty() {
        return Err(Error::EmptyPool);
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::shape("max-pool rows of unequal length"));
    }
    Ok(column_max(rows))
}

/// Softmax over the unmasked entries; masked entries get probability 0.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::shape(format!(
            "{} scores with a mask of {}",
            scores.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::NoValidAction);
    }
    let max = masked_max(scores, mask);
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(out)
}
