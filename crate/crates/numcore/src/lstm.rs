//! LSTM cell with gates laid out as `[input | forget | cell | output]`.

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameter handles of one LSTM cell: `W_ih: [in, 4H]`, `W_hh: [H, 4H]`,
/// `b: [4H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCellParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCellParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            w_ih: store.add_zeros(format!("{prefix}/W_ih"), &[input_dim, 4 * hidden_dim])?,
            w_hh: store.add_zeros(format!("{prefix}/W_hh"), &[hidden_dim, 4 * hidden_dim])?,
            bias: store.add_zeros(format!("{prefix}/b"), &[4 * hidden_dim])?,
            input_dim,
            hidden_dim,
        })
    }

    /// Looks up an already registered cell.
    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let w_ih = store.id(&format!("{prefix}/W_ih"))?;
        let w_hh = store.id(&format!("{prefix}/W_hh"))?;
        let bias = store.id(&format!("{prefix}/b"))?;
        let shape = store.value(w_ih).shape();
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input_dim: shape[0],
            hidden_dim: shape[1] / 4,
        })
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> BoundLstm {
        BoundLstm {
            w_ih: g.param(store, self.w_ih),
            w_hh: g.param(store, self.w_hh),
            bias: g.param(store, self.bias),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// A cell whose weights have been recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
    pub hidden_dim: usize,
}

/// Recurrent state on a graph, `h` and `c` both `[B, H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Scalar>(g: &mut Graph<T>, batch: usize, hidden_dim: usize) -> Self {
        let h = g.constant(Tensor::zeros(&[batch, hidden_dim]));
        let c = g.constant(Tensor::zeros(&[batch, hidden_dim]));
        Self { h, c }
    }
}

impl BoundLstm {
    /// One recurrence step for a `[B, in]` input.
    pub fn step<T: Scalar>(&self, g: &mut Graph<T>, x: Var, state: LstmState) -> Result<LstmState> {
        let hd = self.hidden_dim;
        if g.shape(state.h) != g.shape(state.c) {
            return Err(NumError::Shape {
                op: "lstm_cell state",
                left: g.shape(state.h).to_vec(),
                right: g.shape(state.c).to_vec(),
            });
        }
        if g.shape(state.h).last() != Some(&hd) {
            return Err(NumError::Shape {
                op: "lstm_cell state",
                left: g.shape(state.h).to_vec(),
                right: g.shape(self.w_hh).to_vec(),
            });
        }
        let xw = g.matmul(x, self.w_ih)?;
        let hw = g.matmul(state.h, self.w_hh)?;
        let pre = g.add(xw, hw)?;
        let z = g.add_bias(pre, self.bias)?;
        let zi = g.slice_cols(z, 0, hd)?;
        let zf = g.slice_cols(z, hd, hd)?;
        let zg = g.slice_cols(z, 2 * hd, hd)?;
        let zo = g.slice_cols(z, 3 * hd, hd)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let cand = g.tanh(zg);
        let o = g.sigmoid(zo);
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

/// Plain-value LSTM state of a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

/// Weights of a single cell held by value.
#[derive(Clone, Debug)]
pub struct LstmCellWeights<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Eager single step: `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_cell<T: Scalar>(
    x: &[T],
    state: &LstmCellState<T>,
    weights: &LstmCellWeights<T>,
) -> Result<LstmCellState<T>> {
    if state.h.len() != state.c.len() {
        return Err(NumError::Shape {
            op: "lstm_cell state",
            left: vec![state.h.len()],
            right: vec![state.c.len()],
        });
    }
    let hidden_dim = weights.w_hh.shape()[0];
    let mut g = Graph::new();
    let xv = g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
    let h = g.constant(Tensor::new(vec![1, state.h.len()], state.h.clone())?);
    let c = g.constant(Tensor::new(vec![1, state.c.len()], state.c.clone())?);
    let cell = BoundLstm {
        w_ih: g.constant(weights.w_ih.clone()),
        w_hh: g.constant(weights.w_hh.clone()),
        bias: g.constant(weights.bias.clone()),
        hidden_dim,
    };
    let next = cell.step(&mut g, xv, LstmState { h, c })?;
    Ok(LstmCellState {
        h: g.value(next.h).data().to_vec(),
        c: g.value(next.c).data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(input: usize, hidden: usize, w: f64, u: f64, b: f64) -> LstmCellWeights<f64> {
        LstmCellWeights {
            w_ih: Tensor::filled(&[input, 4 * hidden], w),
            w_hh: Tensor::filled(&[hidden, 4 * hidden], u),
            bias: Tensor::filled(&[4 * hidden], b),
        }
    }

    #[test]
    fn zero_params_zero_state_is_fixed_point() {
        let s = LstmCellState {
            h: vec![0.0; 3],
            c: vec![0.0; 3],
        };
        let out = lstm_cell(&[0.3, -1.2], &s, &weights(2, 3, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(out.h, vec![0.0; 3]);
        assert_eq!(out.c, vec![0.0; 3]);
    }

    #[test]
    fn unit_weights_zero_input_stays_zero() {
        let s = LstmCellState {
            h: vec![0.0],
            c: vec![0.0],
        };
        let out = lstm_cell(&[0.0], &s, &weights(1, 1, 1.0, 1.0, 0.0)).unwrap();
        assert_eq!(out.h, vec![0.0]);
        assert_eq!(out.c, vec![0.0]);
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // Every gate pre-activation is x*W + h*U + b = 1.
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let c_want = sig(1.0) * 1f64.tanh();
        let h_want = sig(1.0) * c_want.tanh();
        assert!((c_want - 0.55677).abs() < 5e-6);
        assert!((h_want - 0.36961).abs() < 5e-6);

        let s = LstmCellState {
            h: vec![0.0],
            c: vec![0.0],
        };
        let out = lstm_cell(&[1.0], &s, &weights(1, 1, 1.0, 1.0, 0.0)).unwrap();
        assert!((out.c[0] - c_want).abs() < 1e-12, "{}", out.c[0]);
        assert!((out.h[0] - h_want).abs() < 1e-12, "{}", out.h[0]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = LstmCellState {
            h: vec![0.0; 2],
            c: vec![0.0; 2],
        };
        let err = lstm_cell(&[1.0, 2.0, 3.0], &s, &weights(2, 2, 0.1, 0.1, 0.0)).unwrap_err();
        assert!(matches!(err, NumError::Shape { .. }), "{err}");
        let s = LstmCellState {
            h: vec![0.0; 2],
            c: vec![0.0; 3],
        };
        assert!(lstm_cell(&[1.0, 2.0], &s, &weights(2, 2, 0.1, 0.1, 0.0)).is_err());
    }
}
