//! Stacked LSTM encoder with a bidirectional bottom layer and residual
//! connections on the upper layers.
//!
//! The encoder produces a two-part memory: the top-layer annotations and the
//! raw source embeddings. Attention scores read both, the context vector
//! sums annotations only.

use hseq_numcore::{BoundLstm, Graph, LstmState, ParamStore, Scalar, Tensor, Var};

use crate::corpus::PAD;
use crate::error::{HseqError, Result};
use crate::network::{EncoderLayout, Seq2Seq};

/// Encoder output for one source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderMemory<T> {
    annotations: Tensor<T>,
    embeddings: Tensor<T>,
}

impl<T: Scalar> EncoderMemory<T> {
    /// `annotations: [q, H]`, `embeddings: [q, E]`.
    pub fn new(annotations: Tensor<T>, embeddings: Tensor<T>) -> Result<Self> {
        if annotations.rank() != 2 || embeddings.rank() != 2 || annotations.rows() != embeddings.rows() {
            return Err(HseqError::Config(format!(
                "memory shapes disagree: annotations {:?}, embeddings {:?}",
                annotations.shape(),
                embeddings.shape()
            )));
        }
        Ok(Self {
            annotations,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.annotations.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn annotations(&self) -> &Tensor<T> {
        &self.annotations
    }

    pub fn embeddings(&self) -> &Tensor<T> {
        &self.embeddings
    }

    pub fn annotation(&self, j: usize) -> &[T] {
        self.annotations.row(j)
    }

    pub fn embedding(&self, j: usize) -> &[T] {
        self.embeddings.row(j)
    }
}

/// Right-padded batch of id sequences, stored time-major.
#[derive(Clone, Debug)]
pub(crate) struct PaddedBatch {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    /// `ids[t][b]`.
    pub ids: Vec<Vec<usize>>,
}

impl PaddedBatch {
    pub fn new<S: AsRef<[usize]>>(seqs: &[S]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(HseqError::Empty("batch".into()));
        }
        let lengths: Vec<usize> = seqs.iter().map(|s| s.as_ref().len()).collect();
        if lengths.contains(&0) {
            return Err(HseqError::Empty("sequence in batch".into()));
        }
        let steps = *lengths.iter().max().unwrap_or(&0);
        let ids = (0..steps)
            .map(|t| seqs.iter().map(|s| s.as_ref().get(t).copied().unwrap_or(PAD)).collect())
            .collect();
        Ok(Self {
            batch: seqs.len(),
            steps,
            lengths,
            ids,
        })
    }

    /// 1.0 where step `t` is a real token of row `b`.
    pub fn step_mask<T: Scalar>(&self, t: usize) -> Vec<T> {
        self.lengths
            .iter()
            .map(|&n| if t < n { T::one() } else { T::zero() })
            .collect()
    }

    /// Batch-major `[B * steps]` validity mask.
    pub fn position_mask(&self) -> Vec<bool> {
        self.lengths
            .iter()
            .flat_map(|&n| (0..self.steps).map(move |t| t < n))
            .collect()
    }
}

/// Encoder output recorded on a graph.
#[derive(Clone, Debug)]
pub(crate) struct MemoryVars {
    /// `[B, T, H]`.
    pub annotations: Var,
    /// `[B, T, E]`.
    pub embeddings: Var,
    pub mask: Vec<bool>,
}

fn run_direction<T: Scalar>(
    g: &mut Graph<T>,
    cell: &BoundLstm,
    inputs: &[Var],
    batch: &PaddedBatch,
    reverse: bool,
) -> Result<Vec<Var>> {
    let steps = inputs.len();
    let mut state = LstmState::zeros(g, batch.batch, cell.hidden_dim);
    let mut outputs = vec![state.h; steps];
    let ragged = batch.lengths.iter().any(|&n| n != steps);
    for k in 0..steps {
        let t = if reverse { steps - 1 - k } else { k };
        let next = cell.step(g, inputs[t], state)?;
        state = if reverse && ragged {
            // Padded tail positions must not leak into the backward pass.
            let m = batch.step_mask::<T>(t);
            LstmState {
                h: g.blend(&m, next.h, state.h)?,
                c: g.blend(&m, next.c, state.c)?,
            }
        } else {
            next
        };
        outputs[t] = state.h;
    }
    Ok(outputs)
}

pub(crate) fn encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layout: &EncoderLayout,
    batch: &PaddedBatch,
) -> Result<MemoryVars> {
    let table = g.param(store, layout.embedding);
    let embedded = batch
        .ids
        .iter()
        .map(|ids| g.gather(table, ids))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut inputs = embedded.clone();
    for layer in &layout.layers {
        let fwd_cell = layer.fwd.bind(g, store);
        let fwd = run_direction(g, &fwd_cell, &inputs, batch, false)?;
        let mut outputs = match (layer.bwd, layer.proj) {
            (Some(bwd), Some((w, b))) => {
                let bwd_cell = bwd.bind(g, store);
                let back = run_direction(g, &bwd_cell, &inputs, batch, true)?;
                let w = g.param(store, w);
                let b = g.param(store, b);
                let mut out = Vec::with_capacity(fwd.len());
                for (f, r) in fwd.iter().zip(&back) {
                    let cat = g.concat(&[*f, *r])?;
                    out.push(g.linear(cat, w, b)?);
                }
                out
            }
            _ => fwd,
        };
        if layer.residual {
            for (o, x) in outputs.iter_mut().zip(&inputs) {
                *o = g.add(*o, *x)?;
            }
        }
        inputs = outputs;
    }
    Ok(MemoryVars {
        annotations: g.stack_steps(&inputs)?,
        embeddings: g.stack_steps(&embedded)?,
        mask: batch.position_mask(),
    })
}

impl<T: Scalar> Seq2Seq<T> {
    /// Runs the encoder over one source sentence.
    pub fn encode(&self, ids: &[usize]) -> Result<EncoderMemory<T>> {
        self.check_source_ids(ids)?;
        let batch = PaddedBatch::new(&[ids])?;
        let mut g = Graph::new();
        let mem = encode_graph(&mut g, &self.store, &self.layout.encoder, &batch)?;
        let q = ids.len();
        let ann = g.value(mem.annotations).reshape(&[q, self.spec.encoder.hidden_dim])?;
        let emb = g.value(mem.embeddings).reshape(&[q, self.spec.encoder.embed_dim])?;
        EncoderMemory::new(ann, emb)
    }
}
