//! Attention decoder: stacked LSTM with additive attention over the
//! two-part encoder memory, teacher-forced loss and greedy decoding.

use hseq_numcore::{softmax, BoundLstm, Graph, LstmCellState, LstmState, ParamStore, Scalar, Tensor, Var};

use crate::corpus::{EOS, PAD, SOS};
use crate::encoder::{encode_graph, EncoderMemory, MemoryVars, PaddedBatch};
use crate::error::{HseqError, Result};
use crate::network::{DecoderLayout, Seq2Seq};

/// Normalized attention weights with the raw scores they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub weights: Vec<T>,
    pub scores: Vec<T>,
}

/// Decoder recurrent state for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<T> {
    pub layers: Vec<LstmCellState<T>>,
    pub prev_token: usize,
    pub step: usize,
}

/// `a = sum_j w_j h_j` over the annotations.
pub fn context_vector<T: Scalar>(weights: &AttentionWeights<T>, memory: &EncoderMemory<T>) -> Vec<T> {
    let h = memory.annotations();
    let mut out = vec![T::zero(); h.cols()];
    for (j, &w) in weights.weights.iter().enumerate() {
        for (o, &x) in out.iter_mut().zip(h.row(j)) {
            *o += w * x;
        }
    }
    out
}

/// Index of the largest entry, skipping PAD and SOS. Ties go to the lowest id.
pub(crate) fn argmax_token<T: Scalar>(row: &[T]) -> usize {
    let mut best = EOS;
    let mut best_val = T::neg_infinity();
    for (i, &x) in row.iter().enumerate() {
        if i == PAD || i == SOS {
            continue;
        }
        if x > best_val {
            best = i;
            best_val = x;
        }
    }
    best
}

pub(crate) struct BoundDecoder {
    embedding: Var,
    cells: Vec<BoundLstm>,
    p_a: Var,
    v_a: Var,
    out_w: Var,
    out_b: Var,
    hidden_dim: usize,
}

/// Memory with its attention keys `W_a h_j + U_a e_j` precomputed.
pub(crate) struct AttentionMemory {
    keys: Var,
    annotations: Var,
    mask: Vec<bool>,
}

impl BoundDecoder {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, store: &ParamStore<T>, layout: &DecoderLayout) -> Self {
        Self {
            embedding: g.param(store, layout.embedding),
            cells: layout.layers.iter().map(|c| c.bind(g, store)).collect(),
            p_a: g.param(store, layout.attn.p_a),
            v_a: g.param(store, layout.attn.v_a),
            out_w: g.param(store, layout.out_w),
            out_b: g.param(store, layout.out_b),
            hidden_dim: layout.layers[0].hidden_dim,
        }
    }

    pub fn attach<T: Scalar>(
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        layout: &DecoderLayout,
        memory: MemoryVars,
    ) -> Result<AttentionMemory> {
        let w_a = g.param(store, layout.attn.w_a);
        let u_a = g.param(store, layout.attn.u_a);
        let hk = g.matmul(memory.annotations, w_a)?;
        let ek = g.matmul(memory.embeddings, u_a)?;
        Ok(AttentionMemory {
            keys: g.add(hk, ek)?,
            annotations: memory.annotations,
            mask: memory.mask,
        })
    }

    pub fn initial_states<T: Scalar>(&self, g: &mut Graph<T>, batch: usize) -> Vec<LstmState> {
        self.cells
            .iter()
            .map(|_| LstmState::zeros(g, batch, self.hidden_dim))
            .collect()
    }

    /// Attention from the top-layer state `s: [B, H]`.
    pub fn attend<T: Scalar>(&self, g: &mut Graph<T>, mem: &AttentionMemory, s: Var) -> Result<(Var, Var, Var)> {
        let query = g.matmul(s, self.v_a)?;
        let pre = g.broadcast_add(mem.keys, query)?;
        let act = g.tanh(pre);
        let scores = g.dot_last(act, self.p_a)?;
        let weights = g.masked_softmax(scores, &mem.mask)?;
        let ctx = g.weighted_sum(weights, mem.annotations)?;
        Ok((scores, weights, ctx))
    }

    /// One decoder step: embed previous tokens, run the stack, attend.
    /// Returns the `[B, H_dec + H_enc]` output features.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        mem: &AttentionMemory,
        states: &mut [LstmState],
        prev: &[usize],
    ) -> Result<Var> {
        let mut x = g.gather(self.embedding, prev)?;
        for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
            *state = cell.step(g, x, *state)?;
            x = state.h;
        }
        let (_, _, ctx) = self.attend(g, mem, x)?;
        Ok(g.concat(&[x, ctx])?)
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        Ok(g.linear(features, self.out_w, self.out_b)?)
    }

    /// Greedy decoding of every row in the batch.
    pub fn greedy<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        mem: &AttentionMemory,
        batch: usize,
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let mut states = self.initial_states(g, batch);
        let mut prev = vec![SOS; batch];
        let mut out = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        for _ in 0..max_len {
            let step = self.step(g, mem, &mut states, &prev)?;
            let logits = self.logits(g, step)?;
            let lv = g.value(logits);
            for b in 0..batch {
                let tok = argmax_token(lv.row(b));
                prev[b] = tok;
                if done[b] {
                    continue;
                }
                if tok == EOS {
                    done[b] = true;
                } else {
                    out[b].push(tok);
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}

/// Source/target pair as id slices, without SOS or EOS.
pub type IdPair<'a> = (&'a [usize], &'a [usize]);

impl<T: Scalar> Seq2Seq<T> {
    fn memory_vars(&self, g: &mut Graph<T>, memory: &EncoderMemory<T>) -> Result<MemoryVars> {
        let q = memory.len();
        if memory.annotations().cols() != self.spec.encoder.hidden_dim
            || memory.embeddings().cols() != self.spec.encoder.embed_dim
        {
            return Err(HseqError::Config(format!(
                "memory widths {}/{} do not match encoder {}/{}",
                memory.annotations().cols(),
                memory.embeddings().cols(),
                self.spec.encoder.hidden_dim,
                self.spec.encoder.embed_dim
            )));
        }
        let ann = memory.annotations().reshape(&[1, q, memory.annotations().cols()])?;
        let emb = memory.embeddings().reshape(&[1, q, memory.embeddings().cols()])?;
        Ok(MemoryVars {
            annotations: g.constant(ann),
            embeddings: g.constant(emb),
            mask: vec![true; q],
        })
    }

    /// Zero recurrent state positioned before the first output token.
    pub fn initial_decoder_state(&self) -> DecoderState<T> {
        let h = self.spec.decoder.hidden_dim;
        DecoderState {
            layers: (0..self.spec.decoder.num_layers)
                .map(|_| LstmCellState {
                    h: vec![T::zero(); h],
                    c: vec![T::zero(); h],
                })
                .collect(),
            prev_token: SOS,
            step: 1,
        }
    }

    /// Attention of the decoder state vector `s_prev` over `memory`.
    pub fn attention_scores(&self, s_prev: &[T], memory: &EncoderMemory<T>) -> Result<AttentionWeights<T>> {
        let h = self.spec.decoder.hidden_dim;
        if s_prev.len() != h {
            return Err(HseqError::Config(format!(
                "decoder state has {} entries, expected {h}",
                s_prev.len()
            )));
        }
        let mut g = Graph::new();
        let vars = self.memory_vars(&mut g, memory)?;
        let dec = BoundDecoder::bind(&mut g, &self.store, &self.layout.decoder);
        let mem = BoundDecoder::attach(&mut g, &self.store, &self.layout.decoder, vars)?;
        let s = g.constant(Tensor::new(vec![1, h], s_prev.to_vec())?);
        let (scores, weights, _) = dec.attend(&mut g, &mem, s)?;
        Ok(AttentionWeights {
            weights: g.value(weights).data().to_vec(),
            scores: g.value(scores).data().to_vec(),
        })
    }

    /// One decoding step: distribution over the target vocabulary and the
    /// advanced state. `prev_token` of the returned state is left for the
    /// caller to set.
    pub fn decode_step(
        &self,
        state: &DecoderState<T>,
        memory: &EncoderMemory<T>,
    ) -> Result<(Vec<T>, DecoderState<T>)> {
        let h = self.spec.decoder.hidden_dim;
        if state.layers.len() != self.spec.decoder.num_layers {
            return Err(HseqError::Config(format!(
                "decoder state has {} layers, expected {}",
                state.layers.len(),
                self.spec.decoder.num_layers
            )));
        }
        self.check_target_ids(&[state.prev_token])?;
        let mut g = Graph::new();
        let vars = self.memory_vars(&mut g, memory)?;
        let dec = BoundDecoder::bind(&mut g, &self.store, &self.layout.decoder);
        let mem = BoundDecoder::attach(&mut g, &self.store, &self.layout.decoder, vars)?;
        let mut states = Vec::with_capacity(state.layers.len());
        for l in &state.layers {
            states.push(LstmState {
                h: g.constant(Tensor::new(vec![1, h], l.h.clone())?),
                c: g.constant(Tensor::new(vec![1, h], l.c.clone())?),
            });
        }
        let out = dec.step(&mut g, &mem, &mut states, &[state.prev_token])?;
        let logits = dec.logits(&mut g, out)?;
        let dist = softmax(g.value(logits).data())?;
        let next = DecoderState {
            layers: states
                .iter()
                .map(|s| LstmCellState {
                    h: g.value(s.h).data().to_vec(),
                    c: g.value(s.c).data().to_vec(),
                })
                .collect(),
            prev_token: state.prev_token,
            step: state.step + 1,
        };
        Ok((dist, next))
    }

    /// Greedy decoding from SOS until EOS or `max_len` tokens.
    pub fn greedy_decode(&self, memory: &EncoderMemory<T>, max_len: usize) -> Result<Vec<usize>> {
        if max_len == 0 {
            return Err(HseqError::Config("max_len must be at least 1".into()));
        }
        let mut g = Graph::new();
        let vars = self.memory_vars(&mut g, memory)?;
        let dec = BoundDecoder::bind(&mut g, &self.store, &self.layout.decoder);
        let mem = BoundDecoder::attach(&mut g, &self.store, &self.layout.decoder, vars)?;
        Ok(dec.greedy(&mut g, &mem, 1, max_len)?.remove(0))
    }

    /// Encodes and greedily decodes a batch of source sentences.
    pub fn translate_ids(&self, sources: &[Vec<usize>], max_len: usize) -> Result<Vec<Vec<usize>>> {
        if max_len == 0 {
            return Err(HseqError::Config("max_len must be at least 1".into()));
        }
        if sources.is_empty() {
            return Ok(Vec::new());
        }
        for s in sources {
            self.check_source_ids(s)?;
        }
        let batch = PaddedBatch::new(sources)?;
        let mut g = Graph::new();
        let vars = encode_graph(&mut g, &self.store, &self.layout.encoder, &batch)?;
        let dec = BoundDecoder::bind(&mut g, &self.store, &self.layout.decoder);
        let mem = BoundDecoder::attach(&mut g, &self.store, &self.layout.decoder, vars)?;
        dec.greedy(&mut g, &mem, batch.batch, max_len)
    }

    /// Records the summed teacher-forced cross-entropy of a batch on `g`,
    /// reading parameter values from `store`. Returns the loss and the
    /// number of scored tokens (targets plus EOS).
    pub fn batch_loss_on(&self, g: &mut Graph<T>, store: &ParamStore<T>, pairs: &[IdPair]) -> Result<(Var, usize)> {
        if pairs.is_empty() {
            return Err(HseqError::Empty("training batch".into()));
        }
        for (src, tgt) in pairs {
            self.check_source_ids(src)?;
            if tgt.is_empty() {
                return Err(HseqError::Empty("target sequence".into()));
            }
            self.check_target_ids(tgt)?;
        }
        let sources: Vec<&[usize]> = pairs.iter().map(|p| p.0).collect();
        let src_batch = PaddedBatch::new(&sources)?;
        let vars = encode_graph(g, store, &self.layout.encoder, &src_batch)?;
        let dec = BoundDecoder::bind(g, store, &self.layout.decoder);
        let mem = BoundDecoder::attach(g, store, &self.layout.decoder, vars)?;

        let bsz = pairs.len();
        let steps = pairs.iter().map(|p| p.1.len() + 1).max().unwrap_or(1);
        let mut states = dec.initial_states(g, bsz);
        let mut features = Vec::with_capacity(steps);
        for k in 0..steps {
            let prev: Vec<usize> = pairs
                .iter()
                .map(|(_, tgt)| match k {
                    0 => SOS,
                    k if k <= tgt.len() => tgt[k - 1],
                    _ => PAD,
                })
                .collect();
            features.push(dec.step(g, &mem, &mut states, &prev)?);
        }
        let stacked = g.stack_steps(&features)?;
        let logits = dec.logits(g, stacked)?;
        let mut targets = Vec::with_capacity(bsz * steps);
        let mut count = 0;
        for (_, tgt) in pairs {
            for k in 0..steps {
                let t = match k.cmp(&tgt.len()) {
                    std::cmp::Ordering::Less => Some(tgt[k]),
                    std::cmp::Ordering::Equal => Some(EOS),
                    std::cmp::Ordering::Greater => None,
                };
                count += usize::from(t.is_some());
                targets.push(t);
            }
        }
        Ok((g.cross_entropy_sum(logits, &targets)?, count))
    }

    /// Summed cross-entropy and token count over a dataset, in batches.
    pub fn loss_totals(&self, pairs: &[IdPair], batch_size: usize) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in pairs.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let (loss, n) = self.batch_loss_on(&mut g, &self.store, chunk)?;
            total += g.value(loss).data()[0].to_f64_lossy();
            count += n;
        }
        Ok((total, count))
    }

    /// Mean per-token cross-entropy with gold previous tokens fed back.
    pub fn teacher_forced_loss(&self, src: &[usize], tgt: &[usize]) -> Result<T> {
        let mut g = Graph::new();
        let (loss, n) = self.batch_loss_on(&mut g, &self.store, &[(src, tgt)])?;
        Ok(g.value(loss).data()[0] / T::from_f64_lossy(n as f64))
    }
}
