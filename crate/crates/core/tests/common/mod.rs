//! Plain-loop reference implementation of the network forward pass, used
//! as an oracle against the tape-based engine.

#![allow(dead_code)]

use hseq_core::corpus::{EOS, PAD, SOS};
use hseq_core::{NetworkSpec, Seq2Seq};

pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    /// `x · W` for `x` of length `rows`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            for c in 0..self.cols {
                out[c] += xv * self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.data[r * self.cols..(r + 1) * self.cols].to_vec()
    }
}

pub fn param(model: &Seq2Seq<f64>, name: &str) -> Dense {
    let p = model.params().by_name(name).unwrap_or_else(|| panic!("missing {name}"));
    let shape = p.value.shape();
    let (rows, cols) = match shape.len() {
        1 => (1, shape[0]),
        _ => (shape[0], shape[1]),
    };
    Dense {
        rows,
        cols,
        data: p.value.data().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub struct Cell {
    w_ih: Dense,
    w_hh: Dense,
    b: Vec<f64>,
}

impl Cell {
    pub fn load(model: &Seq2Seq<f64>, prefix: &str) -> Self {
        Self {
            w_ih: param(model, &format!("{prefix}/W_ih")),
            w_hh: param(model, &format!("{prefix}/W_hh")),
            b: param(model, &format!("{prefix}/b")).data,
        }
    }

    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let z = add(&add(&self.w_ih.apply(x), &self.w_hh.apply(h)), &self.b);
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for k in 0..n {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[n + k]);
            let g = z[2 * n + k].tanh();
            let o = sigmoid(z[3 * n + k]);
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    fn run(&self, xs: &[Vec<f64>], hidden: usize, reverse: bool) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        let mut out = vec![Vec::new(); xs.len()];
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            (h, c) = self.step(&xs[t], &h, &c);
            out[t] = h.clone();
        }
        out
    }
}

/// `(annotations, embeddings)`, one row per source position.
pub fn encode(model: &Seq2Seq<f64>, ids: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let spec = model.spec();
    let root = spec.role.name();
    let enc = &spec.encoder;
    let table = param(model, &format!("{root}/encoder/embedding"));
    let embedded: Vec<Vec<f64>> = ids.iter().map(|&i| table.row(i)).collect();
    let mut xs = embedded.clone();
    for l in 0..enc.num_layers {
        let prefix = format!("{root}/encoder/layer{l}");
        let fwd = Cell::load(model, &format!("{prefix}/fwd")).run(&xs, enc.hidden_dim, false);
        let mut out = if l == 0 && enc.bidirectional_first {
            let bwd = Cell::load(model, &format!("{prefix}/bwd")).run(&xs, enc.hidden_dim, true);
            let w = param(model, &format!("{prefix}/proj/W"));
            let b = param(model, &format!("{prefix}/proj/b")).data;
            fwd.iter()
                .zip(&bwd)
                .map(|(f, r)| add(&w.apply(&[f.clone(), r.clone()].concat()), &b))
                .collect()
        } else {
            fwd
        };
        if enc.residual_layers.contains(&l) {
            out = out.iter().zip(&xs).map(|(o, x)| add(o, x)).collect();
        }
        xs = out;
    }
    (xs, embedded)
}

pub struct Attention {
    pub p_a: Vec<f64>,
    pub v_a: Dense,
    pub w_a: Dense,
    pub u_a: Dense,
}

impl Attention {
    pub fn load(model: &Seq2Seq<f64>) -> Self {
        let a = format!("{}/decoder/attn", model.spec().role.name());
        Self {
            p_a: param(model, &format!("{a}/p_a")).data,
            v_a: param(model, &format!("{a}/V_a")),
            w_a: param(model, &format!("{a}/W_a")),
            u_a: param(model, &format!("{a}/U_a")),
        }
    }

    /// `(scores, weights, context)`.
    pub fn attend(&self, s: &[f64], ann: &[Vec<f64>], emb: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let vs = self.v_a.apply(s);
        let scores: Vec<f64> = ann
            .iter()
            .zip(emb)
            .map(|(h, e)| {
                let pre = add(&add(&vs, &self.w_a.apply(h)), &self.u_a.apply(e));
                pre.iter().zip(&self.p_a).map(|(x, p)| p * x.tanh()).sum()
            })
            .collect();
        let weights = softmax(&scores);
        let mut ctx = vec![0.0; ann[0].len()];
        for (w, h) in weights.iter().zip(ann) {
            for (c, x) in ctx.iter_mut().zip(h) {
                *c += w * x;
            }
        }
        (scores, weights, ctx)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

struct Decoder {
    embedding: Dense,
    cells: Vec<Cell>,
    attn: Attention,
    out_w: Dense,
    out_b: Vec<f64>,
    hidden: usize,
}

impl Decoder {
    fn load(model: &Seq2Seq<f64>) -> Self {
        let spec: &NetworkSpec = model.spec();
        let d = format!("{}/decoder", spec.role.name());
        Self {
            embedding: param(model, &format!("{d}/embedding")),
            cells: (0..spec.decoder.num_layers)
                .map(|l| Cell::load(model, &format!("{d}/layer{l}")))
                .collect(),
            attn: Attention::load(model),
            out_w: param(model, &format!("{d}/out/W")),
            out_b: param(model, &format!("{d}/out/b")).data,
            hidden: spec.decoder.hidden_dim,
        }
    }

    fn logits(&self, states: &mut [(Vec<f64>, Vec<f64>)], prev: usize, ann: &[Vec<f64>], emb: &[Vec<f64>]) -> Vec<f64> {
        let mut x = self.embedding.row(prev);
        for (cell, st) in self.cells.iter().zip(states.iter_mut()) {
            *st = cell.step(&x, &st.0, &st.1);
            x = st.0.clone();
        }
        let (_, _, ctx) = self.attn.attend(&x, ann, emb);
        add(&self.out_w.apply(&[x, ctx].concat()), &self.out_b)
    }

    fn zero_states(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.cells.iter().map(|_| (vec![0.0; self.hidden], vec![0.0; self.hidden])).collect()
    }
}

/// Summed teacher-forced cross-entropy over `tgt` followed by EOS.
pub fn loss(model: &Seq2Seq<f64>, src: &[usize], tgt: &[usize]) -> f64 {
    let (ann, emb) = encode(model, src);
    let dec = Decoder::load(model);
    let mut states = dec.zero_states();
    let mut prev = SOS;
    let mut total = 0.0;
    for &y in tgt.iter().chain(std::iter::once(&EOS)) {
        let z = dec.logits(&mut states, prev, &ann, &emb);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
        prev = y;
    }
    total
}

pub fn greedy(model: &Seq2Seq<f64>, src: &[usize], max_len: usize) -> Vec<usize> {
    let (ann, emb) = encode(model, src);
    let dec = Decoder::load(model);
    let mut states = dec.zero_states();
    let mut prev = SOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let z = dec.logits(&mut states, prev, &ann, &emb);
        let best = (0..z.len())
            .filter(|&i| i != PAD && i != SOS)
            .fold(None, |b: Option<usize>, i| match b {
                Some(j) if z[j] >= z[i] => Some(j),
                _ => Some(i),
            })
            .unwrap();
        if best == EOS {
            break;
        }
        out.push(best);
        prev = best;
    }
    out
}
