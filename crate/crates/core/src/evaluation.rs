//! BLEU, multi-reference selection, perplexity and length-bucketed reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use hseq_numcore::Scalar;

use crate::corpus::MultiRefGroup;
use crate::decoder::IdPair;
use crate::error::{HseqError, Result};
use crate::network::Seq2Seq;

pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU with its components. Scores are on a 0-100 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    /// 0 when the hypotheses are empty.
    pub brevity_penalty: f64,
    pub hypothesis_len: usize,
    pub reference_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothing {
    None,
    /// Adds one to numerator and denominator for orders 2 and up.
    AddOne,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate totals per order for one sentence.
fn sentence_stats<T: Eq + Hash>(hyp: &[T], refs: &[Vec<T>]) -> ([usize; MAX_ORDER], [usize; MAX_ORDER]) {
    let mut matches = [0; MAX_ORDER];
    let mut totals = [0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(hyp, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        matches[n - 1] = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        totals[n - 1] = hyp.len().saturating_sub(n - 1);
    }
    (matches, totals)
}

/// Reference length closest to `hyp_len`, preferring the shorter on ties.
fn closest_ref_len<T>(hyp_len: usize, refs: &[Vec<T>]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&l| (l.abs_diff(hyp_len), l))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn combine(precisions: &[f64; MAX_ORDER], bp: f64) -> f64 {
    if precisions.iter().any(|&p| p <= 0.0) {
        return 0.0;
    }
    let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
    (100.0 * bp * mean_log.exp()).min(100.0)
}

/// Corpus BLEU-4 with clipped counts summed over all sentences.
pub fn corpus_bleu<T: Eq + Hash>(hypotheses: &[Vec<T>], references: &[Vec<Vec<T>>]) -> Result<BleuScore> {
    if hypotheses.len() != references.len() {
        return Err(HseqError::Alignment {
            source_lines: hypotheses.len(),
            target_lines: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(HseqError::Empty("hypotheses".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c, mut r) = (0, 0);
    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(HseqError::Empty("reference list".into()));
        }
        let (m, t) = sentence_stats(hyp, refs);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        c += hyp.len();
        r += closest_ref_len(hyp.len(), refs);
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let bp = brevity_penalty(c, r);
    Ok(BleuScore {
        score: combine(&precisions, bp),
        precisions,
        brevity_penalty: bp,
        hypothesis_len: c,
        reference_len: r,
    })
}

/// Sentence BLEU-4 against one or more references. An empty hypothesis or
/// reference list scores 0.
pub fn sentence_bleu<T: Eq + Hash>(hyp: &[T], refs: &[Vec<T>], smoothing: Smoothing) -> f64 {
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let (m, t) = sentence_stats(hyp, refs);
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = match smoothing {
            Smoothing::AddOne if n > 0 => (m[n] + 1) as f64 / (t[n] + 1) as f64,
            _ if t[n] == 0 => 0.0,
            _ => m[n] as f64 / t[n] as f64,
        };
    }
    combine(&precisions, brevity_penalty(hyp.len(), closest_ref_len(hyp.len(), refs)))
}

/// Sentence BLEU with add-one smoothing on orders 2 to 4.
pub fn sentence_bleu_smoothed<T: Eq + Hash>(hyp: &[T], refs: &[Vec<T>]) -> f64 {
    sentence_bleu(hyp, refs, Smoothing::AddOne)
}

/// Picks the reference of `group` with the highest smoothed sentence BLEU
/// against `hypothesis`. Ties keep the earliest reference. Returns the
/// reference index and its score.
pub fn multi_ref_select(hypothesis: &[String], group: &MultiRefGroup) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in group.references.iter().enumerate() {
        let s = sentence_bleu_smoothed(hypothesis, std::slice::from_ref(r));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.ok_or_else(|| HseqError::Empty("reference group".into()))
}

/// `exp(total cross-entropy / scored tokens)` under teacher forcing.
pub fn perplexity<T: Scalar>(model: &Seq2Seq<T>, dataset: &[IdPair]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(HseqError::Empty("perplexity dataset".into()));
    }
    let (total, count) = model.loss_totals(dataset, 64)?;
    Ok((total / count as f64).exp())
}

/// Half-open source-length range; `end: None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthRange {
    pub start: usize,
    pub end: Option<usize>,
}

impl LengthRange {
    pub fn contains(&self, len: usize) -> bool {
        len >= self.start && self.end.is_none_or(|e| len < e)
    }

    pub fn label(&self) -> String {
        match self.end {
            Some(e) => format!("[{},{})", self.start, e),
            None => format!("[{},inf)", self.start),
        }
    }
}

/// `[0,50) [50,60) [60,70) [70,80) [80,90) [90,inf)`.
pub fn default_ranges() -> Vec<LengthRange> {
    let mut out: Vec<LengthRange> = [0, 50, 60, 70, 80, 90]
        .windows(2)
        .map(|w| LengthRange {
            start: w[0],
            end: Some(w[1]),
        })
        .collect();
    out.push(LengthRange { start: 90, end: None });
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bucket {
    pub range: LengthRange,
    pub count: usize,
    /// `None` for empty buckets.
    pub bleu: Option<BleuScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BucketReport {
    pub buckets: Vec<Bucket>,
}

fn validate_ranges(ranges: &[LengthRange]) -> Result<()> {
    if ranges.is_empty() {
        return Err(HseqError::Config("no length ranges".into()));
    }
    for (i, r) in ranges.iter().enumerate() {
        if r.end.is_some_and(|e| e <= r.start) {
            return Err(HseqError::Config(format!("empty length range {}", r.label())));
        }
        if let Some(next) = ranges.get(i + 1) {
            match r.end {
                Some(e) if e <= next.start => {}
                _ => {
                    return Err(HseqError::Config(format!(
                        "length ranges {} and {} overlap or are out of order",
                        r.label(),
                        next.label()
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Corpus BLEU per source-length range. Every sentence must fall in one
/// of the ranges.
pub fn bucket_report<T: Eq + Hash + Clone>(
    hypotheses: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    source_lengths: &[usize],
    ranges: &[LengthRange],
) -> Result<BucketReport> {
    validate_ranges(ranges)?;
    if hypotheses.len() != references.len() || hypotheses.len() != source_lengths.len() {
        return Err(HseqError::Config(format!(
            "bucket inputs disagree: {} hypotheses, {} references, {} lengths",
            hypotheses.len(),
            references.len(),
            source_lengths.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); ranges.len()];
    for (i, &len) in source_lengths.iter().enumerate() {
        let b = ranges.iter().position(|r| r.contains(len)).ok_or_else(|| {
            HseqError::Config(format!("source length {len} of sentence {i} is outside every range"))
        })?;
        members[b].push(i);
    }
    let buckets = ranges
        .iter()
        .zip(members)
        .map(|(range, idx)| {
            let bleu = if idx.is_empty() {
                None
            } else {
                let h: Vec<Vec<T>> = idx.iter().map(|&i| hypotheses[i].clone()).collect();
                let r: Vec<Vec<Vec<T>>> = idx.iter().map(|&i| references[i].clone()).collect();
                Some(corpus_bleu(&h, &r)?)
            };
            Ok(Bucket {
                range: *range,
                count: idx.len(),
                bleu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BucketReport { buckets })
}

/// Overall, short/long and bucketed scores for one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub overall: BleuScore,
    pub threshold: usize,
    /// Sentences with source length at most `threshold`.
    pub short: Bucket,
    /// Sentences with source length above `threshold`.
    pub long: Bucket,
    pub buckets: BucketReport,
    pub perplexity: Option<f64>,
}

impl EvaluationReport {
    pub fn build<T: Eq + Hash + Clone>(
        hypotheses: &[Vec<T>],
        references: &[Vec<Vec<T>>],
        source_lengths: &[usize],
        threshold: usize,
    ) -> Result<Self> {
        let overall = corpus_bleu(hypotheses, references)?;
        let split = bucket_report(
            hypotheses,
            references,
            source_lengths,
            &[
                LengthRange {
                    start: 0,
                    end: Some(threshold + 1),
                },
                LengthRange {
                    start: threshold + 1,
                    end: None,
                },
            ],
        )?;
        let mut split = split.buckets.into_iter();
        let (short, long) = (split.next(), split.next());
        Ok(Self {
            overall,
            threshold,
            short: short.expect("two buckets"),
            long: long.expect("two buckets"),
            buckets: bucket_report(hypotheses, references, source_lengths, &default_ranges())?,
            perplexity: None,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let o = &self.overall;
        let _ = writeln!(s, "BLEU {:.3}", o.score);
        let _ = writeln!(
            s,
            "  precisions {:.4} {:.4} {:.4} {:.4}  BP {:.4}  hyp_len {}  ref_len {}",
            o.precisions[0], o.precisions[1], o.precisions[2], o.precisions[3], o.brevity_penalty, o.hypothesis_len,
            o.reference_len
        );
        let fmt = |b: &Bucket| b.bleu.as_ref().map_or("-".to_string(), |x| format!("{:.3}", x.score));
        let _ = writeln!(s, "short (<= {}) {}  n={}", self.threshold, fmt(&self.short), self.short.count);
        let _ = writeln!(s, "long (> {}) {}  n={}", self.threshold, fmt(&self.long), self.long.count);
        if let Some(p) = self.perplexity {
            let _ = writeln!(s, "perplexity {p:.4}");
        }
        let _ = writeln!(s, "length      count  BLEU");
        for b in &self.buckets.buckets {
            let _ = writeln!(s, "{:<11} {:>5}  {}", b.range.label(), b.count, fmt(b));
        }
        s
    }

    /// `section  range  count  bleu` rows, header first.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("section\trange\tcount\tbleu\n");
        let cell = |b: &Bucket| b.bleu.as_ref().map_or(String::new(), |x| format!("{:.6}", x.score));
        let total = self.short.count + self.long.count;
        let _ = writeln!(s, "overall\tall\t{total}\t{:.6}", self.overall.score);
        let _ = writeln!(s, "split\t{}\t{}\t{}", self.short.range.label(), self.short.count, cell(&self.short));
        let _ = writeln!(s, "split\t{}\t{}\t{}", self.long.range.label(), self.long.count, cell(&self.long));
        for b in &self.buckets.buckets {
            let _ = writeln!(s, "bucket\t{}\t{}\t{}", b.range.label(), b.count, cell(b));
        }
        if let Some(p) = self.perplexity {
            let _ = writeln!(s, "perplexity\tall\t{total}\t{p:.6}");
        }
        s
    }
}
