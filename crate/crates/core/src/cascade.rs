//! The two-level pipeline: a coarse network translating short segments and
//! a fine network re-decoding their concatenation. Also model files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use hseq_numcore::{load_checkpoint, save_checkpoint};

use crate::corpus::{denumericalize, numericalize, SentencePair, Vocabulary, RESERVED_TOKENS, UNK};
use crate::error::{HseqError, Result};
use crate::network::{NetworkRole, NetworkSpec, Seq2Seq};
use crate::segmenter::{align_segments, segment, split_into_parts, SegmentRuleSet};
use crate::training::Example;

/// Sentences decoded together in one batch.
const DECODE_BATCH: usize = 64;

pub type TokenPair = (Vec<String>, Vec<String>);

/// Short pairs pass through; long pairs are segmented on both sides and
/// aligned. Aligned pieces whose source still exceeds the threshold are
/// count-split on both sides; pieces that cannot be split that way are
/// skipped.
pub fn build_coarse_training_set(pairs: &[SentencePair], rules: &SegmentRuleSet) -> Result<Vec<TokenPair>> {
    rules.validate()?;
    let mut out = Vec::new();
    for p in pairs {
        if p.source_length() <= rules.threshold {
            out.push((p.source.clone(), p.target.clone()));
            continue;
        }
        let src = segment(&p.source, rules)?;
        let tgt = segment(&p.target, rules)?;
        for (s, t) in align_segments(&src, &tgt) {
            if s.len() <= rules.threshold {
                out.push((s, t));
                continue;
            }
            let k = s.len().div_ceil(rules.threshold);
            if t.len() < k {
                continue;
            }
            out.extend(split_into_parts(&s, k).into_iter().zip(split_into_parts(&t, k)));
        }
    }
    Ok(out)
}

/// Maps token pairs to id pairs (no SOS/EOS).
pub fn to_examples(pairs: &[TokenPair], source_vocab: &Vocabulary, target_vocab: &Vocabulary) -> Vec<Example> {
    pairs
        .iter()
        .map(|(s, t)| (numericalize(s, source_vocab, false), numericalize(t, target_vocab, false)))
        .collect()
}

/// Greedy decoding of many id sequences in length-sorted batches. The
/// decode limit is the larger of the configured maximum and twice the
/// longest source in the batch.
pub fn decode_many(model: &Seq2Seq<f32>, sources: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by_key(|&i| sources[i].len());
    let mut out = vec![Vec::new(); sources.len()];
    for chunk in order.chunks(DECODE_BATCH) {
        let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| sources[i].clone()).collect();
        let longest = batch.iter().map(Vec::len).max().unwrap_or(0);
        let limit = model.spec().decoder.max_decode_len.max(2 * longest);
        for (&i, ids) in chunk.iter().zip(model.translate_ids(&batch, limit)?) {
            out[i] = ids;
        }
    }
    Ok(out)
}

fn check_role(model: &Seq2Seq<f32>, role: NetworkRole) -> Result<()> {
    if model.spec().role != role {
        return Err(HseqError::Config(format!(
            "expected a {} network, got a {} network",
            role.name(),
            model.spec().role.name()
        )));
    }
    Ok(())
}

/// Coarse translation of many sentences: segment, decode every segment,
/// concatenate per sentence in source order.
pub fn translate_coarse_batch(
    sources: &[Vec<String>],
    rules: &SegmentRuleSet,
    coarse: &Seq2Seq<f32>,
) -> Result<Vec<Vec<String>>> {
    check_role(coarse, NetworkRole::Coarse)?;
    let spec = coarse.spec();
    let mut segments = Vec::new();
    let mut owners = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        if s.is_empty() {
            return Err(HseqError::Empty(format!("source sentence {}", i + 1)));
        }
        for seg in segment(s, rules)?.segments {
            segments.push(numericalize(&seg, &spec.source_vocab, false));
            owners.push(i);
        }
    }
    let decoded = decode_many(coarse, &segments)?;
    let mut out = vec![Vec::new(); sources.len()];
    for (owner, ids) in owners.into_iter().zip(decoded) {
        out[owner].extend(denumericalize(&ids, &spec.target_vocab));
    }
    Ok(out)
}

pub fn translate_coarse(src: &[String], rules: &SegmentRuleSet, coarse: &Seq2Seq<f32>) -> Result<Vec<String>> {
    Ok(translate_coarse_batch(&[src.to_vec()], rules, coarse)?.remove(0))
}

/// Fine re-decoding of already coarse-translated sentences.
pub fn refine_batch(coarse_outputs: &[Vec<String>], fine: &Seq2Seq<f32>) -> Result<Vec<Vec<String>>> {
    check_role(fine, NetworkRole::Fine)?;
    let vocab = &fine.spec().source_vocab;
    let mut ids = Vec::with_capacity(coarse_outputs.len());
    for (i, s) in coarse_outputs.iter().enumerate() {
        if s.is_empty() {
            return Err(HseqError::Stage {
                stage: "fine",
                message: format!("coarse output for sentence {} is empty", i + 1),
            });
        }
        ids.push(numericalize(s, vocab, false));
    }
    let decoded = decode_many(fine, &ids).map_err(|e| HseqError::Stage {
        stage: "fine",
        message: e.to_string(),
    })?;
    Ok(decoded.iter().map(|d| denumericalize(d, &fine.spec().target_vocab)).collect())
}

/// Full cascade over many sentences.
pub fn translate_batch(
    sources: &[Vec<String>],
    rules: &SegmentRuleSet,
    coarse: &Seq2Seq<f32>,
    fine: &Seq2Seq<f32>,
) -> Result<Vec<Vec<String>>> {
    let rough = translate_coarse_batch(sources, rules, coarse).map_err(|e| match e {
        e @ HseqError::Stage { .. } => e,
        e => HseqError::Stage {
            stage: "coarse",
            message: e.to_string(),
        },
    })?;
    refine_batch(&rough, fine)
}

pub fn translate(
    src: &[String],
    rules: &SegmentRuleSet,
    coarse: &Seq2Seq<f32>,
    fine: &Seq2Seq<f32>,
) -> Result<Vec<String>> {
    Ok(translate_batch(&[src.to_vec()], rules, coarse, fine)?.remove(0))
}

/// Fine-network training pairs: the coarse translation of each source
/// paired with its gold target. An empty coarse output becomes a single
/// `<unk>` so every pair yields one example.
pub fn build_fine_training_set(
    pairs: &[SentencePair],
    rules: &SegmentRuleSet,
    coarse: &Seq2Seq<f32>,
) -> Result<Vec<TokenPair>> {
    let sources: Vec<Vec<String>> = pairs.iter().map(|p| p.source.clone()).collect();
    let rough = translate_coarse_batch(&sources, rules, coarse)?;
    Ok(rough
        .into_iter()
        .zip(pairs)
        .map(|(mut r, p)| {
            if r.is_empty() {
                r.push(RESERVED_TOKENS[UNK].to_string());
            }
            (r, p.target.clone())
        })
        .collect())
}

/// Path of the JSON description stored next to a checkpoint.
pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn file_error(path: &Path, e: impl std::fmt::Display) -> HseqError {
    HseqError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes the parameters to `path` and the [`NetworkSpec`] to `<path>.meta.json`.
pub fn save_model(model: &Seq2Seq<f32>, path: &Path) -> Result<()> {
    save_checkpoint(model.params(), path).map_err(|e| file_error(path, e))?;
    let meta = meta_path(path);
    let w = BufWriter::new(File::create(&meta).map_err(|e| file_error(&meta, e))?);
    serde_json::to_writer_pretty(w, model.spec()).map_err(|e| file_error(&meta, e))?;
    Ok(())
}

/// Reads a model written by [`save_model`].
pub fn load_model(path: &Path) -> Result<Seq2Seq<f32>> {
    let meta = meta_path(path);
    let r = BufReader::new(File::open(&meta).map_err(|e| file_error(&meta, e))?);
    let spec: NetworkSpec = serde_json::from_reader(r).map_err(|e| file_error(&meta, e))?;
    let store = load_checkpoint(path).map_err(|e| file_error(path, e))?;
    Seq2Seq::from_store(spec, store).map_err(|e| file_error(path, e))
}
