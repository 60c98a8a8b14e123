//! Rule-based splitting of long sentences into short segments.
//!
//! A sentence longer than the threshold is cut after every delimiter token
//! (conjunctions, relative pronouns and commas). Pieces shorter than two
//! tokens are folded into a neighbour and any piece still over the threshold
//! is split into balanced equal-count parts. Sentences with no delimiter are
//! count-split directly.

use std::collections::HashSet;

use crate::error::{HseqError, Result};

pub const DEFAULT_ENGLISH_DELIMITERS: [&str; 7] = [",", "which", "and", "that", "but", "or", "so"];
pub const DEFAULT_CHINESE_DELIMITERS: [&str; 14] = [
    "，", "、", "和", "并", "并且", "及", "以及", "其中", "但", "但是", "或", "否则", "因此", "所以",
];

const MIN_SEGMENT_LEN: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentRuleSet {
    pub english_delimiters: Vec<String>,
    pub chinese_delimiters: Vec<String>,
    pub threshold: usize,
    pub fallback_target_len: usize,
}

impl Default for SegmentRuleSet {
    fn default() -> Self {
        Self {
            english_delimiters: DEFAULT_ENGLISH_DELIMITERS.iter().map(|s| s.to_string()).collect(),
            chinese_delimiters: DEFAULT_CHINESE_DELIMITERS.iter().map(|s| s.to_string()).collect(),
            threshold: 50,
            fallback_target_len: 30,
        }
    }
}

impl SegmentRuleSet {
    pub fn with_threshold(mut self, threshold: usize) -> Self {
        self.threshold = threshold;
        self
    }

    /// Rule set whose only delimiters are `delimiters` (used by both
    /// languages).
    pub fn with_delimiters(mut self, delimiters: Vec<String>) -> Self {
        self.english_delimiters = delimiters;
        self.chinese_delimiters.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.english_delimiters.is_empty() && self.chinese_delimiters.is_empty() {
            return Err(HseqError::Config("no segmentation delimiters".into()));
        }
        if self.threshold < MIN_SEGMENT_LEN {
            return Err(HseqError::Config(format!(
                "segmentation threshold must be at least {MIN_SEGMENT_LEN}, got {}",
                self.threshold
            )));
        }
        if self.fallback_target_len == 0 {
            return Err(HseqError::Config("fallback_target_len must be positive".into()));
        }
        Ok(())
    }

    fn delimiter_set(&self) -> HashSet<String> {
        self.english_delimiters
            .iter()
            .chain(&self.chinese_delimiters)
            .map(|d| d.to_lowercase())
            .collect()
    }
}

/// Parses a delimiter list: one delimiter per line, blank lines and lines
/// starting with `#` ignored.
pub fn parse_delimiter_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentMethod {
    None,
    Delimiter,
    Count,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentedSentence {
    pub segments: Vec<Vec<String>>,
    pub method: SegmentMethod,
}

impl SegmentedSentence {
    pub fn flatten(&self) -> Vec<String> {
        self.segments.concat()
    }

    pub fn token_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }
}

/// Splits `tokens` into exactly `parts` contiguous pieces whose sizes differ
/// by at most one, larger pieces first.
pub fn split_into_parts<T: Clone>(tokens: &[T], parts: usize) -> Vec<Vec<T>> {
    let parts = parts.clamp(1, tokens.len().max(1));
    let base = tokens.len() / parts;
    let extra = tokens.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let size = base + usize::from(i < extra);
        out.push(tokens[start..start + size].to_vec());
        start += size;
    }
    out
}

/// Equal-count split into `ceil(len / target_len)` balanced parts.
pub fn segment_by_count<T: Clone>(tokens: &[T], target_len: usize) -> Vec<Vec<T>> {
    let target_len = target_len.max(1);
    split_into_parts(tokens, tokens.len().div_ceil(target_len))
}

pub fn segment(tokens: &[String], rules: &SegmentRuleSet) -> Result<SegmentedSentence> {
    if tokens.is_empty() {
        return Err(HseqError::Empty("segment".into()));
    }
    rules.validate()?;
    if tokens.len() <= rules.threshold {
        return Ok(SegmentedSentence {
            segments: vec![tokens.to_vec()],
            method: SegmentMethod::None,
        });
    }
    let count_len = rules.fallback_target_len.min(rules.threshold);
    let delimiters = rules.delimiter_set();
    let mut pieces: Vec<Vec<String>> = Vec::new();
    let mut current = Vec::new();
    for tok in tokens {
        current.push(tok.clone());
        if delimiters.contains(&tok.to_lowercase()) {
            pieces.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    if pieces.len() == 1 {
        return Ok(SegmentedSentence {
            segments: segment_by_count(tokens, count_len),
            method: SegmentMethod::Count,
        });
    }

    let mut merged: Vec<Vec<String>> = Vec::with_capacity(pieces.len());
    let mut carry: Vec<String> = Vec::new();
    for piece in pieces {
        if piece.len() < MIN_SEGMENT_LEN {
            match merged.last_mut() {
                Some(prev) => prev.extend(piece),
                // Nothing precedes the first piece; attach it to the next one.
                None => carry.extend(piece),
            }
        } else {
            let mut piece = piece;
            if !carry.is_empty() {
                carry.append(&mut piece);
                piece = std::mem::take(&mut carry);
            }
            merged.push(piece);
        }
    }
    if !carry.is_empty() {
        match merged.last_mut() {
            Some(prev) => prev.extend(carry),
            None => merged.push(carry),
        }
    }

    let segments = merged
        .into_iter()
        .flat_map(|piece| {
            if piece.len() > rules.threshold {
                segment_by_count(&piece, count_len)
            } else {
                vec![piece]
            }
        })
        .collect();
    Ok(SegmentedSentence {
        segments,
        method: SegmentMethod::Delimiter,
    })
}

/// Pairs source and target segments by index. When the counts differ, the
/// side with more segments is re-split by count from its original token
/// stream into the other side's number of parts.
pub fn align_segments(
    src: &SegmentedSentence,
    tgt: &SegmentedSentence,
) -> Vec<(Vec<String>, Vec<String>)> {
    let (ns, nt) = (src.segments.len(), tgt.segments.len());
    let (src_parts, tgt_parts) = if ns == nt {
        (src.segments.clone(), tgt.segments.clone())
    } else if ns > nt {
        (split_into_parts(&src.flatten(), nt), tgt.segments.clone())
    } else {
        (src.segments.clone(), split_into_parts(&tgt.flatten(), ns))
    };
    src_parts.into_iter().zip(tgt_parts).collect()
}
