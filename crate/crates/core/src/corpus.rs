//! Parallel corpus ingestion: cleaning filters, capped vocabularies,
//! numericalization and multi-reference grouping.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HseqError, Result};
use crate::segmenter::{segment, SegmentRuleSet};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// One line pair exactly as read from the aligned files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPair {
    pub source: String,
    pub target: String,
}

impl RawPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }
}

/// A cleaned, tokenized sentence pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub id: usize,
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    pub fn source_length(&self) -> usize {
        self.source.len()
    }

    pub fn to_raw(&self) -> RawPair {
        RawPair::new(self.source.join(" "), self.target.join(" "))
    }
}

/// Pairs up the lines of two aligned files.
pub fn pair_lines(source: Vec<String>, target: Vec<String>) -> Result<Vec<RawPair>> {
    if source.len() != target.len() {
        return Err(HseqError::Alignment {
            source_lines: source.len(),
            target_lines: target.len(),
        });
    }
    Ok(source
        .into_iter()
        .zip(target)
        .map(|(s, t)| RawPair::new(s, t))
        .collect())
}

pub fn read_lines(reader: impl BufRead) -> Result<Vec<String>> {
    Ok(reader.lines().collect::<std::io::Result<Vec<_>>>()?)
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub fn is_cjk_ideograph(c: char) -> bool {
    ('\u{4E00}'..='\u{9FFF}').contains(&c)
}

fn is_whitelisted(c: char) -> bool {
    c.is_ascii_alphanumeric()
        || c.is_ascii_punctuation()
        || c.is_whitespace()
        || is_cjk_ideograph(c)
        || ('\u{3400}'..='\u{4DBF}').contains(&c) // CJK extension A
        || ('\u{00C0}'..='\u{024F}').contains(&c) && c.is_alphabetic() // accented Latin
        || ('\u{2000}'..='\u{206F}').contains(&c) // general punctuation block
        || ('\u{3000}'..='\u{303F}').contains(&c) // CJK punctuation: 、。「」
        || ('\u{FF01}'..='\u{FF65}').contains(&c) // full-width forms: ，：；（）
        || matches!(c, '·' | '°' | '%' | '¥' | '£' | '€')
}

/// Default illegal-text predicate: URL fragments, or any character outside
/// the Chinese / Latin / digit / punctuation whitelist.
pub fn default_illegal(text: &str) -> bool {
    const URL_MARKERS: [&str; 3] = ["http://", "https://", "www."];
    let lower = text.to_lowercase();
    URL_MARKERS.iter().any(|m| lower.contains(m)) || text.chars().any(|c| !is_whitelisted(c))
}

fn normalize_space(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops empty pairs, pairs flagged by `is_illegal` on either side, and
/// pairs whose target has no CJK ideograph. Whitespace runs are collapsed
/// and survivors keep their input order and are numbered from 0.
pub fn clean_corpus(pairs: &[RawPair], is_illegal: impl Fn(&str) -> bool) -> Vec<SentencePair> {
    pairs
        .iter()
        .filter_map(|p| {
            let source = normalize_space(&p.source);
            let target = normalize_space(&p.target);
            if source.is_empty() || target.is_empty() {
                return None;
            }
            if is_illegal(&source) || is_illegal(&target) {
                return None;
            }
            if !target.chars().any(is_cjk_ideograph) {
                return None;
            }
            Some((tokenize(&source), tokenize(&target)))
        })
        .enumerate()
        .map(|(id, (source, target))| SentencePair { id, source, target })
        .collect()
}

/// Token/id bijection with the four reserved ids 0..=3.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = HseqError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds from a full token list whose first four entries are the
    /// reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED_TOKENS.len()
            || tokens.iter().zip(RESERVED_TOKENS).any(|(t, r)| t != r)
        {
            return Err(HseqError::Vocabulary(format!(
                "first entries must be {RESERVED_TOKENS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(HseqError::Vocabulary(format!("line {}: invalid token {t:?}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(HseqError::Vocabulary(format!("line {}: duplicate token {t:?}", i + 1)));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved tokens followed by `words` (which must not repeat them).
    pub fn with_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens = RESERVED_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id <= EOS
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        Self::from_tokens(read_lines(reader)?)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Frequency-ranked vocabulary, ties broken by first occurrence, with at
/// most `max_size` entries including the reserved ones.
pub fn build_vocabulary(side: &[Vec<String>], max_size: usize) -> Result<Vocabulary> {
    if max_size < RESERVED_TOKENS.len() + 1 {
        return Err(HseqError::Config(format!(
            "vocabulary max_size must be at least {}, got {max_size}",
            RESERVED_TOKENS.len() + 1
        )));
    }
    if side.iter().all(|s| s.is_empty()) {
        return Err(HseqError::Empty("vocabulary corpus side".into()));
    }
    // (count, first occurrence)
    let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for tok in side.iter().flatten() {
        if RESERVED_TOKENS.contains(&tok.as_str()) {
            continue;
        }
        let e = stats.entry(tok.as_str()).or_insert((0, order));
        e.0 += 1;
        order += 1;
    }
    let mut ranked: Vec<(&str, usize, usize)> = stats.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(max_size - RESERVED_TOKENS.len());
    Vocabulary::with_words(ranked.into_iter().map(|(t, _, _)| t.to_string()))
}

pub fn numericalize(sentence: &[String], vocab: &Vocabulary, add_sos_eos: bool) -> Vec<usize> {
    let mut ids = Vec::with_capacity(sentence.len() + 2);
    if add_sos_eos {
        ids.push(SOS);
    }
    ids.extend(sentence.iter().map(|t| vocab.id(t)));
    if add_sos_eos {
        ids.push(EOS);
    }
    ids
}

/// Maps ids back to tokens; ids outside the vocabulary render as `<unk>`.
pub fn denumericalize(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&i| vocab.token(i).unwrap_or(RESERVED_TOKENS[UNK]).to_string())
        .collect()
}

/// A source sentence with every distinct reference seen for it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiRefGroup {
    pub source: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// Merges pairs with identical source token sequences. Groups follow the
/// first occurrence of each source; duplicate references are dropped.
pub fn group_multi_references(pairs: &[SentencePair]) -> Vec<MultiRefGroup> {
    let mut slots: HashMap<&[String], usize> = HashMap::new();
    let mut groups: Vec<MultiRefGroup> = Vec::new();
    for p in pairs {
        let i = *slots.entry(p.source.as_slice()).or_insert_with(|| {
            groups.push(MultiRefGroup {
                source: p.source.clone(),
                references: Vec::new(),
            });
            groups.len() - 1
        });
        if !groups[i].references.contains(&p.target) {
            groups[i].references.push(p.target.clone());
        }
    }
    groups
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub original_count: usize,
    pub kept_count: usize,
    pub short_ratio: f64,
    pub long_ratio: f64,
    pub avg_segments: f64,
}

/// Statistics over cleaned `pairs`. A pair is long when its source has more
/// than `rules.threshold` tokens; `avg_segments` is the mean number of
/// source segments produced by `rules`.
pub fn corpus_stats(
    pairs: &[SentencePair],
    original_count: usize,
    rules: &SegmentRuleSet,
) -> Result<CorpusStats> {
    if pairs.is_empty() {
        return Err(HseqError::Empty("corpus".into()));
    }
    let long = pairs
        .iter()
        .filter(|p| p.source_length() > rules.threshold)
        .count();
    let mut segments = 0usize;
    for p in pairs {
        segments += segment(&p.source, rules)?.segments.len();
    }
    let n = pairs.len() as f64;
    let long_ratio = long as f64 / n;
    Ok(CorpusStats {
        original_count: original_count.max(pairs.len()),
        kept_count: pairs.len(),
        short_ratio: 1.0 - long_ratio,
        long_ratio,
        avg_segments: segments as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    fn pair(id: usize, s: &str, t: &str) -> SentencePair {
        SentencePair {
            id,
            source: toks(s),
            target: toks(t),
        }
    }

    #[test]
    fn cleaning_examples() {
        let keep = |p: &[RawPair]| clean_corpus(p, default_illegal);
        assert!(keep(&[RawPair::new("hello", "")]).is_empty());
        assert!(keep(&[RawPair::new("see http://x.com", "见网站")]).is_empty());
        let out = keep(&[RawPair::new("a  b", "甲 乙")]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].to_raw(), RawPair::new("a b", "甲 乙"));
    }

    #[test]
    fn cleaning_drops_foreign_scripts_and_non_chinese_targets() {
        let p = [
            RawPair::new("Привет", "你好"),
            RawPair::new("hello", "hello"),
            RawPair::new("  ok ", " 好 。 "),
            RawPair::new("visit www.example.org", "访问"),
        ];
        let out = clean_corpus(&p, default_illegal);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, vec!["ok"]);
        assert_eq!(out[0].id, 0);
    }

    #[test]
    fn cleaning_keeps_financial_punctuation() {
        let p = [RawPair::new(
            "the “ Basis ” section , 3.5 %",
            "「 意見 」 部分 ， 3.5 %",
        )];
        assert_eq!(clean_corpus(&p, default_illegal).len(), 1);
    }

    #[test]
    fn alignment_error_names_counts() {
        let err = pair_lines(vec!["a".into(); 3], vec!["b".into(); 2]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn vocabulary_frequency_order() {
        let v = build_vocabulary(&[toks("a b a")], 10).unwrap();
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn vocabulary_cap_keeps_first_occurrence_on_ties() {
        let v = build_vocabulary(&[toks("a b c")], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn vocabulary_errors() {
        assert!(build_vocabulary(&[], 10).is_err());
        assert!(build_vocabulary(&[toks("a")], 4).is_err());
        assert!(Vocabulary::read(&b"<pad>\n<unk>\n<eos>\n<sos>\n"[..]).is_err());
        assert!(Vocabulary::read(&b"<pad>\n<unk>\n<sos>\n<eos>\nx\nx\n"[..]).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = build_vocabulary(&[toks("年度 財務 報表 年度")], 100).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"<pad>\n<unk>\n<sos>\n<eos>\n"));
        assert_eq!(Vocabulary::read(&buf[..]).unwrap(), v);
    }

    #[test]
    fn numericalize_examples() {
        let v = Vocabulary::with_words(["a"]).unwrap();
        assert_eq!(numericalize(&toks("a"), &v, false), vec![4]);
        assert_eq!(numericalize(&toks("zzz"), &v, false), vec![UNK]);
        assert_eq!(numericalize(&toks("a"), &v, true), vec![SOS, 4, EOS]);
    }

    #[test]
    fn multi_reference_grouping() {
        let g = group_multi_references(&[pair(0, "s", "t1"), pair(1, "s", "t2")]);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].references, vec![toks("t1"), toks("t2")]);

        let g = group_multi_references(&[pair(0, "s1", "t1"), pair(1, "s2", "t2")]);
        assert_eq!(g.len(), 2);
        assert!(g.iter().all(|x| x.references.len() == 1));

        let g = group_multi_references(&[pair(0, "s", "t1"), pair(1, "s", "t1")]);
        assert_eq!(g[0].references, vec![toks("t1")]);
    }

    #[test]
    fn stats_examples() {
        let rules = SegmentRuleSet::default();
        let long: String = vec!["w"; 60].join(" ");
        let pairs = vec![
            pair(0, "a b", "甲"),
            pair(1, "c d", "乙"),
            pair(2, "e", "丙"),
            pair(3, &long, "丁"),
        ];
        let s = corpus_stats(&pairs, 5, &rules).unwrap();
        assert_eq!(s.long_ratio, 0.25);
        assert_eq!(s.short_ratio + s.long_ratio, 1.0);
        assert_eq!(s.kept_count, 4);
        assert_eq!(s.original_count, 5);

        let s = corpus_stats(&pairs[..3], 3, &rules).unwrap();
        assert_eq!(s.avg_segments, 1.0);
        assert!(corpus_stats(&[], 0, &rules).is_err());
    }

    fn raw_strategy() -> impl Strategy<Value = Vec<RawPair>> {
        let side = prop::collection::vec(
            prop_oneof![
                Just("a".to_string()),
                Just("年".to_string()),
                Just("http://z".to_string()),
                Just("ß".to_string()),
                Just("Ж".to_string()),
                Just("".to_string()),
                Just("  ".to_string()),
                Just("，".to_string()),
            ],
            0..6,
        )
        .prop_map(|v| v.join(" "));
        prop::collection::vec((side.clone(), side).prop_map(|(s, t)| RawPair::new(s, t)), 0..12)
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(raw in raw_strategy()) {
            let once = clean_corpus(&raw, default_illegal);
            let again_raw: Vec<RawPair> = once.iter().map(SentencePair::to_raw).collect();
            let twice = clean_corpus(&again_raw, default_illegal);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn vocabulary_never_exceeds_cap(
            words in prop::collection::vec("[a-e]{1,2}", 1..60),
            cap in 5usize..20,
        ) {
            let v = build_vocabulary(&[words.clone()], cap).unwrap();
            prop_assert!(v.len() <= cap);
            let ids = numericalize(&words, &v, false);
            let back = denumericalize(&ids, &v);
            for (w, b) in words.iter().zip(&back) {
                if v.contains(w) {
                    prop_assert_eq!(w, b);
                }
            }
        }

        #[test]
        fn grouping_partitions_pairs(
            raw in prop::collection::vec((0u8..4, 0u8..3), 0..20)
        ) {
            let pairs: Vec<SentencePair> = raw
                .iter()
                .enumerate()
                .map(|(i, (s, t))| pair(i, &format!("s{s}"), &format!("t{t}")))
                .collect();
            let groups = group_multi_references(&pairs);
            let total: usize = groups.iter().map(|g| g.references.len()).sum();
            prop_assert!(total <= pairs.len());
            for p in &pairs {
                let hits = groups
                    .iter()
                    .filter(|g| g.source == p.source && g.references.contains(&p.target))
                    .count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
