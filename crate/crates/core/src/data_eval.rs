//! Corpus ingestion, synthetic data generation, and evaluation metrics.
//!
//! Corpora are line-delimited JSON: one object per line with `tokens`
//! (a list of number-lists, or a list of strings), `labels`, and optional
//! `durations`. Generators are pure functions of their configuration and a
//! seed, standing in for licensed datasets.

use crate::error::{Error, Result};
use crate::rng::named_stream;
use crate::segcrf::Segment;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Tokens {
    /// Numeric feature vectors, one per token. May also encode strokes as
    /// flattened 4-dim point runs; the model decides the interpretation.
    Vectors(Vec<Vec<f64>>),
    Symbols(Vec<String>),
}

impl Tokens {
    pub fn len(&self) -> usize {
        match self {
            Tokens::Vectors(v) => v.len(),
            Tokens::Symbols(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Points,
    Symbols,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub tokens: Tokens,
    pub labels: Option<Vec<String>>,
    pub durations: Option<Vec<usize>>,
}

impl Instance {
    /// Per-record consistency: non-empty tokens, positive durations summing
    /// to the token count, label/duration length agreement.
    pub fn check(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation("instance has no tokens".into()));
        }
        if let Some(durs) = &self.durations {
            if durs.contains(&0) {
                return Err(Error::Validation("durations must be positive".into()));
            }
            let total: usize = durs.iter().sum();
            if total != self.tokens.len() {
                return Err(Error::Validation(format!(
                    "durations sum to {total} but the instance has {} tokens",
                    self.tokens.len()
                )));
            }
            if let Some(labels) = &self.labels {
                if labels.len() != durs.len() {
                    return Err(Error::Validation(format!(
                        "{} labels but {} durations",
                        labels.len(),
                        durs.len()
                    )));
                }
            }
        }
        if let Some(labels) = &self.labels {
            // An empty list is a legal prediction (a model may emit nothing);
            // gold annotations are additionally validated at training time.
            if labels.len() > self.tokens.len() {
                return Err(Error::Validation(format!(
                    "{} labels for {} tokens",
                    labels.len(),
                    self.tokens.len()
                )));
            }
        }
        Ok(())
    }

    /// Gold segments by label name, when fully annotated.
    pub fn gold_segments(&self) -> Option<Vec<(usize, usize, &str)>> {
        let labels = self.labels.as_ref()?;
        let durs = self.durations.as_ref()?;
        let mut out = Vec::with_capacity(durs.len());
        let mut pos = 0;
        for (d, l) in durs.iter().zip(labels) {
            out.push((pos, *d, l.as_str()));
            pos += d;
        }
        Some(out)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    /// Sorted label inventory.
    pub labels: Vec<String>,
    pub kind: TokenKind,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn collect_inventory(instances: &[Instance]) -> Vec<String> {
        let mut labels: Vec<String> = instances
            .iter()
            .filter_map(|i| i.labels.as_ref())
            .flatten()
            .cloned()
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Unique symbols over all symbol instances, sorted.
    pub fn symbol_inventory(&self) -> Vec<String> {
        let mut syms: Vec<String> = self
            .instances
            .iter()
            .filter_map(|i| match &i.tokens {
                Tokens::Symbols(s) => Some(s.iter().cloned()),
                _ => None,
            })
            .flatten()
            .collect();
        syms.sort();
        syms.dedup();
        syms
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawTokens {
    Symbols(Vec<String>),
    Vectors(Vec<Vec<f64>>),
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    tokens: RawTokens,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    durations: Option<Vec<usize>>,
}

/// Load and validate a corpus. `max_seg_len` additionally rejects gold
/// segments longer than the configured bound, listing the offending lines.
pub fn load_corpus(path: &Path, max_seg_len: Option<usize>) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut instances = Vec::new();
    let mut kind: Option<TokenKind> = None;
    let mut over_long: Vec<usize> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::CorpusParse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let tokens = match raw.tokens {
            RawTokens::Symbols(s) => Tokens::Symbols(s),
            RawTokens::Vectors(v) => Tokens::Vectors(v),
        };
        let this_kind = match &tokens {
            Tokens::Vectors(_) => TokenKind::Points,
            Tokens::Symbols(_) => TokenKind::Symbols,
        };
        match kind {
            None => kind = Some(this_kind),
            Some(k) if k != this_kind => {
                return Err(Error::CorpusParse {
                    line: lineno,
                    msg: "mixed token kinds in one corpus".into(),
                })
            }
            _ => {}
        }
        let inst = Instance { tokens, labels: raw.labels, durations: raw.durations };
        inst.check().map_err(|e| Error::CorpusParse { line: lineno, msg: e.to_string() })?;
        if let (Some(l), Some(durs)) = (max_seg_len, &inst.durations) {
            if durs.iter().any(|&d| d > l) {
                over_long.push(lineno);
            }
        }
        instances.push(inst);
    }
    if instances.is_empty() {
        return Err(Error::Validation("empty corpus".into()));
    }
    if !over_long.is_empty() {
        return Err(Error::Validation(format!(
            "gold segments longer than the maximum segment length {} on lines {:?}",
            max_seg_len.unwrap(),
            over_long
        )));
    }
    let labels = Corpus::collect_inventory(&instances);
    Ok(Corpus { instances, labels, kind: kind.unwrap() })
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in &corpus.instances {
        let raw = RawRecord {
            tokens: match &inst.tokens {
                Tokens::Vectors(v) => RawTokens::Vectors(v.clone()),
                Tokens::Symbols(s) => RawTokens::Symbols(s.clone()),
            },
            labels: inst.labels.clone(),
            durations: inst.durations.clone(),
        };
        serde_json::to_writer(&mut file, &raw).map_err(|e| Error::Validation(e.to_string()))?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/// Configuration for the segmental vector-token generator. Each label has a
/// fixed mean vector; its segments draw durations from a per-label range, so
/// duration correlates strongly with label identity.
#[derive(Debug, Clone)]
pub struct SegmentalGenConfig {
    pub n_instances: usize,
    pub n_labels: usize,
    /// Inclusive duration range per label.
    pub dur_ranges: Vec<(usize, usize)>,
    pub sigma: f64,
    pub dim: usize,
    /// Inclusive range of segments per instance.
    pub segments: (usize, usize),
}

impl SegmentalGenConfig {
    pub fn new(n_instances: usize, n_labels: usize) -> Self {
        SegmentalGenConfig {
            n_instances,
            n_labels,
            dur_ranges: (0..n_labels).map(|y| (y % 4 + 1, y % 4 + 1)).collect(),
            sigma: 0.1,
            dim: n_labels.max(2),
            segments: (2, 6),
        }
    }

    pub fn max_duration(&self) -> usize {
        self.dur_ranges.iter().map(|&(_, hi)| hi).max().unwrap_or(1)
    }
}

fn label_mean(y: usize, dim: usize) -> Vec<f64> {
    let mut mu = vec![0.0; dim];
    mu[y % dim] += 1.0;
    if y >= dim {
        mu[(y / dim) % dim] += 0.5;
    }
    mu
}

pub fn label_name(y: usize) -> String {
    format!("L{y}")
}

pub fn gen_synthetic_segmental(cfg: &SegmentalGenConfig, seed: u64) -> Corpus {
    assert_eq!(cfg.dur_ranges.len(), cfg.n_labels);
    assert!(cfg.dur_ranges.iter().all(|&(lo, hi)| lo >= 1 && hi >= lo));
    let mut rng = named_stream(seed, "data-gen");
    let noise = Normal::new(0.0, cfg.sigma.max(0.0)).unwrap();
    let mut instances = Vec::with_capacity(cfg.n_instances);
    for _ in 0..cfg.n_instances {
        let n_segs = rng.gen_range(cfg.segments.0..=cfg.segments.1);
        let mut tokens = Vec::new();
        let mut labels = Vec::with_capacity(n_segs);
        let mut durations = Vec::with_capacity(n_segs);
        for _ in 0..n_segs {
            let y = rng.gen_range(0..cfg.n_labels);
            let (lo, hi) = cfg.dur_ranges[y];
            let z = rng.gen_range(lo..=hi);
            let mu = label_mean(y, cfg.dim);
            for _ in 0..z {
                let tok: Vec<f64> = mu
                    .iter()
                    .map(|&m| if cfg.sigma > 0.0 { m + noise.sample(&mut rng) } else { m })
                    .collect();
                tokens.push(tok);
            }
            labels.push(label_name(y));
            durations.push(z);
        }
        instances.push(Instance {
            tokens: Tokens::Vectors(tokens),
            labels: Some(labels),
            durations: Some(durations),
        });
    }
    let labels = Corpus::collect_inventory(&instances);
    Corpus { instances, labels, kind: TokenKind::Points }
}

/// Configuration for the synthetic handwriting generator: each character of
/// the alphabet maps to a fixed prototype of 1–3 strokes; words concatenate
/// characters, and each token is one stroke (flattened 4-dim points).
#[derive(Debug, Clone)]
pub struct StrokesGenConfig {
    pub n_instances: usize,
    pub alphabet: Vec<char>,
    pub jitter: f64,
    /// Inclusive range of characters per word.
    pub chars_per_word: (usize, usize),
}

impl StrokesGenConfig {
    pub fn new(n_instances: usize, alphabet: &str) -> Self {
        StrokesGenConfig {
            n_instances,
            alphabet: alphabet.chars().collect(),
            jitter: 0.01,
            chars_per_word: (1, 5),
        }
    }
}

/// Raw prototype paths for one character: 1–3 strokes of 3–6 points each,
/// inside the unit square. Strokes never span characters.
fn char_prototype(c: char, seed: u64) -> Vec<Vec<(f64, f64)>> {
    let mut rng = named_stream(seed, &format!("proto-{c}"));
    let n_strokes = rng.gen_range(1..=3);
    (0..n_strokes)
        .map(|_| {
            let n_points = rng.gen_range(3..=6);
            let mut x: f64 = rng.gen_range(0.1..0.9);
            let mut y: f64 = rng.gen_range(0.1..0.9);
            (0..n_points)
                .map(|_| {
                    x = (x + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0);
                    y = (y + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0);
                    (x, y)
                })
                .collect()
        })
        .collect()
}

pub fn gen_synthetic_strokes(cfg: &StrokesGenConfig, seed: u64) -> Corpus {
    assert!(!cfg.alphabet.is_empty(), "alphabet must be non-empty");
    let protos: Vec<Vec<Vec<(f64, f64)>>> =
        cfg.alphabet.iter().map(|&c| char_prototype(c, seed)).collect();
    let mut rng = named_stream(seed, "data-gen-strokes");
    let mut instances = Vec::with_capacity(cfg.n_instances);
    for _ in 0..cfg.n_instances {
        let n_chars = rng.gen_range(cfg.chars_per_word.0..=cfg.chars_per_word.1);
        let mut tokens = Vec::new();
        let mut labels = Vec::with_capacity(n_chars);
        let mut durations = Vec::with_capacity(n_chars);
        for _ in 0..n_chars {
            let ci = rng.gen_range(0..cfg.alphabet.len());
            for stroke in &protos[ci] {
                let jittered: Vec<(f64, f64)> = stroke
                    .iter()
                    .map(|&(x, y)| {
                        (
                            (x + rng.gen_range(-cfg.jitter..=cfg.jitter)).clamp(0.0, 1.0),
                            (y + rng.gen_range(-cfg.jitter..=cfg.jitter)).clamp(0.0, 1.0),
                        )
                    })
                    .collect();
                let feats = crate::encoder::stroke_features(&jittered);
                tokens.push(feats.into_iter().flatten().collect::<Vec<f64>>());
            }
            labels.push(cfg.alphabet[ci].to_string());
            durations.push(protos[ci].len());
        }
        instances.push(Instance {
            tokens: Tokens::Vectors(tokens),
            labels: Some(labels),
            durations: Some(durations),
        });
    }
    let labels = Corpus::collect_inventory(&instances);
    Corpus { instances, labels, kind: TokenKind::Points }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Corpus-level precision/recall/F₁ at the segment and tag level, plus the
/// edit-distance label error rate. A predicted segment is seg-correct when
/// its (start, duration) matches a gold segment, and tag-correct when the
/// label matches too.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegMetrics {
    pub p_seg: f64,
    pub r_seg: f64,
    pub f_seg: f64,
    pub p_tag: f64,
    pub r_tag: f64,
    pub f_tag: f64,
    pub error_rate: f64,
}

impl SegMetrics {
    /// Tab-separated table: header line then one value row.
    pub fn table(&self) -> String {
        format!(
            "P_seg\tR_seg\tF_seg\tP_tag\tR_tag\tF_tag\tError\n{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            self.p_seg, self.r_seg, self.f_seg, self.p_tag, self.r_tag, self.f_tag, self.error_rate
        )
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Edit distance over arbitrary comparable slices.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Per-instance predictions: a full segmentation (labels by name), or a bare
/// label sequence for models that do not segment.
#[derive(Debug, Clone)]
pub enum Prediction {
    Segments(Vec<(usize, usize, String)>),
    Labels(Vec<String>),
}

impl Prediction {
    pub fn from_segments(segments: &[Segment], inventory: &[String]) -> Self {
        Prediction::Segments(
            segments
                .iter()
                .map(|s| (s.start, s.len, inventory[s.label].clone()))
                .collect(),
        )
    }

    pub fn labels(&self) -> Vec<&str> {
        match self {
            Prediction::Segments(segs) => segs.iter().map(|(_, _, l)| l.as_str()).collect(),
            Prediction::Labels(ls) => ls.iter().map(String::as_str).collect(),
        }
    }
}

/// Score predictions against gold annotations.
pub fn evaluate(pred: &[Prediction], gold: &[&Instance]) -> Result<SegMetrics> {
    if pred.len() != gold.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} gold instances",
            pred.len(),
            gold.len()
        )));
    }
    let mut seg_match = 0;
    let mut tag_match = 0;
    let mut total_pred = 0;
    let mut total_gold = 0;
    let mut edit_sum = 0;
    let mut gold_label_total = 0;

    for (p, g) in pred.iter().zip(gold) {
        let gold_segs = g.gold_segments();
        if let (Prediction::Segments(ps), Some(gs)) = (p, &gold_segs) {
            let pred_tokens: usize = ps.iter().map(|(_, d, _)| d).sum();
            if pred_tokens != g.tokens.len() {
                return Err(Error::Validation(format!(
                    "prediction covers {pred_tokens} tokens, instance has {}",
                    g.tokens.len()
                )));
            }
            total_pred += ps.len();
            total_gold += gs.len();
            for (start, dur, label) in ps {
                if gs.iter().any(|(s, d, _)| s == start && d == dur) {
                    seg_match += 1;
                }
                if gs
                    .iter()
                    .any(|(s, d, l)| s == start && d == dur && *l == label.as_str())
                {
                    tag_match += 1;
                }
            }
        } else if let Some(gs) = &gold_segs {
            total_gold += gs.len();
        }
        let gold_labels = g
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("gold instance lacks labels".into()))?;
        let gold_names: Vec<&str> = gold_labels.iter().map(String::as_str).collect();
        edit_sum += levenshtein(&p.labels(), &gold_names);
        gold_label_total += gold_names.len();
    }

    let p_seg = ratio(seg_match, total_pred);
    let r_seg = ratio(seg_match, total_gold);
    let p_tag = ratio(tag_match, total_pred);
    let r_tag = ratio(tag_match, total_gold);
    Ok(SegMetrics {
        p_seg,
        r_seg,
        f_seg: f1(p_seg, r_seg),
        p_tag,
        r_tag,
        f_tag: f1(p_tag, r_tag),
        error_rate: if gold_label_total == 0 { 0.0 } else { edit_sum as f64 / gold_label_total as f64 },
    })
}

pub fn shuffle_order<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_file_is_an_error() {
        let (_d, path) = write_lines(&[]);
        let err = load_corpus(&path, None).unwrap_err();
        assert!(err.to_string().contains("empty corpus"));
    }

    #[test]
    fn consistent_record_is_accepted() {
        let (_d, path) = write_lines(&[
            r#"{"tokens": ["a", "b", "c"], "labels": ["X", "Y"], "durations": [2, 1]}"#,
        ]);
        let c = load_corpus(&path, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.labels, vec!["X", "Y"]);
        assert_eq!(c.kind, TokenKind::Symbols);
        assert_eq!(c.symbol_inventory(), vec!["a", "b", "c"]);
    }

    #[test]
    fn duration_sum_mismatch_is_rejected() {
        let (_d, path) = write_lines(&[
            r#"{"tokens": [[0.0], [0.1], [0.2]], "labels": ["X", "Y"], "durations": [2, 2]}"#,
        ]);
        let err = load_corpus(&path, None).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let (_d, path) = write_lines(&[
            r#"{"tokens": [[0.0]], "labels": ["X"], "durations": [1]}"#,
            r#"{"tokens": nope}"#,
        ]);
        let err = load_corpus(&path, None).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn over_long_segments_are_listed() {
        let (_d, path) = write_lines(&[
            r#"{"tokens": [[0.0], [0.1], [0.2]], "labels": ["X"], "durations": [3]}"#,
        ]);
        let err = load_corpus(&path, Some(2)).unwrap_err();
        assert!(err.to_string().contains("[1]"), "{err}");
        assert!(load_corpus(&path, Some(3)).is_ok());
    }

    #[test]
    fn corpus_roundtrips_through_disk() {
        let cfg = SegmentalGenConfig::new(5, 3);
        let c = gen_synthetic_segmental(&cfg, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        save_corpus(&path, &c).unwrap();
        let c2 = load_corpus(&path, None).unwrap();
        assert_eq!(c.len(), c2.len());
        assert_eq!(c.labels, c2.labels);
        for (a, b) in c.instances.iter().zip(&c2.instances) {
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.durations, b.durations);
        }
    }

    #[test]
    fn segmental_generator_is_deterministic() {
        let cfg = SegmentalGenConfig::new(10, 2);
        let a = gen_synthetic_segmental(&cfg, 7);
        let b = gen_synthetic_segmental(&cfg, 7);
        for (x, y) in a.instances.iter().zip(&b.instances) {
            assert_eq!(x.tokens, y.tokens);
        }
        let c = gen_synthetic_segmental(&cfg, 8);
        assert!(a.instances.iter().zip(&c.instances).any(|(x, y)| x.tokens != y.tokens));
    }

    #[test]
    fn zero_sigma_gives_identical_tokens_within_segments() {
        let mut cfg = SegmentalGenConfig::new(10, 3);
        cfg.sigma = 0.0;
        let c = gen_synthetic_segmental(&cfg, 3);
        for inst in &c.instances {
            let Tokens::Vectors(toks) = &inst.tokens else { panic!() };
            let durs = inst.durations.as_ref().unwrap();
            let mut pos = 0;
            for &d in durs {
                for k in 1..d {
                    assert_eq!(toks[pos], toks[pos + k]);
                }
                pos += d;
            }
        }
    }

    #[test]
    fn label_duration_histogram_matches_profile() {
        // Durations are uniform within each label's range; with 1000
        // instances every (label, duration) cell must sit within 3σ of its
        // multinomial expectation.
        let mut cfg = SegmentalGenConfig::new(1000, 3);
        cfg.dur_ranges = vec![(1, 2), (3, 4), (2, 5)];
        let c = gen_synthetic_segmental(&cfg, 11);
        let mut counts: Vec<std::collections::HashMap<usize, usize>> =
            (0..3).map(|_| Default::default()).collect();
        let mut label_totals = [0usize; 3];
        for inst in &c.instances {
            let labels = inst.labels.as_ref().unwrap();
            let durs = inst.durations.as_ref().unwrap();
            for (l, &d) in labels.iter().zip(durs) {
                let y: usize = l[1..].parse().unwrap();
                *counts[y].entry(d).or_default() += 1;
                label_totals[y] += 1;
            }
        }
        for y in 0..3 {
            let (lo, hi) = cfg.dur_ranges[y];
            let p = 1.0 / (hi - lo + 1) as f64;
            let n = label_totals[y] as f64;
            for d in lo..=hi {
                let observed = *counts[y].get(&d).unwrap_or(&0) as f64;
                let sigma = (n * p * (1.0 - p)).sqrt();
                assert!(
                    (observed - n * p).abs() <= 3.0 * sigma,
                    "label {y} duration {d}: {observed} vs expected {}",
                    n * p
                );
            }
            // No durations outside the configured range.
            assert!(counts[y].keys().all(|&d| d >= lo && d <= hi));
        }
    }

    #[test]
    fn strokes_generator_contract() {
        let mut cfg = StrokesGenConfig::new(6, "ab");
        cfg.jitter = 0.0;
        cfg.chars_per_word = (1, 1);
        let c = gen_synthetic_strokes(&cfg, 9);
        // Single-character words have exactly one segment.
        for inst in &c.instances {
            assert_eq!(inst.labels.as_ref().unwrap().len(), 1);
            let durs = inst.durations.as_ref().unwrap();
            assert_eq!(durs.len(), 1);
            let Tokens::Vectors(toks) = &inst.tokens else { panic!() };
            assert_eq!(toks.len(), durs[0]);
            for stroke in toks {
                assert_eq!(stroke.len() % 4, 0);
                // First point of each stroke has Δp = (0, 0).
                assert_eq!(stroke[2], 0.0);
                assert_eq!(stroke[3], 0.0);
            }
        }
        // Zero jitter: strokes of the same character are identical across
        // instances.
        let mut by_label = std::collections::HashMap::<String, Vec<f64>>::new();
        for inst in &c.instances {
            let label = inst.labels.as_ref().unwrap()[0].clone();
            let Tokens::Vectors(toks) = &inst.tokens else { panic!() };
            let flat: Vec<f64> = toks.iter().flatten().copied().collect();
            if let Some(prev) = by_label.get(&label) {
                assert_eq!(prev, &flat);
            } else {
                by_label.insert(label, flat);
            }
        }
    }

    fn inst(n: usize, labels: &[&str], durs: &[usize]) -> Instance {
        Instance {
            tokens: Tokens::Vectors(vec![vec![0.0]; n]),
            labels: Some(labels.iter().map(|s| s.to_string()).collect()),
            durations: Some(durs.to_vec()),
        }
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = inst(3, &["N", "V"], &[2, 1]);
        let pred = Prediction::Segments(vec![
            (0, 2, "N".to_string()),
            (2, 1, "V".to_string()),
        ]);
        let m = evaluate(&[pred], &[&gold]).unwrap();
        assert_eq!(m.p_seg, 1.0);
        assert_eq!(m.r_seg, 1.0);
        assert_eq!(m.f_tag, 1.0);
        assert_eq!(m.error_rate, 0.0);
    }

    #[test]
    fn whole_sequence_prediction_misses_all_boundaries() {
        let gold = inst(3, &["A", "B", "A"], &[1, 1, 1]);
        let pred = Prediction::Segments(vec![(0, 3, "A".to_string())]);
        let m = evaluate(&[pred], &[&gold]).unwrap();
        assert_eq!(m.p_seg, 0.0);
        assert_eq!(m.r_seg, 0.0);
        assert_eq!(m.f_seg, 0.0);
    }

    #[test]
    fn tag_metrics_require_label_match() {
        // Boundaries right, one label wrong: seg 1.0, tag 0.5.
        let gold = inst(3, &["N", "V"], &[2, 1]);
        let pred = Prediction::Segments(vec![
            (0, 2, "N".to_string()),
            (2, 1, "N".to_string()),
        ]);
        let m = evaluate(&[pred], &[&gold]).unwrap();
        assert_eq!(m.p_seg, 1.0);
        assert_eq!(m.r_seg, 1.0);
        assert_eq!(m.p_tag, 0.5);
        assert_eq!(m.r_tag, 0.5);
        // One substitution over two gold labels.
        assert_eq!(m.error_rate, 0.5);
    }

    #[test]
    fn swapping_pred_and_gold_swaps_precision_and_recall() {
        let a = inst(4, &["A", "B", "A"], &[2, 1, 1]);
        let b = inst(4, &["A", "B"], &[2, 2]);
        let pa = Prediction::Segments(vec![(0, 2, "A".into()), (2, 1, "B".into()), (3, 1, "A".into())]);
        let pb = Prediction::Segments(vec![(0, 2, "A".into()), (2, 2, "B".into())]);
        let m1 = evaluate(std::slice::from_ref(&pb), &[&a]).unwrap();
        let m2 = evaluate(&[pa], &[&b]).unwrap();
        assert!((m1.p_seg - m2.r_seg).abs() < 1e-12);
        assert!((m1.r_seg - m2.p_seg).abs() < 1e-12);
    }

    #[test]
    fn error_rate_bounds() {
        // Zero iff identical label sequences; bounded by the worst-case
        // length ratio when predictions run long.
        let gold = inst(2, &["A", "B"], &[1, 1]);
        let same = Prediction::Labels(vec!["A".into(), "B".into()]);
        assert_eq!(evaluate(&[same], &[&gold]).unwrap().error_rate, 0.0);

        let long = Prediction::Labels(vec!["C".into(); 6]);
        let m = evaluate(&[long], &[&gold]).unwrap();
        assert!(m.error_rate > 1.0);
        assert!(m.error_rate <= 6.0 / 2.0);
    }

    #[test]
    fn levenshtein_basics() {
        assert_eq!(levenshtein::<u8>(&[], &[]), 0);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(levenshtein(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(levenshtein(&[1], &[2, 3]), 2);
    }
}
