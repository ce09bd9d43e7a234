//! Comparison systems sharing the encoder front end: a BIO tagger decoded
//! greedily per position, and a CTC model whose interpretation rule removes
//! blanks but never merges repeated labels, so every non-blank frame emits
//! exactly one output token.

use crate::diffgraph::{NodeId, ParamId, Tape};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::segcrf::{LabelId, Segment};

// ---------------------------------------------------------------------------
// BIO tagging
// ---------------------------------------------------------------------------

/// Tag ids compose base labels with B/I: `2y` is B-y, `2y + 1` is I-y.
pub fn bio_tag(label: LabelId, begin: bool) -> usize {
    2 * label + usize::from(!begin)
}

pub fn bio_tag_label(tag: usize) -> LabelId {
    tag / 2
}

pub fn bio_tag_is_begin(tag: usize) -> bool {
    tag.is_multiple_of(2)
}

/// Per-position tagging head: elementwise tanh on the context vector, then
/// an affine map to the 2·|Y| tag logits.
#[derive(Debug, Clone)]
pub struct BioHead {
    pub n_labels: usize,
    w: ParamId,
    b: ParamId,
}

impl BioHead {
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        n_labels: usize,
        context_dim: usize,
    ) -> Self {
        use crate::params::InitKind;
        BioHead {
            n_labels,
            w: params.register_init(
                &format!("{prefix}.w"),
                vec![2 * n_labels, context_dim],
                InitKind::Glorot,
            ),
            b: params.register_init(&format!("{prefix}.b"), vec![2 * n_labels], InitKind::Zero),
        }
    }

    pub fn n_tags(&self) -> usize {
        2 * self.n_labels
    }
}

/// Tag logits for every position.
pub fn bio_logits(
    tape: &mut Tape,
    params: &ModelParams,
    head: &BioHead,
    context: &[NodeId],
) -> Result<Vec<NodeId>> {
    if context.is_empty() {
        return Err(Error::EmptyInput("bio_logits"));
    }
    let w = params.node(tape, head.w);
    let b = params.node(tape, head.b);
    context
        .iter()
        .map(|&c| {
            let phi = tape.tanh(c);
            tape.affine(w, phi, b)
        })
        .collect()
}

/// Greedy per-position decode to tag ids.
pub fn bio_decode(tape: &Tape, logits: &[NodeId]) -> Vec<usize> {
    logits
        .iter()
        .map(|&l| {
            let data = tape.value(l).data();
            let mut best = 0;
            for (i, &v) in data.iter().enumerate() {
                if v > data[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Sum of per-position negative log softmax probabilities of the gold tags.
pub fn bio_loss(
    tape: &mut Tape,
    logits: &[NodeId],
    gold_tags: &[usize],
) -> Result<NodeId> {
    if logits.len() != gold_tags.len() {
        return Err(Error::Validation(format!(
            "{} positions but {} gold tags",
            logits.len(),
            gold_tags.len()
        )));
    }
    let mut terms = Vec::with_capacity(logits.len());
    for (&l, &gold) in logits.iter().zip(gold_tags) {
        let k = tape.value(l).numel();
        let picks: Vec<NodeId> = (0..k).map(|i| tape.pick(l, i)).collect::<Result<_>>()?;
        let norm = tape.log_sum_exp(&picks)?;
        let gold_score = picks
            .get(gold)
            .copied()
            .ok_or_else(|| Error::Validation(format!("gold tag {gold} out of range {k}")))?;
        terms.push(tape.sub(norm, gold_score)?);
    }
    tape.sum(&terms)
}

/// Gold tag sequence for a segmentation: B at each segment start, I inside.
pub fn segments_to_bio(segments: &[Segment]) -> Vec<usize> {
    let mut tags = Vec::new();
    for s in segments {
        tags.push(bio_tag(s.label, true));
        for _ in 1..s.len {
            tags.push(bio_tag(s.label, false));
        }
    }
    tags
}

/// Convert tags back to segments. Every tag sequence is accepted: an I that
/// does not continue a same-label segment is repaired to a B.
pub fn bio_to_segments(tags: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (pos, &tag) in tags.iter().enumerate() {
        let label = bio_tag_label(tag);
        let continues = !bio_tag_is_begin(tag)
            && out
                .last()
                .is_some_and(|s| s.label == label && s.start + s.len == pos);
        if continues {
            out.last_mut().unwrap().len += 1;
        } else {
            out.push(Segment { start: pos, len: 1, label });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// CTC
// ---------------------------------------------------------------------------

/// Per-frame head over labels plus blank. The blank symbol is the last
/// index, `n_labels`.
#[derive(Debug, Clone)]
pub struct CtcHead {
    pub n_labels: usize,
    w: ParamId,
    b: ParamId,
}

impl CtcHead {
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        n_labels: usize,
        context_dim: usize,
    ) -> Self {
        use crate::params::InitKind;
        CtcHead {
            n_labels,
            w: params.register_init(
                &format!("{prefix}.w"),
                vec![n_labels + 1, context_dim],
                InitKind::Glorot,
            ),
            b: params.register_init(&format!("{prefix}.b"), vec![n_labels + 1], InitKind::Zero),
        }
    }

    pub fn blank(&self) -> usize {
        self.n_labels
    }

    pub fn n_symbols(&self) -> usize {
        self.n_labels + 1
    }
}

/// Normalized per-frame log probabilities: `log_probs[t][s]` is a scalar
/// node for symbol `s` at frame `t` (blank last).
pub fn ctc_frame_log_probs(
    tape: &mut Tape,
    params: &ModelParams,
    head: &CtcHead,
    context: &[NodeId],
) -> Result<Vec<Vec<NodeId>>> {
    if context.is_empty() {
        return Err(Error::EmptyInput("ctc_frame_log_probs"));
    }
    let w = params.node(tape, head.w);
    let b = params.node(tape, head.b);
    let mut out = Vec::with_capacity(context.len());
    for &c in context {
        let phi = tape.tanh(c);
        let logits = tape.affine(w, phi, b)?;
        let picks: Vec<NodeId> =
            (0..head.n_symbols()).map(|s| tape.pick(logits, s)).collect::<Result<_>>()?;
        let norm = tape.log_sum_exp(&picks)?;
        let row: Vec<NodeId> = picks
            .into_iter()
            .map(|p| tape.sub(p, norm))
            .collect::<Result<_>>()?;
        out.push(row);
    }
    Ok(out)
}

/// log of the summed probability of every frame labeling whose
/// interpretation equals the reference.
///
/// Under the no-merge interpretation each non-blank frame emits one
/// reference token, so the lattice state is just the count of consumed
/// reference labels: self loops happen only on blank, and a non-blank frame
/// must emit the next reference label. (A last-frame-was-blank flag would
/// never influence any transition, so it is not tracked.)
#[allow(clippy::needless_range_loop)]
pub fn ctc_log_marginal(
    tape: &mut Tape,
    log_probs: &[Vec<NodeId>],
    reference: &[LabelId],
) -> Result<NodeId> {
    let frames = log_probs.len();
    if frames == 0 {
        return Err(Error::EmptyInput("ctc_log_marginal"));
    }
    let blank = log_probs[0].len() - 1;
    for (i, &y) in reference.iter().enumerate() {
        if y >= blank {
            return Err(Error::Validation(format!(
                "reference symbol {i} has id {y}, inventory holds {blank}"
            )));
        }
    }
    if reference.len() > frames {
        return Ok(tape.scalar_leaf(f64::NEG_INFINITY));
    }
    // beta[m]: log mass of prefixes with m reference labels consumed.
    let mut beta: Vec<Option<NodeId>> = vec![None; reference.len() + 1];
    beta[0] = Some(tape.scalar_leaf(0.0));
    for t in 0..frames {
        let mut next: Vec<Option<NodeId>> = vec![None; reference.len() + 1];
        for m in 0..=reference.len() {
            let mut terms = Vec::new();
            if let Some(prev) = beta[m] {
                terms.push(tape.add(prev, log_probs[t][blank])?);
            }
            if m > 0 {
                if let Some(prev) = beta[m - 1] {
                    terms.push(tape.add(prev, log_probs[t][reference[m - 1]])?);
                }
            }
            if !terms.is_empty() {
                next[m] = Some(tape.log_sum_exp(&terms)?);
            }
        }
        beta = next;
    }
    match beta[reference.len()] {
        Some(node) => Ok(node),
        None => Ok(tape.scalar_leaf(f64::NEG_INFINITY)),
    }
}

/// Per-frame argmax symbols (blank included).
pub fn ctc_best_frames(tape: &Tape, log_probs: &[Vec<NodeId>]) -> Vec<usize> {
    log_probs
        .iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = tape.scalar_value(row[0]);
            for (s, &node) in row.iter().enumerate().skip(1) {
                let v = tape.scalar_value(node);
                if v > best_v {
                    best = s;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

/// Interpretation: drop blanks, keep repeats.
pub fn ctc_interpret(frames: &[usize], blank: usize) -> Vec<LabelId> {
    frames.iter().copied().filter(|&s| s != blank).collect()
}

/// Best-path decoding: argmax per frame, then interpret.
pub fn ctc_best_path_decode(tape: &Tape, log_probs: &[Vec<NodeId>]) -> Vec<LabelId> {
    let blank = log_probs[0].len() - 1;
    ctc_interpret(&ctc_best_frames(tape, log_probs), blank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::Tensor;
    use crate::numerics::log_sum_exp;
    use crate::oracle::all_references;
    use crate::rng::named_stream;
    use rand::Rng;

    #[test]
    fn bio_tag_ids_roundtrip() {
        assert_eq!(bio_tag(2, true), 4);
        assert_eq!(bio_tag(2, false), 5);
        assert_eq!(bio_tag_label(5), 2);
        assert!(bio_tag_is_begin(4));
        assert!(!bio_tag_is_begin(5));
    }

    #[test]
    fn bio_conversion_examples() {
        // [B-N, I-N, B-V] → (0,2,N), (2,1,V) with N=0, V=1.
        let tags = vec![bio_tag(0, true), bio_tag(0, false), bio_tag(1, true)];
        let segs = bio_to_segments(&tags);
        assert_eq!(
            segs,
            vec![
                Segment { start: 0, len: 2, label: 0 },
                Segment { start: 2, len: 1, label: 1 }
            ]
        );
        // A leading I is repaired to B.
        let segs = bio_to_segments(&[bio_tag(0, false)]);
        assert_eq!(segs, vec![Segment { start: 0, len: 1, label: 0 }]);
        // I after a different label is repaired too.
        let segs = bio_to_segments(&[bio_tag(1, true), bio_tag(0, false)]);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[1].label, 0);
    }

    #[test]
    fn bio_roundtrip_is_identity_for_all_valid_segmentations() {
        // Exhaustive over n ≤ 6, two labels.
        fn recur(n: usize, pos: usize, segs: &mut Vec<Segment>, count: &mut usize) {
            if pos == n {
                let tags = segments_to_bio(segs);
                assert_eq!(&bio_to_segments(&tags), segs);
                *count += 1;
                return;
            }
            for len in 1..=n - pos {
                for label in 0..2 {
                    segs.push(Segment { start: pos, len, label });
                    recur(n, pos + len, segs, count);
                    segs.pop();
                }
            }
        }
        let mut count = 0;
        for n in 1..=6 {
            recur(n, 0, &mut Vec::new(), &mut count);
        }
        assert!(count > 100);
    }

    fn random_context(tape: &mut Tape, n: usize, dim: usize, seed: u64) -> Vec<NodeId> {
        let mut rng = named_stream(seed, "ctx");
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                tape.leaf(Tensor::vector(v))
            })
            .collect()
    }

    #[test]
    fn bio_softmax_rows_normalize() {
        let mut params = ModelParams::new();
        let head = BioHead::register(&mut params, "bio", 3, 6);
        params.init_uniform(&mut named_stream(1, "init"), -0.5, 0.5);
        let mut tape = Tape::new();
        let ctx = random_context(&mut tape, 4, 6, 1);
        let logits = bio_logits(&mut tape, &params, &head, &ctx).unwrap();
        for l in logits {
            let data = tape.value(l).data().to_vec();
            let z = log_sum_exp(&data);
            let total: f64 = data.iter().map(|v| (v - z).exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bio_decode_is_deterministic_and_sized() {
        let mut params = ModelParams::new();
        let head = BioHead::register(&mut params, "bio", 2, 4);
        params.init_uniform(&mut named_stream(2, "init"), -0.5, 0.5);
        let mut tape = Tape::new();
        let ctx = random_context(&mut tape, 1, 4, 2);
        let logits = bio_logits(&mut tape, &params, &head, &ctx).unwrap();
        let tags = bio_decode(&tape, &logits);
        assert_eq!(tags.len(), 1);
        assert_eq!(tags, bio_decode(&tape, &logits));
    }

    /// Random normalized frame log-probabilities as constant nodes.
    fn random_frames(
        tape: &mut Tape,
        frames: usize,
        symbols: usize,
        seed: u64,
    ) -> Vec<Vec<NodeId>> {
        let mut rng = named_stream(seed, "frames");
        (0..frames)
            .map(|_| {
                let logits: Vec<f64> = (0..symbols).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let z = log_sum_exp(&logits);
                logits.iter().map(|&v| tape.scalar_leaf(v - z)).collect()
            })
            .collect()
    }

    #[test]
    fn ctc_single_frame_single_symbol() {
        let mut tape = Tape::new();
        let frames = random_frames(&mut tape, 1, 3, 3);
        let z = ctc_log_marginal(&mut tape, &frames, &[1]).unwrap();
        assert!((tape.scalar_value(z) - tape.scalar_value(frames[0][1])).abs() < 1e-12);
    }

    #[test]
    fn ctc_repeated_reference_forces_both_frames() {
        // Reference "aa" over two frames leaves no room for a blank.
        let mut tape = Tape::new();
        let frames = random_frames(&mut tape, 2, 2, 4);
        let z = ctc_log_marginal(&mut tape, &frames, &[0, 0]).unwrap();
        let expect = tape.scalar_value(frames[0][0]) + tape.scalar_value(frames[1][0]);
        assert!((tape.scalar_value(z) - expect).abs() < 1e-12);
    }

    #[test]
    fn ctc_over_long_reference_is_neg_inf() {
        let mut tape = Tape::new();
        let frames = random_frames(&mut tape, 2, 2, 5);
        let z = ctc_log_marginal(&mut tape, &frames, &[0, 0, 0]).unwrap();
        assert_eq!(tape.scalar_value(z), f64::NEG_INFINITY);
    }

    #[test]
    fn ctc_interpretation_rules() {
        // Blanks removed, repeats kept.
        assert_eq!(ctc_interpret(&[2, 2, 2], 2), Vec::<usize>::new());
        assert_eq!(ctc_interpret(&[0, 2, 0], 2), vec![0, 0]);
        assert_eq!(ctc_interpret(&[0, 0], 2), vec![0, 0]);
    }

    #[test]
    fn ctc_marginal_matches_frame_enumeration() {
        // Brute force: sum over all (|Y|+1)^T frame labelings whose
        // interpretation equals the reference.
        for (frames_n, n_labels, seed) in [(3usize, 2usize, 6u64), (5, 2, 7), (4, 3, 8)] {
            let mut tape = Tape::new();
            let frames = random_frames(&mut tape, frames_n, n_labels + 1, seed);
            let values: Vec<Vec<f64>> = frames
                .iter()
                .map(|row| row.iter().map(|&n| tape.scalar_value(n)).collect())
                .collect();
            let blank = n_labels;

            let mut labelings = vec![Vec::new()];
            for _ in 0..frames_n {
                let mut next = Vec::new();
                for prefix in &labelings {
                    for s in 0..=n_labels {
                        let mut p: Vec<usize> = prefix.clone();
                        p.push(s);
                        next.push(p);
                    }
                }
                labelings = next;
            }

            for ref_len in 0..=3.min(frames_n) {
                for reference in all_references(n_labels, ref_len) {
                    let brute: Vec<f64> = labelings
                        .iter()
                        .filter(|frames| ctc_interpret(frames, blank) == reference)
                        .map(|frames| {
                            frames.iter().enumerate().map(|(t, &s)| values[t][s]).sum()
                        })
                        .collect();
                    let expect = log_sum_exp(&brute);
                    let node = ctc_log_marginal(&mut tape, &frames, &reference).unwrap();
                    let got = tape.scalar_value(node);
                    assert!(
                        (got - expect).abs() < 1e-9,
                        "T={frames_n} |Y|={n_labels} ref={reference:?}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn ctc_marginals_normalize_over_references() {
        let mut tape = Tape::new();
        let frames_n = 4;
        let n_labels = 2;
        let frames = random_frames(&mut tape, frames_n, n_labels + 1, 9);
        let mut totals = Vec::new();
        for len in 0..=frames_n {
            for reference in all_references(n_labels, len) {
                let node = ctc_log_marginal(&mut tape, &frames, &reference).unwrap();
                totals.push(tape.scalar_value(node));
            }
        }
        assert!((log_sum_exp(&totals)).abs() < 1e-9);
    }

    #[test]
    fn ctc_best_path_examples() {
        // All-blank frames decode to the empty sequence; [a, blank, a] → aa.
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, rows: &[[f64; 3]]| -> Vec<Vec<NodeId>> {
            rows.iter()
                .map(|r| r.iter().map(|&v| tape.scalar_leaf(v)).collect())
                .collect()
        };
        let blanks = mk(&mut tape, &[[-3.0, -2.0, -0.1], [-1.0, -4.0, -0.2]]);
        assert_eq!(ctc_best_path_decode(&tape, &blanks), Vec::<usize>::new());

        let aba = mk(
            &mut tape,
            &[[-0.1, -3.0, -2.0], [-3.0, -2.0, -0.1], [-0.2, -1.0, -0.9]],
        );
        assert_eq!(ctc_best_path_decode(&tape, &aba), vec![0, 0]);

        let aa = mk(&mut tape, &[[-0.1, -3.0, -2.0], [-0.2, -1.0, -0.9]]);
        assert_eq!(ctc_best_path_decode(&tape, &aa), vec![0, 0]);
    }
}
