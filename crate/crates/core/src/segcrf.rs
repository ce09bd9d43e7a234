//! Semi-Markov CRF core: segment clique potentials, the partition function,
//! MAP decoding, the label-constrained marginal, and gold-path scoring.
//!
//! All charts are built as tape nodes in log space, so training gradients
//! come from plain tape reversal. Chart cells combine candidates in a fixed
//! (position, label) order, making repeated runs bit-identical.

use crate::diffgraph::{NodeId, ParamId, Tape};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::segment_embed::SegmentTable;

pub type LabelId = usize;

/// One labeled segment: `len` tokens starting at 0-based `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub label: LabelId,
}

/// Contiguity check: segments must tile `0..n` left to right with positive
/// durations and valid labels.
pub fn validate_segmentation(segments: &[Segment], n: usize, n_labels: usize) -> Result<()> {
    let mut pos = 0;
    for (idx, s) in segments.iter().enumerate() {
        if s.start != pos || s.len == 0 {
            return Err(Error::Validation(format!(
                "segment {idx} starts at {} with duration {}, expected start {pos}",
                s.start, s.len
            )));
        }
        if s.label >= n_labels {
            return Err(Error::Validation(format!(
                "segment {idx} has label id {} outside the inventory of {n_labels}",
                s.label
            )));
        }
        pos += s.len;
    }
    if pos != n {
        return Err(Error::Validation(format!(
            "durations sum to {pos}, expected {n}"
        )));
    }
    if n > 0 && segments.is_empty() {
        return Err(Error::Validation("no segments for a non-empty input".into()));
    }
    Ok(())
}

pub fn segments_from_durations(durations: &[usize], labels: &[LabelId]) -> Result<Vec<Segment>> {
    if durations.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} durations but {} labels",
            durations.len(),
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(durations.len());
    let mut pos = 0;
    for (&len, &label) in durations.iter().zip(labels) {
        out.push(Segment { start: pos, len, label });
        pos += len;
    }
    Ok(out)
}

/// Parameters of the clique potential: label and duration embedding tables,
/// the affine layer (V, a), and the final projection (w, b).
#[derive(Debug, Clone)]
pub struct CrfParams {
    pub n_labels: usize,
    pub max_dur: usize,
    label_table: ParamId,
    dur_table: ParamId,
    v: ParamId,
    a: ParamId,
    w: ParamId,
    b: ParamId,
}

impl CrfParams {
    /// `seg_dim` is the concatenated forward+reverse segment embedding width.
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        n_labels: usize,
        max_dur: usize,
        label_dim: usize,
        dur_dim: usize,
        seg_dim: usize,
        phi_dim: usize,
    ) -> Self {
        use crate::params::InitKind;
        let concat_dim = label_dim + dur_dim + seg_dim;
        CrfParams {
            n_labels,
            max_dur,
            label_table: params.register_init(
                &format!("{prefix}.label_embed"),
                vec![n_labels, label_dim],
                InitKind::Uniform(0.5),
            ),
            dur_table: params.register_init(
                &format!("{prefix}.dur_embed"),
                vec![max_dur, dur_dim],
                InitKind::Uniform(0.5),
            ),
            v: params.register_init(
                &format!("{prefix}.v"),
                vec![phi_dim, concat_dim],
                InitKind::Glorot,
            ),
            a: params.register_init(&format!("{prefix}.a"), vec![phi_dim], InitKind::Zero),
            w: params.register_init(&format!("{prefix}.w"), vec![phi_dim], InitKind::Glorot),
            b: params.register_init(&format!("{prefix}.b"), vec![1], InitKind::Zero),
        }
    }

    /// Raw parameter ids in (label table, duration table, V, a, w, b) order,
    /// for value-only re-evaluation outside the tape.
    pub(crate) fn raw_ids(&self) -> (ParamId, ParamId, ParamId, ParamId, ParamId, ParamId) {
        (self.label_table, self.dur_table, self.v, self.a, self.w, self.b)
    }
}

/// Log potential of labeling the span `(start, len)` with `label` and
/// duration `len`: `w·tanh(V [g_y; g_z; h→; h←] + a) + b`.
///
/// Only the segment's own label enters the clique; a higher-order label
/// history would extend the concatenation here.
pub fn potential(
    tape: &mut Tape,
    params: &ModelParams,
    crf: &CrfParams,
    tables: &SegmentTable,
    label: LabelId,
    duration: usize,
    start: usize,
) -> Result<NodeId> {
    if duration == 0 || duration > crf.max_dur || duration > tables.max_len() {
        return Err(Error::Validation(format!(
            "segment duration {duration} exceeds the maximum segment length {}",
            crf.max_dur.min(tables.max_len())
        )));
    }
    if label >= crf.n_labels {
        return Err(Error::Validation(format!(
            "label id {label} outside the inventory of {}",
            crf.n_labels
        )));
    }
    let h_fwd = tables
        .forward(start, duration)
        .ok_or_else(|| Error::Validation(format!("span ({start}, {duration}) out of range")))?;
    let h_rev = tables.reverse(start, duration).unwrap();

    let label_t = params.node(tape, crf.label_table);
    let dur_t = params.node(tape, crf.dur_table);
    let g_y = tape.lookup(label_t, label)?;
    let g_z = tape.lookup(dur_t, duration - 1)?;
    let u = tape.concat(&[g_y, g_z, h_fwd, h_rev])?;

    let v = params.node(tape, crf.v);
    let a = params.node(tape, crf.a);
    let pre = tape.affine(v, u, a)?;
    let phi = tape.tanh(pre);
    let w = params.node(tape, crf.w);
    let s = tape.dot(w, phi)?;
    let b = params.node(tape, crf.b);
    tape.add(s, b)
}

/// All clique potentials of one instance, dense over the pruned band.
/// Shared by the partition, constrained, Viterbi, and path-score routines so
/// each potential is a single tape node regardless of how many charts use it.
pub struct PotentialTable {
    n: usize,
    max_len: usize,
    n_labels: usize,
    nodes: Vec<NodeId>,
}

impl PotentialTable {
    pub fn build(
        tape: &mut Tape,
        params: &ModelParams,
        crf: &CrfParams,
        tables: &SegmentTable,
    ) -> Result<PotentialTable> {
        let n = tables.n();
        let max_len = tables.max_len().min(crf.max_dur);
        let mut nodes = Vec::with_capacity(n * max_len * crf.n_labels);
        for start in 0..n {
            for len in 1..=max_len {
                for y in 0..crf.n_labels {
                    if start + len <= n {
                        nodes.push(potential(tape, params, crf, tables, y, len, start)?);
                    } else {
                        // Padding for dense indexing; never read.
                        nodes.push(nodes[0]);
                    }
                }
            }
        }
        Ok(PotentialTable { n, max_len, n_labels: crf.n_labels, nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn node(&self, start: usize, len: usize, label: LabelId) -> Option<NodeId> {
        if len == 0 || len > self.max_len || start + len > self.n || label >= self.n_labels {
            return None;
        }
        Some(self.nodes[(start * self.max_len + (len - 1)) * self.n_labels + label])
    }
}

/// log Z(x): the α recurrence over all ≤L-pruned labeled segmentations.
/// `α_j` sums, over predecessor positions i and labels y, the extension of
/// `α_i` by a segment covering tokens `i..j`.
#[allow(clippy::needless_range_loop)]
pub fn log_partition(tape: &mut Tape, pots: &PotentialTable) -> Result<NodeId> {
    let n = pots.n();
    if n == 0 {
        return Err(Error::EmptyInput("log_partition"));
    }
    let l = pots.max_len();
    let mut alpha: Vec<NodeId> = Vec::with_capacity(n + 1);
    alpha.push(tape.scalar_leaf(0.0));
    for j in 1..=n {
        let mut terms = Vec::new();
        for i in j.saturating_sub(l)..j {
            for y in 0..pots.n_labels() {
                let f = pots.node(i, j - i, y).unwrap();
                terms.push(tape.add(alpha[i], f)?);
            }
        }
        alpha.push(tape.log_sum_exp(&terms)?);
    }
    Ok(alpha[n])
}

/// MAP decoding: the α recurrence with max in place of the summation,
/// with backpointers. Ties prefer the longer final segment, then the lowest
/// label id.
pub fn map_decode(tape: &Tape, pots: &PotentialTable) -> Result<Vec<Segment>> {
    let n = pots.n();
    if n == 0 {
        return Err(Error::EmptyInput("map_decode"));
    }
    let l = pots.max_len();
    let mut score = vec![f64::NEG_INFINITY; n + 1];
    let mut back: Vec<Option<(usize, LabelId)>> = vec![None; n + 1];
    score[0] = 0.0;
    for j in 1..=n {
        // i ascending scans longer final segments first; strict improvement
        // keeps the first best, which realizes the tie-break order.
        for i in j.saturating_sub(l)..j {
            if score[i] == f64::NEG_INFINITY {
                continue;
            }
            for y in 0..pots.n_labels() {
                let f = tape.scalar_value(pots.node(i, j - i, y).unwrap());
                let cand = score[i] + f;
                if cand > score[j] {
                    score[j] = cand;
                    back[j] = Some((i, y));
                }
            }
        }
    }
    let mut segments = Vec::new();
    let mut j = n;
    while j > 0 {
        let (i, y) = back[j].expect("reachable chart cell must have a backpointer");
        segments.push(Segment { start: i, len: j - i, label: y });
        j = i;
    }
    segments.reverse();
    Ok(segments)
}

/// Total score of the MAP path, for self-consistency checks.
pub fn path_score_value(tape: &Tape, pots: &PotentialTable, segments: &[Segment]) -> f64 {
    segments
        .iter()
        .map(|s| tape.scalar_value(pots.node(s.start, s.len, s.label).unwrap()))
        .sum()
}

/// log Z(x, y): the γ recurrence, tracking how many reference labels have
/// been consumed. The segment ending a prefix of length j as the m-th
/// segment is scored with the m-th reference label.
///
/// Returns a −∞ node when no segmentation is compatible (reference longer
/// than the input, or shorter than forced by the length bound).
#[allow(clippy::needless_range_loop)]
pub fn log_constrained(
    tape: &mut Tape,
    pots: &PotentialTable,
    reference: &[LabelId],
) -> Result<NodeId> {
    let n = pots.n();
    if n == 0 {
        return Err(Error::EmptyInput("log_constrained"));
    }
    let m_total = reference.len();
    if m_total == 0 || m_total > n {
        return Ok(tape.scalar_leaf(f64::NEG_INFINITY));
    }
    for (idx, &y) in reference.iter().enumerate() {
        if y >= pots.n_labels() {
            return Err(Error::Validation(format!(
                "reference label {idx} has id {y} outside the inventory of {}",
                pots.n_labels()
            )));
        }
    }
    let l = pots.max_len();
    // gamma[j][m]: prefix of j tokens, m reference labels consumed.
    let mut gamma: Vec<Vec<Option<NodeId>>> = vec![vec![None; m_total + 1]; n + 1];
    gamma[0][0] = Some(tape.scalar_leaf(0.0));
    for j in 1..=n {
        for m in 1..=m_total.min(j) {
            let mut terms = Vec::new();
            for i in j.saturating_sub(l).max(m - 1)..j {
                if let Some(prev) = gamma[i][m - 1] {
                    let f = pots.node(i, j - i, reference[m - 1]).unwrap();
                    terms.push(tape.add(prev, f)?);
                }
            }
            if !terms.is_empty() {
                gamma[j][m] = Some(tape.log_sum_exp(&terms)?);
            }
        }
    }
    match gamma[n][m_total] {
        Some(node) => Ok(node),
        None => Ok(tape.scalar_leaf(f64::NEG_INFINITY)),
    }
}

/// log Z(x, y, z): the score of one specific labeled segmentation, the sum
/// of its clique potentials.
pub fn log_path_score(
    tape: &mut Tape,
    pots: &PotentialTable,
    gold: &[Segment],
) -> Result<NodeId> {
    validate_segmentation(gold, pots.n(), pots.n_labels())?;
    let mut terms = Vec::with_capacity(gold.len());
    for (idx, s) in gold.iter().enumerate() {
        match pots.node(s.start, s.len, s.label) {
            Some(f) => terms.push(f),
            None => {
                return Err(Error::Validation(format!(
                    "segment {idx} (start {}, duration {}) exceeds the maximum segment length {}",
                    s.start,
                    s.len,
                    pots.max_len()
                )))
            }
        }
    }
    tape.sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::Tensor;
    use crate::encoder::LstmParams;
    use crate::rng::named_stream;
    use crate::segment_embed::build_segment_table;

    struct Fixture {
        params: ModelParams,
        seg_fwd: LstmParams,
        seg_rev: LstmParams,
        crf: CrfParams,
    }

    fn fixture(n_labels: usize, max_dur: usize, seed: u64, zero: bool) -> Fixture {
        let mut params = ModelParams::new();
        let seg_fwd = LstmParams::register(&mut params, "seg.fwd", 2, 3);
        let seg_rev = LstmParams::register(&mut params, "seg.rev", 2, 3);
        let crf = CrfParams::register(&mut params, "pot", n_labels, max_dur, 2, 2, 6, 4);
        if !zero {
            params.init_uniform(&mut named_stream(seed, "init"), -0.5, 0.5);
        }
        Fixture { params, seg_fwd, seg_rev, crf }
    }

    fn build(fx: &Fixture, n: usize, max_len: usize, seed: u64) -> (Tape, PotentialTable) {
        use rand::Rng;
        let mut tape = Tape::new();
        let mut rng = named_stream(seed, "ctx");
        let ctx: Vec<_> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                tape.leaf(Tensor::vector(v))
            })
            .collect();
        let st = build_segment_table(&mut tape, &fx.params, &fx.seg_fwd, &fx.seg_rev, &ctx, max_len)
            .unwrap();
        let pots = PotentialTable::build(&mut tape, &fx.params, &fx.crf, &st).unwrap();
        (tape, pots)
    }

    #[test]
    fn zero_model_partition_is_segmentation_count() {
        // With every potential zero, Z counts labeled segmentations:
        // Σ_m C(|x|−1, m−1)·|Y|^m = 18 for |x|=3, |Y|=2.
        let fx = fixture(2, 3, 1, true);
        let (mut tape, pots) = build(&fx, 3, 3, 1);
        let z = log_partition(&mut tape, &pots).unwrap();
        assert!((tape.scalar_value(z) - 18f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_single_label_partition_is_the_potential() {
        let fx = fixture(1, 1, 2, false);
        let (mut tape, pots) = build(&fx, 1, 1, 2);
        let z = log_partition(&mut tape, &pots).unwrap();
        let f = tape.scalar_value(pots.node(0, 1, 0).unwrap());
        assert!((tape.scalar_value(z) - f).abs() < 1e-12);
    }

    #[test]
    fn hand_set_potential_composes_to_tanh() {
        // 1-dim everything: V = [1 0 0 0], a = 0, w = 1, b = 0, g_y = 2
        // gives f = tanh(2) regardless of the segment embeddings' values.
        let mut params = ModelParams::new();
        let seg_fwd = LstmParams::register(&mut params, "seg.fwd", 1, 1);
        let seg_rev = LstmParams::register(&mut params, "seg.rev", 1, 1);
        let crf = CrfParams::register(&mut params, "pot", 1, 1, 1, 1, 2, 1);
        // label_table registered first within crf, then dur, v, a, w, b.
        let ids: Vec<_> = params.ids().collect();
        let label_table = ids[16];
        assert_eq!(params.name(label_table), "pot.label_embed");
        params.fill(label_table, 2.0);
        let v = ids[18];
        assert_eq!(params.name(v), "pot.v");
        params.value_mut(v).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        let w = ids[20];
        assert_eq!(params.name(w), "pot.w");
        params.fill(w, 1.0);

        let mut tape = Tape::new();
        let ctx = vec![tape.leaf(Tensor::vector(vec![0.7]))];
        let st = build_segment_table(&mut tape, &params, &seg_fwd, &seg_rev, &ctx, 1).unwrap();
        let f = potential(&mut tape, &params, &crf, &st, 0, 1, 0).unwrap();
        assert!((tape.scalar_value(f) - 2f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn potential_rejects_over_long_duration() {
        let fx = fixture(2, 2, 3, false);
        let (tape, _) = build(&fx, 4, 2, 3);
        let mut tape2 = Tape::new();
        let ctx: Vec<_> = (0..4).map(|_| tape2.leaf(Tensor::vector(vec![0.0, 0.0]))).collect();
        let st = build_segment_table(&mut tape2, &fx.params, &fx.seg_fwd, &fx.seg_rev, &ctx, 2)
            .unwrap();
        assert!(potential(&mut tape2, &fx.params, &fx.crf, &st, 0, 3, 0).is_err());
        drop(tape);
    }

    #[test]
    fn map_decode_is_self_consistent_and_deterministic() {
        let fx = fixture(3, 4, 5, false);
        let (mut tape, pots) = build(&fx, 5, 4, 5);
        let path = map_decode(&tape, &pots).unwrap();
        validate_segmentation(&path, 5, 3).unwrap();
        let again = map_decode(&tape, &pots).unwrap();
        assert_eq!(path, again);
        // The Viterbi score must equal the path's summed potentials.
        let viterbi = path_score_value(&tape, &pots, &path);
        let node = log_path_score(&mut tape, &pots, &path).unwrap();
        assert!((viterbi - tape.scalar_value(node)).abs() < 1e-12);
    }

    #[test]
    fn single_token_decodes_to_argmax_label() {
        let fx = fixture(3, 1, 6, false);
        let (tape, pots) = build(&fx, 1, 1, 6);
        let path = map_decode(&tape, &pots).unwrap();
        assert_eq!(path.len(), 1);
        let best = (0..3)
            .map(|y| tape.scalar_value(pots.node(0, 1, y).unwrap()))
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(path[0].label, best);
    }

    #[test]
    fn constrained_full_length_reference_is_unit_segmentation() {
        let fx = fixture(2, 3, 7, false);
        let (mut tape, pots) = build(&fx, 3, 3, 7);
        let reference = vec![1, 0, 1];
        let z = log_constrained(&mut tape, &pots, &reference).unwrap();
        let segs = segments_from_durations(&[1, 1, 1], &reference).unwrap();
        let path = log_path_score(&mut tape, &pots, &segs).unwrap();
        assert!((tape.scalar_value(z) - tape.scalar_value(path)).abs() < 1e-12);
    }

    #[test]
    fn constrained_impossible_references_are_neg_inf() {
        let fx = fixture(2, 3, 8, false);
        let (mut tape, pots) = build(&fx, 3, 3, 8);
        let too_long = vec![0, 1, 0, 1];
        let z = log_constrained(&mut tape, &pots, &too_long).unwrap();
        assert_eq!(tape.scalar_value(z), f64::NEG_INFINITY);

        // With L = 2 a 5-token input needs at least 3 segments.
        let fx2 = fixture(2, 2, 9, false);
        let (mut tape2, pots2) = build(&fx2, 5, 2, 9);
        let too_short = vec![0, 1];
        let z2 = log_constrained(&mut tape2, &pots2, &too_short).unwrap();
        assert_eq!(tape2.scalar_value(z2), f64::NEG_INFINITY);
    }

    #[test]
    fn constrained_marginals_sum_to_the_partition() {
        // Σ over all label sequences (all lengths, all labelings) of
        // Z(x, y) recovers Z(x).
        for n in 1..=5usize {
            let fx = fixture(2, n, 20 + n as u64, false);
            let (mut tape, pots) = build(&fx, n, n, 20 + n as u64);
            let z = {
                let node = log_partition(&mut tape, &pots).unwrap();
                tape.scalar_value(node)
            };
            let mut terms = Vec::new();
            for len in 1..=n {
                for reference in crate::oracle::all_references(2, len) {
                    let node = log_constrained(&mut tape, &pots, &reference).unwrap();
                    terms.push(tape.scalar_value(node));
                }
            }
            let total = crate::numerics::log_sum_exp(&terms);
            assert!((total - z).abs() < 1e-9, "n={n}: {total} vs {z}");
        }
    }

    #[test]
    fn quantity_ordering_holds() {
        // log Z(x,y,z) ≤ log Z(x,y) ≤ log Z(x), strict here since the
        // compatible sets are not singletons.
        let fx = fixture(2, 4, 10, false);
        let (mut tape, pots) = build(&fx, 4, 4, 10);
        let gold = segments_from_durations(&[2, 2], &[1, 0]).unwrap();
        let zxyz = log_path_score(&mut tape, &pots, &gold).unwrap();
        let labels: Vec<LabelId> = gold.iter().map(|s| s.label).collect();
        let zxy = log_constrained(&mut tape, &pots, &labels).unwrap();
        let zx = log_partition(&mut tape, &pots).unwrap();
        let (a, b, c) = (
            tape.scalar_value(zxyz),
            tape.scalar_value(zxy),
            tape.scalar_value(zx),
        );
        assert!(a < b, "{a} vs {b}");
        assert!(b < c, "{b} vs {c}");
    }

    #[test]
    fn shifting_bias_shifts_constrained_score_by_segment_count() {
        // Adding δ to b adds δ to every potential, so a reference of length m
        // shifts the γ terminal cell by exactly m·δ.
        let delta = 0.37;
        for m in 1..=3usize {
            let fx = fixture(2, 4, 11, false);
            let (mut tape, pots) = build(&fx, 4, 4, 11);
            let reference: Vec<LabelId> = (0..m).map(|i| i % 2).collect();
            let base = {
                let z = log_constrained(&mut tape, &pots, &reference).unwrap();
                tape.scalar_value(z)
            };

            let mut fx2 = fixture(2, 4, 11, false);
            let b_coord = (0..fx2.params.coordinate_count())
                .find(|&i| fx2.params.coordinate_name(i) == "pot.b[0]")
                .unwrap();
            fx2.params.nudge_coordinate(b_coord, delta);
            let (mut tape2, pots2) = build(&fx2, 4, 4, 11);
            let shifted = {
                let z = log_constrained(&mut tape2, &pots2, &reference).unwrap();
                tape2.scalar_value(z)
            };
            assert!(
                (shifted - base - m as f64 * delta).abs() < 1e-9,
                "m={m}: {shifted} vs {base} + {m}·δ"
            );
        }
    }
}
