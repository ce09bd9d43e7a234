//! Brute-force verification oracles.
//!
//! Everything here recomputes model quantities by a second, independent
//! route: clique potentials are evaluated directly from raw parameter
//! arrays (with from-scratch span encodings, no shared prefixes and no
//! tape), and the partition / constrained / MAP quantities come from
//! exhaustive enumeration of every labeled segmentation. The dynamic
//! programs are checked against these on small inputs.
//!
//! The arithmetic deliberately mirrors the tape primitives operation for
//! operation (same accumulation order), so agreement is tight.

use crate::encoder::LstmParams;
use crate::numerics::log_sum_exp;
use crate::params::ModelParams;
use crate::segcrf::{CrfParams, LabelId, Segment};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Value-only evaluation of the segment potential from raw parameters.
pub struct DirectEvaluator<'a> {
    params: &'a ModelParams,
    seg_fwd: &'a LstmParams,
    seg_rev: &'a LstmParams,
    crf: &'a CrfParams,
}

impl<'a> DirectEvaluator<'a> {
    pub fn new(
        params: &'a ModelParams,
        seg_fwd: &'a LstmParams,
        seg_rev: &'a LstmParams,
        crf: &'a CrfParams,
    ) -> Self {
        DirectEvaluator { params, seg_fwd, seg_rev, crf }
    }

    fn affine(&self, w: crate::diffgraph::ParamId, b: crate::diffgraph::ParamId, x: &[f64]) -> Vec<f64> {
        let wt = self.params.value(w);
        let bt = self.params.value(b);
        let (m, n) = (wt.shape()[0], wt.shape()[1]);
        debug_assert_eq!(n, x.len());
        let wd = wt.data();
        let bd = bt.data();
        let mut out = vec![0.0; m];
        for r in 0..m {
            let mut acc = 0.0;
            let row = &wd[r * n..(r + 1) * n];
            for c in 0..n {
                acc += row[c] * x[c];
            }
            out[r] = acc + bd[r];
        }
        out
    }

    fn lstm_step(&self, lstm: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut xc = Vec::with_capacity(x.len() + h.len());
        xc.extend_from_slice(x);
        xc.extend_from_slice(h);
        let [gi, gf, go, gc] = lstm.gates();
        let i: Vec<f64> = self.affine(gi.0, gi.1, &xc).iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = self.affine(gf.0, gf.1, &xc).iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<f64> = self.affine(go.0, go.1, &xc).iter().map(|&v| sigmoid(v)).collect();
        let c_hat: Vec<f64> = self.affine(gc.0, gc.1, &xc).iter().map(|&v| v.tanh()).collect();
        let mut c_new = vec![0.0; c.len()];
        for k in 0..c.len() {
            c_new[k] = f[k] * c[k] + i[k] * c_hat[k];
        }
        let h_new: Vec<f64> = (0..c.len()).map(|k| o[k] * c_new[k].tanh()).collect();
        (h_new, c_new)
    }

    /// From-scratch left-to-right encoding of a span of context vectors.
    #[allow(clippy::needless_range_loop)]
    pub fn encode_span_fwd(&self, context: &[Vec<f64>], start: usize, len: usize) -> Vec<f64> {
        let mut h = vec![0.0; self.seg_fwd.hidden];
        let mut c = vec![0.0; self.seg_fwd.hidden];
        for k in start..start + len {
            let (nh, nc) = self.lstm_step(self.seg_fwd, &context[k], &h, &c);
            h = nh;
            c = nc;
        }
        h
    }

    /// From-scratch right-to-left encoding of a span of context vectors.
    pub fn encode_span_rev(&self, context: &[Vec<f64>], start: usize, len: usize) -> Vec<f64> {
        let mut h = vec![0.0; self.seg_rev.hidden];
        let mut c = vec![0.0; self.seg_rev.hidden];
        for k in (start..start + len).rev() {
            let (nh, nc) = self.lstm_step(self.seg_rev, &context[k], &h, &c);
            h = nh;
            c = nc;
        }
        h
    }

    /// The clique potential, straight from the defining formula.
    pub fn potential(&self, context: &[Vec<f64>], label: LabelId, start: usize, len: usize) -> f64 {
        let (label_table, dur_table, v, a, w, b) = self.crf.raw_ids();
        let lt = self.params.value(label_table);
        let label_dim = lt.shape()[1];
        let g_y = &lt.data()[label * label_dim..(label + 1) * label_dim];
        let dt = self.params.value(dur_table);
        let dur_dim = dt.shape()[1];
        let g_z = &dt.data()[(len - 1) * dur_dim..len * dur_dim];
        let h_fwd = self.encode_span_fwd(context, start, len);
        let h_rev = self.encode_span_rev(context, start, len);

        let mut u = Vec::with_capacity(label_dim + dur_dim + h_fwd.len() + h_rev.len());
        u.extend_from_slice(g_y);
        u.extend_from_slice(g_z);
        u.extend_from_slice(&h_fwd);
        u.extend_from_slice(&h_rev);

        let pre = self.affine(v, a, &u);
        let wd = self.params.value(w).data();
        let mut acc = 0.0;
        for (k, p) in pre.iter().enumerate() {
            acc += wd[k] * p.tanh();
        }
        acc + self.params.value(b).data()[0]
    }

    /// Dense table of potential values over the pruned band.
    pub fn potential_table(&self, context: &[Vec<f64>], max_len: usize) -> PotentialValues {
        let n = context.len();
        let k = self.crf.n_labels;
        let l = max_len.min(self.crf.max_dur);
        let mut values = vec![f64::NEG_INFINITY; n * l * k];
        for start in 0..n {
            for len in 1..=l.min(n - start) {
                for y in 0..k {
                    values[(start * l + (len - 1)) * k + y] =
                        self.potential(context, y, start, len);
                }
            }
        }
        PotentialValues { n, max_len: l, n_labels: k, values }
    }
}

/// Plain potential values (no tape), for enumeration.
pub struct PotentialValues {
    pub n: usize,
    pub max_len: usize,
    pub n_labels: usize,
    values: Vec<f64>,
}

impl PotentialValues {
    pub fn get(&self, start: usize, len: usize, label: LabelId) -> f64 {
        self.values[(start * self.max_len + (len - 1)) * self.n_labels + label]
    }

    pub fn path_score(&self, segments: &[Segment]) -> f64 {
        segments.iter().map(|s| self.get(s.start, s.len, s.label)).sum()
    }
}

/// Every labeled segmentation of `n` tokens with segments no longer than
/// `max_len`, with its total score. Depth-first, deterministic order.
pub fn enumerate_paths(pots: &PotentialValues) -> Vec<(Vec<Segment>, f64)> {
    let mut out = Vec::new();
    let mut stack: Vec<Segment> = Vec::new();
    fn recur(
        pots: &PotentialValues,
        pos: usize,
        score: f64,
        stack: &mut Vec<Segment>,
        out: &mut Vec<(Vec<Segment>, f64)>,
    ) {
        if pos == pots.n {
            out.push((stack.clone(), score));
            return;
        }
        for len in 1..=pots.max_len.min(pots.n - pos) {
            for label in 0..pots.n_labels {
                stack.push(Segment { start: pos, len, label });
                recur(pots, pos + len, score + pots.get(pos, len, label), stack, out);
                stack.pop();
            }
        }
    }
    recur(pots, 0, 0.0, &mut stack, &mut out);
    out
}

/// Brute-force quantities computed from an enumeration.
pub struct Enumeration {
    paths: Vec<(Vec<Segment>, f64)>,
}

impl Enumeration {
    pub fn new(pots: &PotentialValues) -> Self {
        Enumeration { paths: enumerate_paths(pots) }
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// log Σ over every labeled segmentation.
    pub fn log_partition(&self) -> f64 {
        let scores: Vec<f64> = self.paths.iter().map(|(_, s)| *s).collect();
        log_sum_exp(&scores)
    }

    /// log Σ over segmentations whose label sequence equals the reference.
    pub fn log_constrained(&self, reference: &[LabelId]) -> f64 {
        let scores: Vec<f64> = self
            .paths
            .iter()
            .filter(|(segs, _)| {
                segs.len() == reference.len()
                    && segs.iter().zip(reference).all(|(s, &y)| s.label == y)
            })
            .map(|(_, s)| *s)
            .collect();
        log_sum_exp(&scores)
    }

    /// Highest-scoring labeled segmentation.
    pub fn map(&self) -> (&[Segment], f64) {
        let best = self
            .paths
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("enumeration of a non-empty input has paths");
        (&best.0, best.1)
    }
}

// ---------------------------------------------------------------------------
// DP-vs-enumeration suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub max_tokens: usize,
    pub max_labels: usize,
    pub seeds: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { max_tokens: 6, max_labels: 3, seeds: 20 }
    }
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub cases: usize,
    pub max_potential_dev: f64,
    pub max_partition_dev: f64,
    pub max_constrained_dev: f64,
    pub max_path_dev: f64,
    pub map_mismatches: usize,
}

impl OracleReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.map_mismatches == 0
            && self.max_potential_dev <= tolerance
            && self.max_partition_dev <= tolerance
            && self.max_constrained_dev <= tolerance
            && self.max_path_dev <= tolerance
    }
}

fn abs_dev(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Exercise the dynamic programs against exhaustive enumeration across small
/// instance sizes, label inventories, pruning bounds, and parameter draws.
pub fn run_oracle_suite(cfg: &OracleConfig) -> crate::error::Result<OracleReport> {
    use crate::data_eval::{Instance, Tokens};
    use crate::diffgraph::Tape;
    use crate::model::{Dims, InputSpec, SrnnModel};
    use crate::segcrf;
    use rand::Rng;

    let dims = Dims {
        ctx: 6,
        seg: 4,
        stroke: 2,
        label_embed: 3,
        dur_embed: 2,
        phi: 5,
        sym_embed: 4,
        bio_hidden: 6,
    };
    let mut report = OracleReport::default();

    for n in 1..=cfg.max_tokens {
        for n_labels in 1..=cfg.max_labels {
            let mut bounds = vec![2.min(n), 3.min(n), n];
            bounds.sort_unstable();
            bounds.dedup();
            for max_len in bounds {
                for seed in 0..cfg.seeds {
                    let labels = (0..n_labels).map(crate::data_eval::label_name).collect();
                    let model = SrnnModel::new(
                        dims,
                        max_len,
                        labels,
                        &InputSpec::Vectors { dim: 2 },
                        seed * 1000 + (n * 100 + n_labels * 10 + max_len) as u64,
                    )?;
                    let mut rng =
                        crate::rng::named_stream(seed, &format!("oracle-{n}-{n_labels}-{max_len}"));
                    let tokens: Vec<Vec<f64>> = (0..n)
                        .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect();
                    let instance =
                        Instance { tokens: Tokens::Vectors(tokens), labels: None, durations: None };

                    // Route one: the tape DPs.
                    let mut tape = Tape::new();
                    let pots = model.potentials(&mut tape, &instance)?;
                    let z_dp = {
                        let node = segcrf::log_partition(&mut tape, &pots)?;
                        tape.scalar_value(node)
                    };
                    let map_dp = segcrf::map_decode(&tape, &pots)?;
                    let map_dp_score = segcrf::path_score_value(&tape, &pots, &map_dp);

                    // Route two: direct formula + enumeration.
                    let context = model.context_values(&instance)?;
                    let direct =
                        DirectEvaluator::new(&model.params, &model.seg_fwd, &model.seg_rev, &model.crf);
                    let values = direct.potential_table(&context, max_len);
                    let enumeration = Enumeration::new(&values);

                    report.cases += 1;
                    report.max_partition_dev = report
                        .max_partition_dev
                        .max(abs_dev(z_dp, enumeration.log_partition()));

                    // Potentials agree pointwise.
                    for start in 0..n {
                        for len in 1..=max_len.min(n - start) {
                            for y in 0..n_labels {
                                let dp = tape.scalar_value(pots.node(start, len, y).unwrap());
                                report.max_potential_dev = report
                                    .max_potential_dev
                                    .max(abs_dev(dp, values.get(start, len, y)));
                            }
                        }
                    }

                    // MAP agrees (random reals keep scores strictly apart).
                    let (map_enum, map_enum_score) = enumeration.map();
                    if map_dp != map_enum {
                        report.map_mismatches += 1;
                    }
                    report.max_path_dev =
                        report.max_path_dev.max(abs_dev(map_dp_score, map_enum_score));

                    // Constrained marginals for every reference up to a
                    // deterministic cap per length.
                    for len in 1..=n {
                        let mut refs = all_references(n_labels, len);
                        refs.truncate(27);
                        for reference in refs {
                            let node = segcrf::log_constrained(&mut tape, &pots, &reference)?;
                            let dev = abs_dev(
                                tape.scalar_value(node),
                                enumeration.log_constrained(&reference),
                            );
                            report.max_constrained_dev = report.max_constrained_dev.max(dev);
                        }
                    }

                    // Path scores on a spread of enumerated paths.
                    let paths = enumerate_paths(&values);
                    for idx in [0, paths.len() / 2, paths.len() - 1] {
                        let (segments, score) = &paths[idx];
                        let node = segcrf::log_path_score(&mut tape, &pots, segments)?;
                        report.max_path_dev =
                            report.max_path_dev.max(abs_dev(tape.scalar_value(node), *score));
                    }
                }
            }
        }
    }
    Ok(report)
}

/// All label sequences over `n_labels` of exactly `len`, lexicographic.
pub fn all_references(n_labels: usize, len: usize) -> Vec<Vec<LabelId>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::with_capacity(out.len() * n_labels);
        for prefix in &out {
            for y in 0..n_labels {
                let mut p = prefix.clone();
                p.push(y);
                next.push(p);
            }
        }
        out = next;
    }
    out
}
