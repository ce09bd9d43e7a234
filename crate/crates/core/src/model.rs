//! Complete models: the segmental CRF and the two baselines, each owning its
//! parameters and sharing the same encoder front end.

use crate::baselines::{
    bio_decode, bio_logits, bio_to_segments, ctc_best_path_decode, ctc_frame_log_probs, BioHead,
    CtcHead,
};
use crate::data_eval::{Instance, Prediction, Tokens};
use crate::diffgraph::{NodeId, ParamId, Tape, Tensor};
use crate::encoder::{
    embed_stroke, embed_symbols, encode_context, ContextEncoder, StrokeEmbedder, Vocab,
};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::named_stream;
use crate::segcrf::{CrfParams, LabelId, PotentialTable, Segment};
use crate::segment_embed::build_segment_table;

/// Hidden dimensions. `ctx` and `bio_hidden` are concatenated bidirectional
/// totals (half per direction); `seg` and `stroke` are per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub ctx: usize,
    pub seg: usize,
    pub stroke: usize,
    pub label_embed: usize,
    pub dur_embed: usize,
    pub phi: usize,
    pub sym_embed: usize,
    pub bio_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            ctx: 24,
            seg: 18,
            stroke: 5,
            label_embed: 8,
            dur_embed: 4,
            phi: 20,
            sym_embed: 64,
            bio_hidden: 128,
        }
    }
}

impl Dims {
    /// Parse a `key=value` list, e.g. `ctx=24,seg=18`. Unknown keys are
    /// rejected. Keys: ctx, seg, stroke, label, dur, phi, embed, bio.
    pub fn parse(spec: &str) -> Result<Dims> {
        let mut dims = Dims::default();
        for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("bad dims entry {part:?}")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::Validation(format!("bad dims value in {part:?}")))?;
            if value == 0 {
                return Err(Error::Validation(format!("dims value must be positive: {part:?}")));
            }
            match key.trim() {
                "ctx" => dims.ctx = value,
                "seg" => dims.seg = value,
                "stroke" => dims.stroke = value,
                "label" => dims.label_embed = value,
                "dur" => dims.dur_embed = value,
                "phi" => dims.phi = value,
                "embed" => dims.sym_embed = value,
                "bio" => dims.bio_hidden = value,
                other => {
                    return Err(Error::Validation(format!("unknown dims key {other:?}")))
                }
            }
        }
        Ok(dims)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Tokens are raw feature vectors of one fixed dimension.
    Vectors,
    /// Tokens are strokes: flattened runs of 4-dim points, pooled by the
    /// stroke embedder before the context encoder.
    Strokes,
    /// Tokens are symbols looked up in a learnable embedding table.
    Symbols,
}

/// What the front end needs to know about the input side.
#[derive(Debug, Clone)]
pub enum InputSpec {
    Vectors { dim: usize },
    Strokes,
    Symbols { vocab: Vocab },
}

impl InputSpec {
    pub fn kind(&self) -> InputKind {
        match self {
            InputSpec::Vectors { .. } => InputKind::Vectors,
            InputSpec::Strokes => InputKind::Strokes,
            InputSpec::Symbols { .. } => InputKind::Symbols,
        }
    }
}

/// Shared encoder front end: token embedding (raw, stroke-pooled, or symbol
/// lookup) followed by the bidirectional context encoder.
pub struct FrontEnd {
    pub input_kind: InputKind,
    pub input_dim: usize,
    pub vocab: Option<Vocab>,
    sym_table: Option<ParamId>,
    stroke: Option<StrokeEmbedder>,
    pub context: ContextEncoder,
}

impl FrontEnd {
    fn register(
        params: &mut ModelParams,
        prefix: &str,
        spec: &InputSpec,
        dims: &Dims,
        context_dim: usize,
    ) -> Result<FrontEnd> {
        let (input_dim, vocab, sym_table, stroke) = match spec {
            InputSpec::Vectors { dim } => (*dim, None, None, None),
            InputSpec::Strokes => {
                let se = StrokeEmbedder::register(params, &format!("{prefix}.stroke"), dims.stroke);
                (se.output_dim(), None, None, Some(se))
            }
            InputSpec::Symbols { vocab } => {
                let table = params.register_init(
                    &format!("{prefix}.sym_embed"),
                    vec![vocab.rows(), dims.sym_embed],
                    crate::params::InitKind::Uniform(0.5),
                );
                (dims.sym_embed, Some(vocab.clone()), Some(table), None)
            }
        };
        let context =
            ContextEncoder::register(params, &format!("{prefix}.ctx"), input_dim, context_dim)?;
        Ok(FrontEnd {
            input_kind: spec.kind(),
            input_dim,
            vocab,
            sym_table,
            stroke,
            context,
        })
    }

    pub fn symbol_table(&self) -> Option<ParamId> {
        self.sym_table
    }

    fn token_nodes(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        instance: &Instance,
    ) -> Result<Vec<NodeId>> {
        match (&instance.tokens, self.input_kind) {
            (Tokens::Vectors(vecs), InputKind::Vectors) => vecs
                .iter()
                .map(|v| {
                    if v.len() != self.input_dim {
                        return Err(Error::Validation(format!(
                            "token has dimension {}, model expects {}",
                            v.len(),
                            self.input_dim
                        )));
                    }
                    Ok(tape.leaf(Tensor::vector(v.clone())))
                })
                .collect(),
            (Tokens::Vectors(vecs), InputKind::Strokes) => {
                let se = self.stroke.as_ref().unwrap();
                vecs.iter()
                    .map(|flat| {
                        if flat.is_empty() || flat.len() % 4 != 0 {
                            return Err(Error::Validation(format!(
                                "stroke token length {} is not a multiple of 4",
                                flat.len()
                            )));
                        }
                        let points: Vec<[f64; 4]> = flat
                            .chunks_exact(4)
                            .map(|c| [c[0], c[1], c[2], c[3]])
                            .collect();
                        embed_stroke(tape, params, se, &points)
                    })
                    .collect()
            }
            (Tokens::Symbols(syms), InputKind::Symbols) => embed_symbols(
                tape,
                params,
                self.sym_table.unwrap(),
                self.vocab.as_ref().unwrap(),
                syms,
            ),
            (tokens, kind) => Err(Error::Validation(format!(
                "instance token kind {} does not match model input {kind:?}",
                match tokens {
                    Tokens::Vectors(_) => "numeric",
                    Tokens::Symbols(_) => "symbolic",
                }
            ))),
        }
    }

    /// Context vectors c₁..c_|x| for one instance.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        instance: &Instance,
    ) -> Result<Vec<NodeId>> {
        let tokens = self.token_nodes(tape, params, instance)?;
        encode_context(tape, params, &self.context, &tokens)
    }

    fn forget_biases(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        if let Some(se) = &self.stroke {
            out.push(se.fwd.forget_bias());
            out.push(se.bwd.forget_bias());
        }
        out.push(self.context.fwd.forget_bias());
        out.push(self.context.bwd.forget_bias());
        out
    }
}

fn init_params(params: &mut ModelParams, forget_biases: &[ParamId], seed: u64) {
    let mut rng = named_stream(seed, "init");
    params.init_all(&mut rng);
    for &b in forget_biases {
        params.fill(b, 1.0);
    }
}

fn label_id_of(labels: &[String], name: &str) -> Result<LabelId> {
    labels
        .iter()
        .position(|l| l == name)
        .ok_or_else(|| Error::Validation(format!("label {name:?} is not in the model inventory")))
}

/// Map an instance's gold annotation onto model label ids.
pub fn gold_label_ids(labels: &[String], instance: &Instance) -> Result<Vec<LabelId>> {
    instance
        .labels
        .as_ref()
        .ok_or_else(|| Error::Validation("instance has no gold labels".into()))?
        .iter()
        .map(|name| label_id_of(labels, name))
        .collect()
}

/// Gold segments with model label ids; requires labels and durations.
pub fn gold_segments(labels: &[String], instance: &Instance) -> Result<Vec<Segment>> {
    let ids = gold_label_ids(labels, instance)?;
    let durs = instance
        .durations
        .as_ref()
        .ok_or_else(|| Error::Validation("instance has no gold durations".into()))?;
    crate::segcrf::segments_from_durations(durs, &ids)
}

// ---------------------------------------------------------------------------
// The segmental model
// ---------------------------------------------------------------------------

pub struct SrnnModel {
    pub dims: Dims,
    pub max_seg_len: usize,
    pub labels: Vec<String>,
    pub front: FrontEnd,
    pub seg_fwd: crate::encoder::LstmParams,
    pub seg_rev: crate::encoder::LstmParams,
    pub crf: CrfParams,
    pub params: ModelParams,
}

impl SrnnModel {
    pub fn new(
        dims: Dims,
        max_seg_len: usize,
        labels: Vec<String>,
        input: &InputSpec,
        seed: u64,
    ) -> Result<SrnnModel> {
        if labels.is_empty() {
            return Err(Error::Validation("label inventory is empty".into()));
        }
        if max_seg_len == 0 {
            return Err(Error::Validation("max segment length must be positive".into()));
        }
        let mut params = ModelParams::new();
        let front = FrontEnd::register(&mut params, "enc", input, &dims, dims.ctx)?;
        let seg_fwd =
            crate::encoder::LstmParams::register(&mut params, "seg.fwd", dims.ctx, dims.seg);
        let seg_rev =
            crate::encoder::LstmParams::register(&mut params, "seg.rev", dims.ctx, dims.seg);
        let crf = CrfParams::register(
            &mut params,
            "pot",
            labels.len(),
            max_seg_len,
            dims.label_embed,
            dims.dur_embed,
            2 * dims.seg,
            dims.phi,
        );
        let mut forget = front.forget_biases();
        forget.push(seg_fwd.forget_bias());
        forget.push(seg_rev.forget_bias());
        init_params(&mut params, &forget, seed);
        Ok(SrnnModel { dims, max_seg_len, labels, front, seg_fwd, seg_rev, crf, params })
    }

    /// Build the full potential table for one instance on a tape.
    pub fn potentials(&self, tape: &mut Tape, instance: &Instance) -> Result<PotentialTable> {
        let context = self.front.encode(tape, &self.params, instance)?;
        let table = build_segment_table(
            tape,
            &self.params,
            &self.seg_fwd,
            &self.seg_rev,
            &context,
            self.max_seg_len.min(context.len()),
        )?;
        PotentialTable::build(tape, &self.params, &self.crf, &table)
    }

    /// Context vectors as plain values, for the enumeration oracle.
    pub fn context_values(&self, instance: &Instance) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let ctx = self.front.encode(&mut tape, &self.params, instance)?;
        Ok(ctx.iter().map(|&c| tape.value(c).data().to_vec()).collect())
    }

    pub fn decode(&self, instance: &Instance) -> Result<Vec<Segment>> {
        let mut tape = Tape::new();
        let pots = self.potentials(&mut tape, instance)?;
        crate::segcrf::map_decode(&tape, &pots)
    }
}

// ---------------------------------------------------------------------------
// Baseline models
// ---------------------------------------------------------------------------

pub struct BioModel {
    pub dims: Dims,
    pub labels: Vec<String>,
    pub front: FrontEnd,
    pub head: BioHead,
    pub params: ModelParams,
}

impl BioModel {
    pub fn new(dims: Dims, labels: Vec<String>, input: &InputSpec, seed: u64) -> Result<BioModel> {
        if labels.is_empty() {
            return Err(Error::Validation("label inventory is empty".into()));
        }
        let mut params = ModelParams::new();
        let front = FrontEnd::register(&mut params, "enc", input, &dims, dims.bio_hidden)?;
        let head = BioHead::register(&mut params, "bio", labels.len(), dims.bio_hidden);
        let forget = front.forget_biases();
        init_params(&mut params, &forget, seed);
        Ok(BioModel { dims, labels, front, head, params })
    }

    pub fn decode(&self, instance: &Instance) -> Result<Vec<Segment>> {
        let mut tape = Tape::new();
        let ctx = self.front.encode(&mut tape, &self.params, instance)?;
        let logits = bio_logits(&mut tape, &self.params, &self.head, &ctx)?;
        Ok(bio_to_segments(&bio_decode(&tape, &logits)))
    }
}

pub struct CtcModel {
    pub dims: Dims,
    pub labels: Vec<String>,
    pub front: FrontEnd,
    pub head: CtcHead,
    pub params: ModelParams,
}

impl CtcModel {
    pub fn new(dims: Dims, labels: Vec<String>, input: &InputSpec, seed: u64) -> Result<CtcModel> {
        if labels.is_empty() {
            return Err(Error::Validation("label inventory is empty".into()));
        }
        let mut params = ModelParams::new();
        let front = FrontEnd::register(&mut params, "enc", input, &dims, dims.ctx)?;
        let head = CtcHead::register(&mut params, "ctc", labels.len(), dims.ctx);
        let forget = front.forget_biases();
        init_params(&mut params, &forget, seed);
        Ok(CtcModel { dims, labels, front, head, params })
    }

    pub fn decode(&self, instance: &Instance) -> Result<Vec<LabelId>> {
        let mut tape = Tape::new();
        let ctx = self.front.encode(&mut tape, &self.params, instance)?;
        let probs = ctc_frame_log_probs(&mut tape, &self.params, &self.head, &ctx)?;
        Ok(ctc_best_path_decode(&tape, &probs))
    }
}

// ---------------------------------------------------------------------------
// Model kinds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Srnn,
    Bio,
    Ctc,
}

#[allow(clippy::large_enum_variant)]
pub enum AnyModel {
    Srnn(SrnnModel),
    Bio(BioModel),
    Ctc(CtcModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Srnn(_) => ModelKind::Srnn,
            AnyModel::Bio(_) => ModelKind::Bio,
            AnyModel::Ctc(_) => ModelKind::Ctc,
        }
    }

    pub fn labels(&self) -> &[String] {
        match self {
            AnyModel::Srnn(m) => &m.labels,
            AnyModel::Bio(m) => &m.labels,
            AnyModel::Ctc(m) => &m.labels,
        }
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            AnyModel::Srnn(m) => &m.params,
            AnyModel::Bio(m) => &m.params,
            AnyModel::Ctc(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        match self {
            AnyModel::Srnn(m) => &mut m.params,
            AnyModel::Bio(m) => &mut m.params,
            AnyModel::Ctc(m) => &mut m.params,
        }
    }

    pub fn front(&self) -> &FrontEnd {
        match self {
            AnyModel::Srnn(m) => &m.front,
            AnyModel::Bio(m) => &m.front,
            AnyModel::Ctc(m) => &m.front,
        }
    }

    /// Decode one instance to an evaluable prediction. Segmental and BIO
    /// models yield segments; CTC yields a bare label sequence.
    pub fn predict(&self, instance: &Instance) -> Result<Prediction> {
        match self {
            AnyModel::Srnn(m) => Ok(Prediction::from_segments(&m.decode(instance)?, &m.labels)),
            AnyModel::Bio(m) => Ok(Prediction::from_segments(&m.decode(instance)?, &m.labels)),
            AnyModel::Ctc(m) => {
                let ids = m.decode(instance)?;
                Ok(Prediction::Labels(
                    ids.into_iter().map(|y| m.labels[y].clone()).collect(),
                ))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parse_overrides_and_rejects_unknown_keys() {
        let d = Dims::parse("ctx=12,seg=7").unwrap();
        assert_eq!(d.ctx, 12);
        assert_eq!(d.seg, 7);
        assert_eq!(d.sym_embed, 64);
        assert!(Dims::parse("nope=3").is_err());
        assert!(Dims::parse("ctx=0").is_err());
        assert!(Dims::parse("").is_ok());
    }

    fn vec_instance(n: usize, dim: usize) -> Instance {
        Instance {
            tokens: Tokens::Vectors(vec![vec![0.1; dim]; n]),
            labels: None,
            durations: None,
        }
    }

    #[test]
    fn srnn_decode_produces_a_tiling() {
        let dims = Dims { ctx: 6, seg: 4, phi: 5, label_embed: 3, dur_embed: 2, ..Dims::default() };
        let m = SrnnModel::new(
            dims,
            3,
            vec!["A".into(), "B".into()],
            &InputSpec::Vectors { dim: 2 },
            5,
        )
        .unwrap();
        let inst = vec_instance(5, 2);
        let segs = m.decode(&inst).unwrap();
        crate::segcrf::validate_segmentation(&segs, 5, 2).unwrap();
        assert!(segs.iter().all(|s| s.len <= 3));
    }

    #[test]
    fn input_kind_mismatch_is_rejected() {
        let dims = Dims { ctx: 6, seg: 4, phi: 5, ..Dims::default() };
        let m = SrnnModel::new(
            dims,
            2,
            vec!["A".into()],
            &InputSpec::Vectors { dim: 2 },
            1,
        )
        .unwrap();
        let inst = Instance {
            tokens: Tokens::Symbols(vec!["x".into()]),
            labels: None,
            durations: None,
        };
        assert!(m.decode(&inst).is_err());
        // Wrong vector dimension is also rejected.
        let bad = vec_instance(2, 3);
        assert!(m.decode(&bad).is_err());
    }

    #[test]
    fn stroke_model_rejects_non_point_tokens() {
        let dims = Dims { ctx: 6, seg: 3, stroke: 2, phi: 4, ..Dims::default() };
        let m = SrnnModel::new(dims, 2, vec!["A".into()], &InputSpec::Strokes, 2).unwrap();
        let inst = Instance {
            tokens: Tokens::Vectors(vec![vec![0.1, 0.2, 0.0]]),
            labels: None,
            durations: None,
        };
        assert!(m.decode(&inst).is_err());
        let ok = Instance {
            tokens: Tokens::Vectors(vec![vec![0.1, 0.2, 0.0, 0.0, 0.3, 0.4, 0.2, 0.2]]),
            labels: None,
            durations: None,
        };
        assert_eq!(m.decode(&ok).unwrap().len(), 1);
    }

    #[test]
    fn gold_mapping_requires_known_labels() {
        let labels = vec!["A".to_string(), "B".to_string()];
        let inst = Instance {
            tokens: Tokens::Vectors(vec![vec![0.0]; 3]),
            labels: Some(vec!["B".into(), "A".into()]),
            durations: Some(vec![2, 1]),
        };
        let segs = gold_segments(&labels, &inst).unwrap();
        assert_eq!(segs[0].label, 1);
        assert_eq!(segs[1].label, 0);

        let unknown = Instance {
            tokens: Tokens::Vectors(vec![vec![0.0]]),
            labels: Some(vec!["Z".into()]),
            durations: Some(vec![1]),
        };
        assert!(gold_segments(&labels, &unknown).is_err());
    }
}
