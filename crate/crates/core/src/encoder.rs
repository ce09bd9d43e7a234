//! Token encoders: the bidirectional context LSTM producing per-position
//! context vectors, the stroke front end that pools point sequences into
//! fixed-length token vectors, and learnable symbol embeddings.

use crate::diffgraph::{NodeId, ParamId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use std::collections::HashMap;
use std::io::BufRead;

/// Parameter ids for one LSTM direction: input, forget, output and candidate
/// weights over the concatenated `[x; h]` input, plus their biases.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden: usize,
    w_i: ParamId,
    w_f: ParamId,
    w_o: ParamId,
    w_c: ParamId,
    b_i: ParamId,
    b_f: ParamId,
    b_o: ParamId,
    b_c: ParamId,
}

impl LstmParams {
    pub fn register(params: &mut ModelParams, prefix: &str, input_dim: usize, hidden: usize) -> Self {
        let gate = |params: &mut ModelParams, g: &str| {
            params.register(&format!("{prefix}.w_{g}"), vec![hidden, input_dim + hidden])
        };
        let bias = |params: &mut ModelParams, g: &str| {
            params.register(&format!("{prefix}.b_{g}"), vec![hidden])
        };
        let w_i = gate(params, "i");
        let b_i = bias(params, "i");
        let w_f = gate(params, "f");
        let b_f = bias(params, "f");
        let w_o = gate(params, "o");
        let b_o = bias(params, "o");
        let w_c = gate(params, "c");
        let b_c = bias(params, "c");
        LstmParams { input_dim, hidden, w_i, w_f, w_o, w_c, b_i, b_f, b_o, b_c }
    }

    /// The forget-gate bias, which initialization sets to 1.0.
    pub fn forget_bias(&self) -> ParamId {
        self.b_f
    }

    /// Gate weight/bias pairs in (input, forget, output, candidate) order,
    /// for value-only re-evaluation outside the tape.
    pub(crate) fn gates(&self) -> [(ParamId, ParamId); 4] {
        [
            (self.w_i, self.b_i),
            (self.w_f, self.b_f),
            (self.w_o, self.b_o),
            (self.w_c, self.b_c),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

/// Zero hidden and cell state, the start-of-sequence state.
pub fn lstm_zero_state(tape: &mut Tape, hidden: usize) -> LstmState {
    let h = tape.leaf(Tensor::zeros(vec![hidden]));
    let c = tape.leaf(Tensor::zeros(vec![hidden]));
    LstmState { h, c }
}

/// One LSTM step: gates over `[x; h]`, no peepholes, tanh on the cell output.
pub fn lstm_step(
    tape: &mut Tape,
    params: &ModelParams,
    lstm: &LstmParams,
    x: NodeId,
    prev: &LstmState,
) -> Result<LstmState> {
    let xc = tape.concat(&[x, prev.h])?;
    let w_i = params.node(tape, lstm.w_i);
    let b_i = params.node(tape, lstm.b_i);
    let w_f = params.node(tape, lstm.w_f);
    let b_f = params.node(tape, lstm.b_f);
    let w_o = params.node(tape, lstm.w_o);
    let b_o = params.node(tape, lstm.b_o);
    let w_c = params.node(tape, lstm.w_c);
    let b_c = params.node(tape, lstm.b_c);

    let i_pre = tape.affine(w_i, xc, b_i)?;
    let i = tape.sigmoid(i_pre);
    let f_pre = tape.affine(w_f, xc, b_f)?;
    let f = tape.sigmoid(f_pre);
    let o_pre = tape.affine(w_o, xc, b_o)?;
    let o = tape.sigmoid(o_pre);
    let c_pre = tape.affine(w_c, xc, b_c)?;
    let c_hat = tape.tanh(c_pre);

    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, c_hat)?;
    let c = tape.add(keep, write)?;
    let c_out = tape.tanh(c);
    let h = tape.mul(o, c_out)?;
    Ok(LstmState { h, c })
}

/// Bidirectional context encoder. Each direction's hidden size is half the
/// context dimension; position i's context vector is `[fwd_i; bwd_i]`.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl ContextEncoder {
    pub fn register(
        params: &mut ModelParams,
        prefix: &str,
        input_dim: usize,
        context_dim: usize,
    ) -> Result<Self> {
        if !context_dim.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "context dimension must be even, got {context_dim}"
            )));
        }
        let half = context_dim / 2;
        Ok(ContextEncoder {
            fwd: LstmParams::register(params, &format!("{prefix}.fwd"), input_dim, half),
            bwd: LstmParams::register(params, &format!("{prefix}.bwd"), input_dim, half),
        })
    }

    pub fn context_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }
}

/// Run both directions over the token vectors and concatenate per position.
pub fn encode_context(
    tape: &mut Tape,
    params: &ModelParams,
    enc: &ContextEncoder,
    inputs: &[NodeId],
) -> Result<Vec<NodeId>> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("encode_context"));
    }
    let n = inputs.len();
    let mut fwd = Vec::with_capacity(n);
    let mut state = lstm_zero_state(tape, enc.fwd.hidden);
    for &x in inputs {
        state = lstm_step(tape, params, &enc.fwd, x, &state)?;
        fwd.push(state.h);
    }
    let mut bwd = Vec::with_capacity(n);
    let mut state = lstm_zero_state(tape, enc.bwd.hidden);
    for &x in inputs.iter().rev() {
        state = lstm_step(tape, params, &enc.bwd, x, &state)?;
        bwd.push(state.h);
    }
    bwd.reverse();
    (0..n).map(|i| tape.concat(&[fwd[i], bwd[i]])).collect()
}

/// Bidirectional LSTM over 4-dim point vectors; a stroke becomes the
/// concatenation of both directions' final hidden states.
#[derive(Debug, Clone)]
pub struct StrokeEmbedder {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl StrokeEmbedder {
    pub fn register(params: &mut ModelParams, prefix: &str, hidden_per_dir: usize) -> Self {
        StrokeEmbedder {
            fwd: LstmParams::register(params, &format!("{prefix}.fwd"), 4, hidden_per_dir),
            bwd: LstmParams::register(params, &format!("{prefix}.bwd"), 4, hidden_per_dir),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }
}

pub fn embed_stroke(
    tape: &mut Tape,
    params: &ModelParams,
    se: &StrokeEmbedder,
    points: &[[f64; 4]],
) -> Result<NodeId> {
    if points.is_empty() {
        return Err(Error::EmptyInput("embed_stroke"));
    }
    let mut state = lstm_zero_state(tape, se.fwd.hidden);
    for p in points {
        let x = tape.leaf(Tensor::vector(p.to_vec()));
        state = lstm_step(tape, params, &se.fwd, x, &state)?;
    }
    let fwd_last = state.h;
    let mut state = lstm_zero_state(tape, se.bwd.hidden);
    for p in points.iter().rev() {
        let x = tape.leaf(Tensor::vector(p.to_vec()));
        state = lstm_step(tape, params, &se.bwd, x, &state)?;
    }
    tape.concat(&[fwd_last, state.h])
}

/// Turn raw normalized pen coordinates into 4-dim point features
/// `(p_x, p_y, Δp_x, Δp_y)`. The first point of a stroke has Δp = (0, 0).
pub fn stroke_features(raw: &[(f64, f64)]) -> Vec<[f64; 4]> {
    let mut out = Vec::with_capacity(raw.len());
    let mut prev: Option<(f64, f64)> = None;
    for &(x, y) in raw {
        let (dx, dy) = match prev {
            Some((px, py)) => (x - px, y - py),
            None => (0.0, 0.0),
        };
        out.push([x, y, dx, dy]);
        prev = Some((x, y));
    }
    out
}

/// Symbol vocabulary with a reserved UNK row at index 0. Out-of-vocabulary
/// symbols fall back to UNK instead of erroring.
#[derive(Debug, Clone)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const UNK_ROW: usize = 0;

    /// Build from symbols; duplicates collapse, order of `symbols` decides
    /// row order (callers pass a sorted list for determinism).
    pub fn build<I: IntoIterator<Item = String>>(symbols: I) -> Self {
        let mut v = Vocab { symbols: Vec::new(), index: HashMap::new() };
        for s in symbols {
            if !v.index.contains_key(&s) {
                v.index.insert(s.clone(), v.symbols.len() + 1);
                v.symbols.push(s);
            }
        }
        v
    }

    /// Number of embedding rows: vocabulary size plus the UNK row.
    pub fn rows(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn row_of(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(Self::UNK_ROW)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Embedding rows for a symbol sequence; rows are learnable and fine-tuned
/// during training.
pub fn embed_symbols(
    tape: &mut Tape,
    params: &ModelParams,
    table: ParamId,
    vocab: &Vocab,
    symbols: &[String],
) -> Result<Vec<NodeId>> {
    let tn = params.node(tape, table);
    symbols
        .iter()
        .map(|s| tape.lookup(tn, vocab.row_of(s)))
        .collect()
}

/// Parse a pretrained-embedding text file: one `symbol v₁ v₂ …` entry per
/// line, whitespace-separated, UTF-8.
pub fn load_pretrained_embeddings(path: &std::path::Path) -> Result<Vec<(String, Vec<f64>)>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let symbol = parts.next().unwrap().to_string();
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
        match values {
            Ok(v) if !v.is_empty() => out.push((symbol, v)),
            _ => {
                return Err(Error::CorpusParse {
                    line: lineno + 1,
                    msg: "malformed embedding entry".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Overwrite embedding rows for vocabulary symbols present in the pretrained
/// set. Returns how many rows were applied. Dimension mismatches are
/// validation errors; the UNK row keeps its random initialization.
pub fn apply_pretrained(
    params: &mut ModelParams,
    table: ParamId,
    vocab: &Vocab,
    entries: &[(String, Vec<f64>)],
) -> Result<usize> {
    let dim = params.value(table).shape()[1];
    let mut applied = 0;
    for (symbol, values) in entries {
        let row = vocab.row_of(symbol);
        if row == Vocab::UNK_ROW {
            continue;
        }
        if values.len() != dim {
            return Err(Error::Validation(format!(
                "pretrained vector for {symbol:?} has dimension {}, table expects {dim}",
                values.len()
            )));
        }
        params.value_mut(table).data_mut()[row * dim..(row + 1) * dim].copy_from_slice(values);
        applied += 1;
    }
    Ok(applied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_stream;

    fn make_encoder(input_dim: usize, ctx: usize) -> (ModelParams, ContextEncoder) {
        let mut params = ModelParams::new();
        let enc = ContextEncoder::register(&mut params, "ctx", input_dim, ctx).unwrap();
        (params, enc)
    }

    fn leaf_inputs(tape: &mut Tape, vecs: &[Vec<f64>]) -> Vec<NodeId> {
        vecs.iter().map(|v| tape.leaf(Tensor::vector(v.clone()))).collect()
    }

    #[test]
    fn zero_parameters_give_zero_context() {
        let (params, enc) = make_encoder(3, 8);
        let mut tape = Tape::new();
        let xs = leaf_inputs(&mut tape, &[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]);
        let ctx = encode_context(&mut tape, &params, &enc, &xs).unwrap();
        assert_eq!(ctx.len(), 2);
        for c in ctx {
            assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn context_length_matches_input_length() {
        let (mut params, enc) = make_encoder(2, 6);
        params.init_uniform(&mut named_stream(1, "init"), -0.08, 0.08);
        for n in 1..5 {
            let mut tape = Tape::new();
            let xs = leaf_inputs(&mut tape, &vec![vec![0.3, -0.1]; n]);
            let ctx = encode_context(&mut tape, &params, &enc, &xs).unwrap();
            assert_eq!(ctx.len(), n);
            assert_eq!(tape.value(ctx[0]).shape(), &[6]);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let (params, enc) = make_encoder(2, 4);
        let mut tape = Tape::new();
        assert!(encode_context(&mut tape, &params, &enc, &[]).is_err());
    }

    #[test]
    fn perturbing_first_token_reaches_last_context() {
        // The backward direction must carry token 1 into c₃.
        let (mut params, enc) = make_encoder(2, 6);
        params.init_uniform(&mut named_stream(2, "init"), -0.08, 0.08);

        let run = |first: f64| {
            let mut tape = Tape::new();
            let xs = leaf_inputs(
                &mut tape,
                &[vec![first, 0.2], vec![0.1, -0.4], vec![-0.2, 0.9]],
            );
            let ctx = encode_context(&mut tape, &params, &enc, &xs).unwrap();
            tape.value(ctx[2]).data().to_vec()
        };
        let base = run(0.5);
        let perturbed = run(0.9);
        assert!(base.iter().zip(&perturbed).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn context_gradients_match_finite_differences() {
        let (mut params, enc) = make_encoder(2, 6);
        params.init_uniform(&mut named_stream(8, "init"), -0.3, 0.3);

        fn loss(params: &ModelParams, enc: &ContextEncoder, and_grads: bool) -> (f64, Option<Tape>) {
            let mut tape = Tape::new();
            let xs: Vec<NodeId> = [vec![0.4, -0.3], vec![-0.1, 0.8], vec![0.6, 0.2]]
                .iter()
                .map(|v| tape.leaf(Tensor::vector(v.clone())))
                .collect();
            let ctx = encode_context(&mut tape, params, enc, &xs).unwrap();
            let flat = tape.concat(&ctx).unwrap();
            let ones = tape.leaf(Tensor::vector(vec![1.0; 18]));
            let y = tape.dot(flat, ones).unwrap();
            let v = tape.scalar_value(y);
            if !and_grads {
                return (v, None);
            }
            tape.backward(y).unwrap();
            (v, Some(tape))
        }

        let (_, tape) = loss(&params, &enc, true);
        params.zero_grads();
        params.accumulate_grads(&tape.unwrap());
        let total = params.coordinate_count();
        for k in 0..12 {
            let flat = (k * 1543) % total;
            let analytic = params.grad_coordinate(flat);
            let h = 1e-4;
            params.nudge_coordinate(flat, h);
            let (fp, _) = loss(&params, &enc, false);
            params.nudge_coordinate(flat, -2.0 * h);
            let (fm, _) = loss(&params, &enc, false);
            params.nudge_coordinate(flat, h);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                crate::numerics::relative_error(analytic, fd) < 1e-4,
                "coordinate {flat}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn stroke_embedding_shape_and_zero_map() {
        let mut params = ModelParams::new();
        let se = StrokeEmbedder::register(&mut params, "stroke", 5);
        let mut tape = Tape::new();
        let pts = stroke_features(&[(0.1, 0.2), (0.3, 0.4), (0.2, 0.9)]);
        assert_eq!(pts[0][2], 0.0);
        assert_eq!(pts[0][3], 0.0);
        let e = embed_stroke(&mut tape, &params, &se, &pts).unwrap();
        assert_eq!(tape.value(e).shape(), &[10]);
        assert!(tape.value(e).data().iter().all(|&v| v == 0.0));
        assert!(embed_stroke(&mut tape, &params, &se, &[]).is_err());
    }

    #[test]
    fn reversed_stroke_with_swapped_directions_swaps_halves() {
        let mut params = ModelParams::new();
        let se = StrokeEmbedder::register(&mut params, "stroke", 4);
        params.init_uniform(&mut named_stream(3, "init"), -0.08, 0.08);
        let swapped = StrokeEmbedder { fwd: se.bwd.clone(), bwd: se.fwd.clone() };

        let pts = stroke_features(&[(0.0, 0.0), (0.5, 0.5), (1.0, 0.25)]);
        let mut rev = pts.clone();
        rev.reverse();

        let mut tape = Tape::new();
        let a = embed_stroke(&mut tape, &params, &se, &pts).unwrap();
        let b = embed_stroke(&mut tape, &params, &swapped, &rev).unwrap();
        let av = tape.value(a).data();
        let bv = tape.value(b).data();
        let h = se.fwd.hidden;
        assert_eq!(&av[..h], &bv[h..]);
        assert_eq!(&av[h..], &bv[..h]);
    }

    #[test]
    fn symbol_lookup_and_unk_fallback() {
        let mut params = ModelParams::new();
        let vocab = Vocab::build(["a".to_string(), "b".to_string()]);
        let table = params.register("sym", vec![vocab.rows(), 64]);
        params.init_uniform(&mut named_stream(4, "init"), -0.08, 0.08);

        let mut tape = Tape::new();
        let out = embed_symbols(
            &mut tape,
            &params,
            table,
            &vocab,
            &["b".to_string(), "zzz".to_string()],
        )
        .unwrap();
        assert_eq!(tape.value(out[0]).shape(), &[64]);
        let dim = 64;
        let expect_b = &params.value(table).data()[2 * dim..3 * dim];
        assert_eq!(tape.value(out[0]).data(), expect_b);
        let expect_unk = &params.value(table).data()[..dim];
        assert_eq!(tape.value(out[1]).data(), expect_unk);
    }

    #[test]
    fn pretrained_embeddings_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vec.txt");
        std::fs::write(&path, "a 1.0 2.0\nb 3.0 4.0\nzzz 9.0 9.0\n").unwrap();

        let mut params = ModelParams::new();
        let vocab = Vocab::build(["a".to_string(), "b".to_string()]);
        let table = params.register("sym", vec![vocab.rows(), 2]);
        let entries = load_pretrained_embeddings(&path).unwrap();
        let applied = apply_pretrained(&mut params, table, &vocab, &entries).unwrap();
        assert_eq!(applied, 2);
        assert_eq!(&params.value(table).data()[2..4], &[1.0, 2.0]);
        assert_eq!(&params.value(table).data()[4..6], &[3.0, 4.0]);

        let bad = vec![("a".to_string(), vec![1.0, 2.0, 3.0])];
        assert!(apply_pretrained(&mut params, table, &vocab, &bad).is_err());
    }
}
