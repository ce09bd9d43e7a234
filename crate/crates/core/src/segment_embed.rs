//! Segment embeddings for all feasible spans.
//!
//! A naive encoder would rerun an RNN from scratch for every span. The table
//! here shares prefixes: for each start position the forward LSTM extends one
//! token at a time, and for each end position the reverse LSTM extends
//! leftwards, so filling the whole band costs at most `2·L·|x|` RNN steps.
//! Spans longer than `max_len` are pruned and never stored.

use crate::diffgraph::{NodeId, Tape};
use crate::encoder::{lstm_step, lstm_zero_state, LstmParams};
use crate::error::Result;
use crate::params::ModelParams;

/// Forward and reverse segment embeddings, dense over the pruned band.
/// Spans are 0-based and inclusive of their start: `(start, len)` covers
/// tokens `start .. start+len`.
pub struct SegmentTable {
    n: usize,
    max_len: usize,
    dim_fwd: usize,
    dim_rev: usize,
    fwd: Vec<Option<NodeId>>,
    rev: Vec<Option<NodeId>>,
}

impl SegmentTable {
    fn idx(&self, start: usize, len: usize) -> usize {
        start * self.max_len + (len - 1)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.dim_fwd + self.dim_rev
    }

    /// Forward embedding h→ for the span, if it is inside the pruned band.
    pub fn forward(&self, start: usize, len: usize) -> Option<NodeId> {
        if len == 0 || len > self.max_len || start + len > self.n {
            return None;
        }
        self.fwd[self.idx(start, len)]
    }

    /// Reverse embedding h← for the span, if it is inside the pruned band.
    pub fn reverse(&self, start: usize, len: usize) -> Option<NodeId> {
        if len == 0 || len > self.max_len || start + len > self.n {
            return None;
        }
        self.rev[self.idx(start, len)]
    }

    /// Number of stored cells per direction.
    pub fn cells_per_direction(&self) -> usize {
        self.fwd.iter().filter(|c| c.is_some()).count()
    }
}

/// Fill the table: forward cells extend from `(i, i)` rightwards, reverse
/// cells extend from `(j, j)` leftwards, both from the zero initial state.
#[allow(clippy::needless_range_loop)]
pub fn build_segment_table(
    tape: &mut Tape,
    params: &ModelParams,
    fwd_lstm: &LstmParams,
    rev_lstm: &LstmParams,
    context: &[NodeId],
    max_len: usize,
) -> Result<SegmentTable> {
    assert!(max_len >= 1, "max segment length must be at least 1");
    let n = context.len();
    let mut table = SegmentTable {
        n,
        max_len,
        dim_fwd: fwd_lstm.hidden,
        dim_rev: rev_lstm.hidden,
        fwd: vec![None; n * max_len],
        rev: vec![None; n * max_len],
    };

    for start in 0..n {
        let mut state = lstm_zero_state(tape, fwd_lstm.hidden);
        for end in start..n.min(start + max_len) {
            state = lstm_step(tape, params, fwd_lstm, context[end], &state)?;
            let len = end - start + 1;
            let idx = table.idx(start, len);
            table.fwd[idx] = Some(state.h);
        }
    }
    for end in 0..n {
        let mut state = lstm_zero_state(tape, rev_lstm.hidden);
        let lo = (end + 1).saturating_sub(max_len);
        for start in (lo..=end).rev() {
            state = lstm_step(tape, params, rev_lstm, context[start], &state)?;
            let len = end - start + 1;
            let idx = table.idx(start, len);
            table.rev[idx] = Some(state.h);
        }
    }
    Ok(table)
}
