//! BiLSTM prefix encoder over day representations.

use crate::tensor::{Graph, NodeId, Tensor};

use super::{LstmParams, Model};

impl Model {
    fn zero_state(&self, g: &mut Graph) -> NodeId {
        g.constant(Tensor::zeros(&[1, self.config.lstm_hidden]))
    }

    /// One LSTM step. `x` is `1 × embed_dim`, states are `1 × hidden`.
    /// Gate order in the fused projections is `[i, f, g, o]`.
    fn lstm_step(
        &self,
        g: &mut Graph,
        params: &LstmParams,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> (NodeId, NodeId) {
        let h = self.config.lstm_hidden;
        let w_x = g.param(&self.store, params.w_x);
        let w_h = g.param(&self.store, params.w_h);
        let b = g.param(&self.store, params.b);
        let from_x = g.matmul(x, w_x);
        let from_h = g.matmul(h_prev, w_h);
        let pre = g.add(from_x, from_h);
        let gates = g.add_row(pre, b);
        let i_gate = g.slice_cols(gates, 0, h);
        let f_gate = g.slice_cols(gates, h, 2 * h);
        let g_cand = g.slice_cols(gates, 2 * h, 3 * h);
        let o_gate = g.slice_cols(gates, 3 * h, 4 * h);
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.sigmoid(f_gate);
        let g_cand = g.tanh(g_cand);
        let o_gate = g.sigmoid(o_gate);
        let keep = g.mul(f_gate, c_prev);
        let write = g.mul(i_gate, g_cand);
        let c = g.add(keep, write);
        let c_act = g.tanh(c);
        let h_out = g.mul(o_gate, c_act);
        (h_out, c)
    }

    /// Runs one direction over `inputs` in the given order and returns the
    /// final hidden state.
    fn run_direction(&self, g: &mut Graph, params: &LstmParams, inputs: &[NodeId]) -> NodeId {
        let mut h = self.zero_state(g);
        let mut c = self.zero_state(g);
        for &x in inputs {
            let (nh, nc) = self.lstm_step(g, params, x, h, c);
            h = nh;
            c = nc;
        }
        h
    }

    /// Encodes the prefix of day representations (each `1 × embed_dim`) into
    /// a single `1 × 2·hidden` vector: forward final state concatenated with
    /// backward final state.
    pub fn encode_prefix_days(&self, g: &mut Graph, day_reps: &[NodeId]) -> NodeId {
        assert!(!day_reps.is_empty(), "prefix must contain at least one day");
        let (fwd_params, bwd_params) = self.lstm_params();
        let (fwd_params, bwd_params) = (*fwd_params, *bwd_params);
        let fwd = self.run_direction(g, &fwd_params, day_reps);
        let reversed: Vec<NodeId> = day_reps.iter().rev().copied().collect();
        let bwd = self.run_direction(g, &bwd_params, &reversed);
        g.concat_cols(&[fwd, bwd])
    }

    /// Prefix representations for every next-day target in one pass: given
    /// the representations of days `1..=T`, returns the encodings of prefixes
    /// `1..=t` for `t = 1..T` (the predictor inputs for targets `2..=T`).
    ///
    /// The forward chain is built once and shared across prefixes, so the
    /// whole family costs one forward pass plus one backward chain per
    /// prefix; each returned node is value-identical to calling
    /// [`Model::encode_prefix_days`] on that prefix alone.
    pub fn prefix_states(&self, g: &mut Graph, day_reps: &[NodeId]) -> Vec<NodeId> {
        assert!(day_reps.len() >= 2, "need at least two days to form a next-day target");
        let (fwd_params, bwd_params) = self.lstm_params();
        let (fwd_params, bwd_params) = (*fwd_params, *bwd_params);
        let mut out = Vec::with_capacity(day_reps.len() - 1);
        let mut h = self.zero_state(g);
        let mut c = self.zero_state(g);
        for t in 0..day_reps.len() - 1 {
            let (nh, nc) = self.lstm_step(g, &fwd_params, day_reps[t], h, c);
            h = nh;
            c = nc;
            let reversed: Vec<NodeId> = day_reps[..=t].iter().rev().copied().collect();
            let bwd = self.run_direction(g, &bwd_params, &reversed);
            out.push(g.concat_cols(&[h, bwd]));
        }
        out
    }
}
