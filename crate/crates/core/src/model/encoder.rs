//! Transformer day encoder: multi-head self-attention over the unordered
//! day-element sequence.

use crate::tensor::{Graph, NodeId, Tensor};

use super::Model;

/// Output of one day's encoder pass. `t_cls` is row 0 (the day
/// representation); `per_token` keeps every row, including the masked
/// positions the masked-activity head reads.
#[derive(Debug, Clone, Copy)]
pub struct DayEncoderOutput {
    pub t_cls: NodeId,
    pub per_token: NodeId,
}

impl Model {
    /// Additive attention mask that removes rows `n_real..l` from every
    /// query's key set (used when short days are padded to a common length).
    pub fn pad_mask(&self, g: &mut Graph, l: usize, n_real: usize) -> NodeId {
        let mut data = vec![0.0; l * l];
        for row in 0..l {
            for col in n_real..l {
                data[row * l + col] = -1e9;
            }
        }
        g.constant(Tensor::from_vec(&[l, l], data).unwrap())
    }

    /// Runs the N-layer stack over an assembled `(1+n) × q` input. Each layer
    /// is self-attention (Q=K=V= the layer input) with a residual connection
    /// and layer norm, then a position-wise feed-forward with another
    /// residual and layer norm. With zero layers the stack is the identity.
    pub fn encode_day(&self, g: &mut Graph, input: NodeId, mask: Option<NodeId>) -> DayEncoderOutput {
        assert_eq!(
            g.value(input).cols(),
            self.config.embed_dim,
            "encode_day: input width must equal embed_dim"
        );
        assert!(g.value(input).rows() >= 2, "encode_day: need [CLS] plus at least one token");
        let d_k = self.config.head_dim();
        let mut x = input;
        for layer in &self.params.layers {
            let wq = g.param(&self.store, layer.w_q);
            let wk = g.param(&self.store, layer.w_k);
            let wv = g.param(&self.store, layer.w_v);
            let wo = g.param(&self.store, layer.w_o);
            let q = g.matmul(x, wq);
            let k = g.matmul(x, wk);
            let v = g.matmul(x, wv);
            let mut heads = Vec::with_capacity(self.config.n_heads);
            for h in 0..self.config.n_heads {
                let (lo, hi) = (h * d_k, (h + 1) * d_k);
                let qh = g.slice_cols(q, lo, hi);
                let kh = g.slice_cols(k, lo, hi);
                let vh = g.slice_cols(v, lo, hi);
                heads.push(g.scaled_dot_attention(qh, kh, vh, mask));
            }
            let concat = g.concat_cols(&heads);
            let attn = g.matmul(concat, wo);

            let ln1_g = g.param(&self.store, layer.ln1_gain);
            let ln1_b = g.param(&self.store, layer.ln1_bias);
            let res1 = g.add(x, attn);
            let norm1 = g.layer_norm(res1, ln1_g, ln1_b, 1e-12);

            let w1 = g.param(&self.store, layer.ff_w1);
            let b1 = g.param(&self.store, layer.ff_b1);
            let w2 = g.param(&self.store, layer.ff_w2);
            let b2 = g.param(&self.store, layer.ff_b2);
            let h1 = g.matmul(norm1, w1);
            let h1 = g.add_row(h1, b1);
            let h1 = g.gelu(h1);
            let h2 = g.matmul(h1, w2);
            let ff = g.add_row(h2, b2);

            let ln2_g = g.param(&self.store, layer.ln2_gain);
            let ln2_b = g.param(&self.store, layer.ln2_bias);
            let res2 = g.add(norm1, ff);
            x = g.layer_norm(res2, ln2_g, ln2_b, 1e-12);
        }
        let t_cls = g.select_rows(x, &[0]);
        DayEncoderOutput { t_cls, per_token: x }
    }
}
