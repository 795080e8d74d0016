//! Shared post-norm transformer block used by the encoder and by the
//! aggregator transformer (which reuses the same layer geometry so that
//! encoder layers can be copied into it).

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Params, Tensor};

pub(crate) const LN_EPS: f64 = 1e-9;
pub(crate) const INIT_STD: f64 = 0.02;

pub(crate) struct TransformerLayer {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl TransformerLayer {
    pub fn init(
        d: usize,
        ff: usize,
        registry: &mut Params,
        prefix: &str,
        rng: &mut ChaCha8Rng,
    ) -> TransformerLayer {
        let mut reg = |name: String, t: Tensor| registry.register(name, t);
        TransformerLayer {
            wq: reg(format!("{prefix}.wq"), Tensor::randn(&[d, d], INIT_STD, rng)),
            bq: reg(format!("{prefix}.bq"), Tensor::param(&[d], vec![0.0; d])),
            wk: reg(format!("{prefix}.wk"), Tensor::randn(&[d, d], INIT_STD, rng)),
            bk: reg(format!("{prefix}.bk"), Tensor::param(&[d], vec![0.0; d])),
            wv: reg(format!("{prefix}.wv"), Tensor::randn(&[d, d], INIT_STD, rng)),
            bv: reg(format!("{prefix}.bv"), Tensor::param(&[d], vec![0.0; d])),
            wo: reg(format!("{prefix}.wo"), Tensor::randn(&[d, d], INIT_STD, rng)),
            bo: reg(format!("{prefix}.bo"), Tensor::param(&[d], vec![0.0; d])),
            ln1_gain: reg(format!("{prefix}.ln1_gain"), Tensor::param(&[d], vec![1.0; d])),
            ln1_bias: reg(format!("{prefix}.ln1_bias"), Tensor::param(&[d], vec![0.0; d])),
            ff_w1: reg(format!("{prefix}.ff_w1"), Tensor::randn(&[d, ff], INIT_STD, rng)),
            ff_b1: reg(format!("{prefix}.ff_b1"), Tensor::param(&[ff], vec![0.0; ff])),
            ff_w2: reg(format!("{prefix}.ff_w2"), Tensor::randn(&[ff, d], INIT_STD, rng)),
            ff_b2: reg(format!("{prefix}.ff_b2"), Tensor::param(&[d], vec![0.0; d])),
            ln2_gain: reg(format!("{prefix}.ln2_gain"), Tensor::param(&[d], vec![1.0; d])),
            ln2_bias: reg(format!("{prefix}.ln2_bias"), Tensor::param(&[d], vec![0.0; d])),
        }
    }

    /// One attention + feed-forward block over `x` (`[n, d]`), restricted
    /// to the `allow` matrix (`n*n`, row-major). `dropout` is applied to
    /// the attention and feed-forward outputs when provided.
    pub fn forward(
        &self,
        x: &Tensor,
        allow: &Rc<Vec<bool>>,
        heads: usize,
        mut dropout: impl FnMut(Tensor) -> Result<Tensor>,
    ) -> Result<Tensor> {
        let d = x.shape()[1];
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = x.matmul(&self.wq)?.add(&self.bq)?;
        let k = x.matmul(&self.wk)?.add(&self.bk)?;
        let v = x.matmul(&self.wv)?.add(&self.bv)?;

        let mut head_outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = q.slice_cols(lo, hi)?;
            let kh = k.slice_cols(lo, hi)?;
            let vh = v.slice_cols(lo, hi)?;
            let scores = qh.matmul(&kh.transpose2()?)?.scale(scale);
            let weights = scores.masked_softmax(allow)?;
            head_outputs.push(weights.matmul(&vh)?);
        }
        let ctx = Tensor::concat(&head_outputs, 1)?;
        let attn_out = dropout(ctx.matmul(&self.wo)?.add(&self.bo)?)?;
        let x = x
            .add(&attn_out)?
            .layer_norm(1, LN_EPS)?
            .mul(&self.ln1_gain)?
            .add(&self.ln1_bias)?;

        let hidden = x.matmul(&self.ff_w1)?.add(&self.ff_b1)?.gelu();
        let ff_out = dropout(hidden.matmul(&self.ff_w2)?.add(&self.ff_b2)?)?;
        x.add(&ff_out)?
            .layer_norm(1, LN_EPS)?
            .mul(&self.ln2_gain)?
            .add(&self.ln2_bias)
    }

    /// Parameter field names in registration order, used when copying one
    /// stack's layers into another.
    pub fn field_names() -> &'static [&'static str] {
        &[
            "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gain", "ln1_bias", "ff_w1",
            "ff_b1", "ff_w2", "ff_b2", "ln2_gain", "ln2_bias",
        ]
    }

    pub fn field(&self, name: &str) -> &Tensor {
        match name {
            "wq" => &self.wq,
            "bq" => &self.bq,
            "wk" => &self.wk,
            "bk" => &self.bk,
            "wv" => &self.wv,
            "bv" => &self.bv,
            "wo" => &self.wo,
            "bo" => &self.bo,
            "ln1_gain" => &self.ln1_gain,
            "ln1_bias" => &self.ln1_bias,
            "ff_w1" => &self.ff_w1,
            "ff_b1" => &self.ff_b1,
            "ff_w2" => &self.ff_w2,
            "ff_b2" => &self.ff_b2,
            "ln2_gain" => &self.ln2_gain,
            "ln2_bias" => &self.ln2_bias,
            other => panic!("unknown layer field {other}"),
        }
    }
}
