//! Pre-norm transformer decoder: causal self-attention, cross-attention to
//! the image memory, feed-forward.

use candle_core::{DType, Device, Tensor};

use crate::error::Result;
use crate::nn::{Ctx, LayerNorm, Linear, Scope};

/// Additive causal mask `(t, t)`: 0 on and below the diagonal, a large
/// negative value above it.
pub fn causal_mask(t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = (0..t * t)
        .map(|i| if i % t > i / t { -1e9 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (t, t), device)?.to_dtype(dtype)?)
}

/// Projected memory keys and values, `(B, h, L, d_head)` each.
#[derive(Debug, Clone)]
pub struct Kv {
    pub k: Tensor,
    pub v: Tensor,
}

impl Kv {
    /// Rows of the batch axis picked by `idx`.
    pub fn select(&self, idx: &Tensor) -> Result<Kv> {
        Ok(Kv {
            k: self.k.index_select(idx, 0)?,
            v: self.v.index_select(idx, 0)?,
        })
    }
}

pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(s: &mut Scope, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(&mut s.sub("q"), d, d)?,
            k: Linear::new(&mut s.sub("k"), d, d)?,
            v: Linear::new(&mut s.sub("v"), d, d)?,
            o: Linear::new(&mut s.sub("o"), d, d)?,
            heads,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    pub fn project_kv(&self, mem: &Tensor) -> Result<Kv> {
        Ok(Kv {
            k: self.split(&self.k.forward(mem)?)?,
            v: self.split(&self.v.forward(mem)?)?,
        })
    }

    /// Returns the output `(B, T, d)` and the attention weights `(B, h, T, L)`.
    pub fn attend(
        &self,
        x: &Tensor,
        kv: &Kv,
        mask: Option<&Tensor>,
        ctx: &mut Ctx,
        p: f64,
    ) -> Result<(Tensor, Tensor)> {
        let (b, t, d) = x.dims3()?;
        let q = self.split(&self.q.forward(x)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let mut scores = (q.matmul(&kv.k.t()?.contiguous()?)? * scale)?;
        if let Some(m) = mask {
            scores = scores.broadcast_add(m)?;
        }
        let weights = candle_nn::ops::softmax(&scores, candle_core::D::Minus1)?;
        let out = ctx.dropout(&weights, p)?.matmul(&kv.v)?;
        let out = out.transpose(1, 2)?.contiguous()?.reshape((b, t, d))?;
        Ok((self.o.forward(&out)?, weights))
    }
}

pub struct DecoderLayer {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

impl DecoderLayer {
    fn new(s: &mut Scope, d: usize, heads: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            ln_self: LayerNorm::new(&mut s.sub("ln_self"), d)?,
            self_attn: Attention::new(&mut s.sub("self_attn"), d, heads)?,
            ln_cross: LayerNorm::new(&mut s.sub("ln_cross"), d)?,
            cross_attn: Attention::new(&mut s.sub("cross_attn"), d, heads)?,
            ln_ff: LayerNorm::new(&mut s.sub("ln_ff"), d)?,
            ff_in: Linear::new(&mut s.sub("ff_in"), d, ffn)?,
            ff_out: Linear::new(&mut s.sub("ff_out"), ffn, d)?,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        mem: &Kv,
        mask: &Tensor,
        ctx: &mut Ctx,
        p: f64,
    ) -> Result<(Tensor, Tensor)> {
        let h = self.ln_self.forward(x)?;
        let self_kv = self.self_attn.project_kv(&h)?;
        let (a, _) = self.self_attn.attend(&h, &self_kv, Some(mask), ctx, p)?;
        let x = (x + ctx.dropout(&a, p)?)?;
        let (a, weights) =
            self.cross_attn
                .attend(&self.ln_cross.forward(&x)?, mem, None, ctx, p)?;
        let x = (x + ctx.dropout(&a, p)?)?;
        let f = self
            .ff_out
            .forward(&ctx.dropout(&self.ff_in.forward(&self.ln_ff.forward(&x)?)?.relu()?, p)?)?;
        Ok(((x + ctx.dropout(&f, p)?)?, weights))
    }
}

pub struct DecoderStack {
    layers: Vec<DecoderLayer>,
    ln_out: LayerNorm,
    dropout: f64,
}

/// Final hidden states `(B, T, d)` and per-layer cross-attention weights.
pub struct StackOutput {
    pub hidden: Tensor,
    pub cross_attn: Vec<Tensor>,
}

impl DecoderStack {
    pub fn new(
        s: &mut Scope,
        n_layers: usize,
        d: usize,
        heads: usize,
        ffn: usize,
        dropout: f64,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|i| DecoderLayer::new(&mut s.sub(&format!("layer{i}")), d, heads, ffn))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            ln_out: LayerNorm::new(&mut s.sub("ln_out"), d)?,
            dropout,
        })
    }

    /// Cross-attention keys and values for each layer.
    pub fn memory_kv(&self, mem: &Tensor) -> Result<Vec<Kv>> {
        self.layers
            .iter()
            .map(|l| l.cross_attn.project_kv(mem))
            .collect()
    }

    pub fn forward(&self, x: &Tensor, mem: &[Kv], ctx: &mut Ctx) -> Result<StackOutput> {
        let t = x.dim(1)?;
        let mask = causal_mask(t, x.dtype(), x.device())?;
        let mut x = ctx.dropout(x, self.dropout)?;
        let mut cross_attn = Vec::with_capacity(self.layers.len());
        for (layer, kv) in self.layers.iter().zip(mem) {
            let (y, w) = layer.forward(&x, kv, &mask, ctx, self.dropout)?;
            x = y;
            cross_attn.push(w);
        }
        Ok(StackOutput {
            hidden: self.ln_out.forward(&x)?,
            cross_attn,
        })
    }
}
