//! Image encoder, HTML sequence decoder, coordinate sequence decoder, ROI
//! projection and the regression head used by the RD ablation.

pub mod decoder;
pub mod encoder;
pub mod roi;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use tabstruct_core::tokens::Vocab;
use tabstruct_core::BBox;

use crate::error::{Error, Result};
use crate::nn::{sinusoid_1d, sinusoid_2d, Ctx, Embedding, Init, Linear, ParamStore};
use decoder::{DecoderStack, Kv, StackOutput};
use encoder::Encoder;

/// Which branch produces cell boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordHead {
    /// Coordinate sequence decoder: four classified coordinate tokens.
    Csd,
    /// Regression decoder: sigmoid outputs trained with L1.
    Rd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_side: u32,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Longest HTML token sequence, `<sos>` and `<eos>` included.
    pub max_html_len: usize,
    /// Largest span with its own vocabulary token.
    pub max_span: u32,
    pub n_bins: u32,
    /// Widths of the encoder stem and its three strided stages.
    pub encoder_channels: [usize; 4],
    /// Aspects of the global context block; 0 disables it.
    pub context_aspects: usize,
    pub coord_head: CoordHead,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small model for CPU training on 160 px tables.
    pub fn desk() -> Self {
        Self {
            image_side: 160,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 256,
            dropout: 0.1,
            max_html_len: 128,
            max_span: 5,
            n_bins: 160,
            encoder_channels: [32, 64, 96, 128],
            context_aspects: 4,
            coord_head: CoordHead::Csd,
        }
    }

    /// Published model scale.
    pub fn full() -> Self {
        Self {
            image_side: 608,
            d_model: 512,
            n_heads: 8,
            n_layers: 3,
            ffn_dim: 2048,
            dropout: 0.1,
            max_html_len: 500,
            max_span: 5,
            n_bins: 608,
            encoder_channels: [64, 128, 256, 512],
            context_aspects: 8,
            coord_head: CoordHead::Csd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even for sinusoidal encodings".into());
        }
        if self.max_html_len < 2 {
            return bad("max_html_len must be at least 2".into());
        }
        if self.image_side == 0 || self.image_side % 16 != 0 {
            return bad(format!(
                "image_side {} is not a multiple of 16",
                self.image_side
            ));
        }
        if self.n_bins == 0 || self.max_span == 0 || self.n_layers == 0 {
            return bad("n_bins, max_span and n_layers must be positive".into());
        }
        let last = self.encoder_channels[3];
        if self.context_aspects > 0 && last % self.context_aspects != 0 {
            return bad(format!(
                "context_aspects {} must divide {last}",
                self.context_aspects
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is not in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.max_span)
    }

    /// Side of the feature map.
    pub fn grid_side(&self) -> usize {
        self.image_side as usize / 16
    }
}

/// Output of a teacher-forced HTML pass.
pub struct HtmlOutput {
    /// `(B, T, V)`.
    pub logits: Tensor,
    /// `(B, T, d)`; the state at `t` emits token `t + 1`.
    pub hidden: Tensor,
    /// Per layer, `(B, h, T, L)`.
    pub cross_attn: Vec<Tensor>,
}

pub struct TableModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    encoder: Encoder,
    html_emb: Embedding,
    html_dec: DecoderStack,
    html_out: Linear,
    coord_emb: Embedding,
    coord_dec: DecoderStack,
    coord_out: Linear,
    rd_hidden: Linear,
    rd_out: Linear,
    roi_proj: Linear,
    memory_pe: Tensor,
    html_pe: Tensor,
    coord_pe: Tensor,
}

impl TableModel {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(seed, dtype, device.clone());
        let c = &config;
        let d = c.d_model;
        let vocab = c.vocab().len();
        let n_coord = c.n_bins as usize + 1;
        let encoder = Encoder::new(
            &mut params.scope("encoder"),
            c.encoder_channels,
            d,
            c.context_aspects,
        )?;
        let html_emb = Embedding::new(&mut params.scope("html.embed"), vocab, d)?;
        let html_dec = DecoderStack::new(
            &mut params.scope("html.decoder"),
            c.n_layers,
            d,
            c.n_heads,
            c.ffn_dim,
            c.dropout,
        )?;
        let html_out = Linear::new(&mut params.scope("html.out"), d, vocab)?;
        let coord_emb = Embedding::new(&mut params.scope("coord.embed"), n_coord, d)?;
        let coord_dec = DecoderStack::new(
            &mut params.scope("coord.decoder"),
            c.n_layers,
            d,
            c.n_heads,
            c.ffn_dim,
            c.dropout,
        )?;
        let coord_out = Linear::new(&mut params.scope("coord.out"), d, n_coord)?;
        let rd_hidden = Linear::new(&mut params.scope("rd.hidden"), d, d)?;
        let rd_out = Linear::with_init(&mut params.scope("rd.out"), d, 4, Init::Zeros)?;
        let roi_proj = Linear::new(&mut params.scope("va.proj"), 4 * d, d)?;
        let side = c.grid_side();
        Ok(Self {
            memory_pe: sinusoid_2d(side, side, d, dtype, device)?,
            html_pe: sinusoid_1d(c.max_html_len, d, dtype, device)?,
            coord_pe: sinusoid_1d(4, d, dtype, device)?,
            config,
            params,
            encoder,
            html_emb,
            html_dec,
            html_out,
            coord_emb,
            coord_dec,
            coord_out,
            rd_hidden,
            rd_out,
            roi_proj,
        })
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// `(B, 3, S, S)` images to the feature map `M`, `(B, d, S/16, S/16)`.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let s = self.config.image_side as usize;
        match images.dims() {
            [_, 3, h, w] if *h == s && *w == s => self.encoder.forward(images),
            dims => Err(Error::Shape(format!(
                "expected (B, 3, {s}, {s}) images, got {dims:?}"
            ))),
        }
    }

    /// Flattened `M` plus its 2D positional encoding, `(B, L, d)`.
    pub fn memory(&self, m: &Tensor) -> Result<Tensor> {
        let (b, d, h, w) = m.dims4()?;
        let flat = m.reshape((b, d, h * w))?.transpose(1, 2)?.contiguous()?;
        Ok(flat.broadcast_add(&self.memory_pe)?)
    }

    pub fn html_memory(&self, memory: &Tensor) -> Result<Vec<Kv>> {
        self.html_dec.memory_kv(memory)
    }

    pub fn coord_memory(&self, memory: &Tensor) -> Result<Vec<Kv>> {
        self.coord_dec.memory_kv(memory)
    }

    /// Teacher-forced HTML pass over `tokens` `(B, T)` (u32, starting with `<sos>`).
    pub fn html_forward(&self, mem: &[Kv], tokens: &Tensor, ctx: &mut Ctx) -> Result<HtmlOutput> {
        let t = tokens.dim(1)?;
        if t > self.config.max_html_len {
            return Err(Error::Truncation {
                len: t,
                max: self.config.max_html_len,
            });
        }
        let size = self.config.vocab().len();
        check_range(tokens, size)?;
        let x = self
            .html_emb
            .forward(tokens)?
            .broadcast_add(&self.html_pe.narrow(0, 0, t)?)?;
        let StackOutput { hidden, cross_attn } = self.html_dec.forward(&x, mem, ctx)?;
        Ok(HtmlOutput {
            logits: self.html_out.forward(&hidden)?,
            hidden,
            cross_attn,
        })
    }

    /// Coordinate logits `(K, t + 1, n_bins + 1)` for cells whose start
    /// representations are `f_nc` `(K, d)`, given previous coordinates
    /// `prev` `(K, t)` with `t ≤ 3`. `mem` is the coordinate-decoder memory
    /// of the whole batch; `image_idx` `(K,)` picks each cell's image.
    pub fn coord_forward(
        &self,
        mem: &[Kv],
        image_idx: &Tensor,
        f_nc: &Tensor,
        prev: &Tensor,
        ctx: &mut Ctx,
    ) -> Result<Tensor> {
        let (k, t) = prev.dims2()?;
        if t > 3 {
            return Err(Error::Shape(format!(
                "at most 3 previous coordinates, got {t}"
            )));
        }
        check_range(prev, self.config.n_bins as usize + 1)?;
        let start = f_nc.unsqueeze(1)?;
        let x = if t == 0 {
            start
        } else {
            Tensor::cat(&[&start, &self.coord_emb.forward(prev)?], 1)?
        };
        let x = x.broadcast_add(&self.coord_pe.narrow(0, 0, t + 1)?)?;
        if k == 0 {
            let n = self.config.n_bins as usize + 1;
            return Ok(Tensor::zeros((0, t + 1, n), self.dtype(), self.device())?);
        }
        let cell_mem = mem
            .iter()
            .map(|kv| kv.select(image_idx))
            .collect::<Result<Vec<_>>>()?;
        let out = self.coord_dec.forward(&x, &cell_mem, ctx)?;
        self.coord_out.forward(&out.hidden)
    }

    /// ROI-aligned 2×2 features of `boxes` (pixels) projected to width `d`.
    /// `m` is the raw feature map `(B, d, h, w)`.
    pub fn roi_project(&self, m: &Tensor, image_idx: &Tensor, boxes: &[BBox]) -> Result<Tensor> {
        let (_, d, h, w) = m.dims4()?;
        let k = boxes.len();
        if k == 0 {
            return Ok(Tensor::zeros((0, d), self.dtype(), self.device())?);
        }
        let weights = roi::roi_weights(boxes, h, w, self.device())?.to_dtype(self.dtype())?;
        let flat = m
            .reshape((m.dim(0)?, d, h * w))?
            .transpose(1, 2)?
            .contiguous()?;
        let per_cell = flat.index_select(image_idx, 0)?;
        let pooled = weights.matmul(&per_cell)?.reshape((k, 4 * d))?;
        self.roi_proj.forward(&pooled)
    }

    /// Normalized `(l, t, r, b)` in `(0, 1)` for each cell, `(K, 4)`.
    pub fn regression_head(&self, f_nc: &Tensor) -> Result<Tensor> {
        let h = self.rd_hidden.forward(f_nc)?.relu()?;
        Ok(candle_nn::ops::sigmoid(&self.rd_out.forward(&h)?)?)
    }
}

fn check_range(ids: &Tensor, size: usize) -> Result<()> {
    if ids.elem_count() == 0 {
        return Ok(());
    }
    let max = ids.flatten_all()?.max(0)?.to_scalar::<u32>()?;
    if max as usize >= size {
        return Err(Error::Vocabulary { token: max, size });
    }
    Ok(())
}
