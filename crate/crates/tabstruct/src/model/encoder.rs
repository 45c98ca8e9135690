//! Residual convolutional encoder with total stride 16 and an optional
//! multi-aspect global context block.

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::nn::{Conv2d, GroupNorm, Init, LayerNorm, Linear, Scope};

fn groups_for(channels: usize) -> usize {
    [8, 4, 2]
        .into_iter()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

struct ConvNorm {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvNorm {
    fn new(s: &mut Scope, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&mut s.sub("conv"), c_in, c_out, k, stride, false)?,
            norm: GroupNorm::new(&mut s.sub("norm"), groups_for(c_out), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.forward(&self.conv.forward(x)?)
    }
}

struct ResBlock {
    a: ConvNorm,
    b: ConvNorm,
    shortcut: Option<ConvNorm>,
}

impl ResBlock {
    fn new(s: &mut Scope, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let shortcut = (c_in != c_out || stride != 1)
            .then(|| ConvNorm::new(&mut s.sub("shortcut"), c_in, c_out, 1, stride))
            .transpose()?;
        Ok(Self {
            a: ConvNorm::new(&mut s.sub("a"), c_in, c_out, 3, stride)?,
            b: ConvNorm::new(&mut s.sub("b"), c_out, c_out, 3, 1)?,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.b.forward(&self.a.forward(x)?.relu()?)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

/// Global context attention split into independent aspects: each aspect
/// pools its channel group with its own spatial softmax, and the pooled
/// context is transformed and added back at every position.
struct GlobalContext {
    key: Conv2d,
    aspects: usize,
    down: Linear,
    norm: LayerNorm,
    up: Linear,
}

impl GlobalContext {
    fn new(s: &mut Scope, channels: usize, aspects: usize) -> Result<Self> {
        let hidden = (channels / 4).max(1);
        Ok(Self {
            key: Conv2d::new(&mut s.sub("key"), channels, aspects, 1, 1, true)?,
            aspects,
            down: Linear::new(&mut s.sub("down"), channels, hidden)?,
            norm: LayerNorm::new(&mut s.sub("norm"), hidden)?,
            up: Linear::with_init(&mut s.sub("up"), hidden, channels, Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let a = self.aspects;
        let weights =
            candle_nn::ops::softmax(&self.key.forward(x)?.reshape((b, a, 1, h * w))?, D::Minus1)?;
        let values = x.reshape((b, a, c / a, h * w))?;
        // (b, a, c/a, hw) · (b, a, hw, 1) -> (b, a, c/a, 1)
        let context = values
            .matmul(&weights.transpose(2, 3)?.contiguous()?)?
            .reshape((b, c))?;
        let delta = self
            .up
            .forward(&self.norm.forward(&self.down.forward(&context)?)?.relu()?)?;
        Ok(x.broadcast_add(&delta.reshape((b, c, 1, 1))?)?)
    }
}

/// Non-overlapping 4×4 patch projection (a stride-4 convolution with a 4×4
/// kernel), computed with a reshape and one matmul.
struct PatchStem {
    proj: Linear,
    norm: GroupNorm,
}

const PATCH: usize = 4;

impl PatchStem {
    fn new(s: &mut Scope, c_out: usize) -> Result<Self> {
        let fan_in = 3 * PATCH * PATCH;
        Ok(Self {
            proj: Linear::with_init(&mut s.sub("proj"), fan_in, c_out, Init::kaiming(fan_in))?,
            norm: GroupNorm::new(&mut s.sub("norm"), groups_for(c_out), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (hp, wp) = (h / PATCH, w / PATCH);
        let patches = x
            .reshape((b, c, hp, PATCH, wp, PATCH))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, hp * wp, c * PATCH * PATCH))?;
        let y = self.proj.forward(&patches)?;
        let c_out = y.dim(2)?;
        let y = y
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, c_out, hp, wp))?;
        Ok(self.norm.forward(&y)?.relu()?)
    }
}

pub struct Encoder {
    stem: PatchStem,
    stages: Vec<ResBlock>,
    context: Option<GlobalContext>,
    proj: Conv2d,
}

impl Encoder {
    /// `channels` lists the widths of the stride-4 stem and the three
    /// residual stages (strides 2, 2 and 1).
    pub fn new(s: &mut Scope, channels: [usize; 4], d: usize, aspects: usize) -> Result<Self> {
        let stem = PatchStem::new(&mut s.sub("stem"), channels[0])?;
        let stages = (1..4)
            .map(|i| {
                let stride = if i < 3 { 2 } else { 1 };
                ResBlock::new(
                    &mut s.sub(&format!("stage{i}")),
                    channels[i - 1],
                    channels[i],
                    stride,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let context = (aspects > 0)
            .then(|| GlobalContext::new(&mut s.sub("context"), channels[3], aspects))
            .transpose()?;
        Ok(Self {
            stem,
            stages,
            context,
            proj: Conv2d::new(&mut s.sub("proj"), channels[3], d, 1, 1, true)?,
        })
    }

    /// `(B, 3, S, S)` to `(B, d, S/16, S/16)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.stem.forward(x)?;
        for stage in &self.stages {
            y = stage.forward(&y)?;
        }
        if let Some(c) = &self.context {
            y = c.forward(&y)?;
        }
        self.proj.forward(&y)
    }
}
