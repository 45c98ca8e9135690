//! Minimal layers over candle tensors with deterministic, name-seeded
//! initialization.
//!
//! candle's CPU random initializers cannot be seeded, so every parameter is
//! drawn from a ChaCha stream keyed by `(seed, parameter name)`. Two models
//! built with the same seed share every parameter whose name they share,
//! regardless of construction order.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

impl Init {
    /// Glorot uniform for a `fan_out × fan_in` weight.
    pub fn xavier(fan_in: usize, fan_out: usize) -> Self {
        Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
    }

    /// He normal for ReLU layers.
    pub fn kaiming(fan_in: usize) -> Self {
        Init::Normal((2.0 / fan_in as f64).sqrt())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Named trainable parameters.
#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            seed,
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Creates the parameter `name`, or returns it if it already exists.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::Uniform(bound) => {
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| rng.sample(dist)).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn n_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn scope<'a>(&'a mut self, prefix: &str) -> Scope<'a> {
        Scope {
            store: self,
            prefix: prefix.to_string(),
        }
    }
}

/// Prefix-scoped view of a [`ParamStore`] used while building layers.
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: format!("{}.{name}", self.prefix),
            store: self.store,
        }
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = format!("{}.{name}", self.prefix);
        self.store.get(&full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

/// Training/eval switch plus the dropout random stream.
pub struct Ctx {
    pub train: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64, step: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(step);
        Self { train: true, rng }
    }

    /// Inverted dropout with a mask drawn from this context's stream.
    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    (1.0 / keep) as f32
                } else {
                    0.0
                }
            })
            .collect();
        let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: Tensor,
    b: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &mut Scope, d_in: usize, d_out: usize) -> Result<Self> {
        Self::with_init(s, d_in, d_out, Init::xavier(d_in, d_out))
    }

    pub fn with_init(s: &mut Scope, d_in: usize, d_out: usize, init: Init) -> Result<Self> {
        Ok(Self {
            w: s.get("weight", &[d_out, d_in], init)?,
            b: Some(s.get("bias", &[d_out], Init::Zeros)?),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / d_in;
        let y = x.reshape((rows, d_in))?.matmul(&self.w.t()?)?;
        let y = match &self.b {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.w.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(s: &mut Scope, n: usize, d: usize) -> Result<Self> {
        Ok(Self {
            table: s.get("weight", &[n, d], Init::Normal(1.0))?,
        })
    }

    /// Looks up `ids` (any shape, u32) and appends a trailing `d` axis.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut dims = ids.dims().to_vec();
        dims.push(self.table.dim(1)?);
        Ok(self
            .table
            .index_select(&ids.flatten_all()?, 0)?
            .reshape(dims)?)
    }
}

/// Layer normalization over the last axis, written with differentiable
/// primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(s: &mut Scope, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: s.get("gamma", &[d], Init::Ones)?,
            beta: s.get("beta", &[d], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma)?
            .broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(s: &mut Scope, groups: usize, channels: usize) -> Result<Self> {
        assert_eq!(channels % groups, 0, "groups must divide channels");
        Ok(Self {
            gamma: s.get("gamma", &[channels], Init::Ones)?,
            beta: s.get("beta", &[channels], Init::Zeros)?,
            groups,
            eps: 1e-5,
        })
    }

    /// `x` is `(B, C, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let g = x.reshape((b, self.groups, (c / self.groups) * h * w))?;
        let mean = g.mean_keepdim(D::Minus1)?;
        let centered = g.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((b, c, h, w))?;
        let gamma = self.gamma.reshape((1, c, 1, 1))?;
        let beta = self.beta.reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    w: Tensor,
    b: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        s: &mut Scope,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = s.get(
            "weight",
            &[c_out, c_in, kernel, kernel],
            Init::kaiming(c_in * kernel * kernel),
        )?;
        let b = bias
            .then(|| s.get("bias", &[c_out], Init::Zeros))
            .transpose()?;
        Ok(Self {
            w,
            b,
            stride,
            padding: kernel / 2,
        })
    }

    /// im2col followed by one matmul. candle's native convolution has a slow
    /// backward pass on CPU; slicing and matmul backpropagate cheaply.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (c_out, _, k, _) = self.w.dims4()?;
        let (s, p) = (self.stride, self.padding);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let cols = if k == 1 && s == 1 {
            x.reshape((b, c, h * w))?
        } else {
            // pad so that every strided window of length s·out fits
            let xp = x
                .pad_with_zeros(2, p, (k + s * ho).saturating_sub(h + p))?
                .pad_with_zeros(3, p, (k + s * wo).saturating_sub(w + p))?;
            let mut patches = Vec::with_capacity(k * k);
            for ky in 0..k {
                for kx in 0..k {
                    let mut patch = xp.narrow(2, ky, s * ho)?.narrow(3, kx, s * wo)?;
                    if s > 1 {
                        patch = patch
                            .reshape((b, c, ho, s, wo, s))?
                            .narrow(3, 0, 1)?
                            .narrow(5, 0, 1)?
                            .reshape((b, c, ho, wo))?;
                    }
                    patches.push(patch);
                }
            }
            Tensor::stack(&patches, 2)?.reshape((b, c * k * k, ho * wo))?
        };
        let cols = cols
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b * ho * wo, c * k * k))?;
        let y = cols
            .matmul(&self.w.reshape((c_out, c * k * k))?.t()?)?
            .reshape((b, ho * wo, c_out))?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, c_out, ho, wo))?;
        Ok(match &self.b {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?)?,
            None => y,
        })
    }
}

/// Standard 1D sinusoidal encoding, `(len, d)`.
pub fn sinusoid_1d(len: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0f32; len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            let a = pos as f64 * freq;
            data[pos * d + 2 * i] = a.sin() as f32;
            data[pos * d + 2 * i + 1] = a.cos() as f32;
        }
    }
    Ok(Tensor::from_vec(data, (len, d), device)?.to_dtype(dtype)?)
}

/// 2D sinusoidal encoding for an `h × w` grid flattened row-major, `(h·w, d)`:
/// the first half of the channels encodes the row, the second the column.
pub fn sinusoid_2d(h: usize, w: usize, d: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = d / 2;
    let rows = sinusoid_1d(h, half, DType::F32, device)?.to_vec2::<f32>()?;
    let cols = sinusoid_1d(w, d - half, DType::F32, device)?.to_vec2::<f32>()?;
    let mut data = Vec::with_capacity(h * w * d);
    for r in 0..h {
        for c in 0..w {
            data.extend_from_slice(&rows[r]);
            data.extend_from_slice(&cols[c]);
        }
    }
    Ok(Tensor::from_vec(data, (h * w, d), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_name_not_order() {
        let mut a = ParamStore::new(3, DType::F32, Device::Cpu);
        let mut b = ParamStore::new(3, DType::F32, Device::Cpu);
        let a1 = a.get("x", &[4], Init::Normal(1.0)).unwrap();
        a.get("y", &[4], Init::Normal(1.0)).unwrap();
        b.get("y", &[4], Init::Normal(1.0)).unwrap();
        let b1 = b.get("x", &[4], Init::Normal(1.0)).unwrap();
        assert_eq!(a1.to_vec1::<f32>().unwrap(), b1.to_vec1::<f32>().unwrap());
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut ps = ParamStore::new(0, DType::F64, Device::Cpu);
        let ln = LayerNorm::new(&mut ps.scope("ln"), 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 6.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn eval_dropout_is_identity() {
        let x = Tensor::ones((3, 3), DType::F32, &Device::Cpu).unwrap();
        let y = Ctx::eval().dropout(&x, 0.5).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn conv_matches_candle_conv2d() {
        let mut ps = ParamStore::new(1, DType::F64, Device::Cpu);
        for (k, stride) in [(3, 1), (3, 2), (1, 2), (1, 1)] {
            let conv = Conv2d::new(
                &mut ps.scope(&format!("c{k}{stride}")),
                3,
                5,
                k,
                stride,
                false,
            )
            .unwrap();
            let x = Tensor::randn(0f64, 1.0, (2, 3, 8, 10), &Device::Cpu).unwrap();
            let want = x.conv2d(&conv.w, k / 2, stride, 1, 1).unwrap();
            let got = conv.forward(&x).unwrap();
            assert_eq!(got.dims(), want.dims());
            let diff = (got - want)
                .unwrap()
                .abs()
                .unwrap()
                .max_all()
                .unwrap()
                .to_scalar::<f64>()
                .unwrap();
            assert!(diff < 1e-12, "k={k} s={stride}: {diff}");
        }
    }

    #[test]
    fn sinusoid_2d_shape() {
        let pe = sinusoid_2d(3, 4, 8, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(pe.dims(), &[12, 8]);
    }
}
