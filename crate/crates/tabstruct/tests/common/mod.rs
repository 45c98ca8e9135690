#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabstruct::core::datagen::GenConfig;
use tabstruct::model::{ModelConfig, TableModel};
use tabstruct::train::ExperimentConfig;

/// A model small enough for unit tests on 64 px images.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_side: 64,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        ffn_dim: 32,
        dropout: 0.1,
        max_html_len: 64,
        n_bins: 64,
        encoder_channels: [8, 8, 16, 16],
        context_aspects: 2,
        ..ModelConfig::desk()
    }
}

pub fn tiny_model(seed: u64) -> TableModel {
    TableModel::new(tiny_config(), seed, DType::F32, &Device::Cpu).unwrap()
}

/// Desk data at 160 px with a small model, a few steps per epoch.
pub fn tiny_experiment() -> ExperimentConfig {
    let mut e = ExperimentConfig::desk();
    e.data = GenConfig {
        rows: tabstruct::core::datagen::IntRange::new(2, 3),
        cols: tabstruct::core::datagen::IntRange::new(2, 3),
        ..GenConfig::desk()
    };
    e.model = ModelConfig {
        image_side: 160,
        max_html_len: 48,
        n_bins: 160,
        ..tiny_config()
    };
    e.train.batch_size = 2;
    e.train.epochs = 2;
    e.train.n_train = 4;
    e.optim.warmup_steps = 2;
    e
}

pub fn random_images(b: usize, side: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f32> = (0..b * 3 * side * side)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_vec(v, (b, 3, side, side), &Device::Cpu).unwrap()
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng, dtype: DType) -> Tensor {
    let n = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu)
        .unwrap()
        .to_dtype(dtype)
        .unwrap()
}

/// Decodes `n_cells` random cells spread over `n_images` random images, once
/// batched and once one cell at a time with a hand-written greedy loop.
/// Returns the largest logit difference between the two and the number of
/// cells whose integer boxes differ.
pub fn batched_vs_sequential(
    model: &TableModel,
    n_images: usize,
    n_cells: usize,
    seed: u64,
) -> (f32, usize) {
    use tabstruct::infer::batch_coord_decode;
    use tabstruct::nn::Ctx;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = model.config.image_side as usize;
    let d = model.config.d_model;
    let images = random_images(n_images, side, seed);
    let memory = model.memory(&model.encode(&images).unwrap()).unwrap();
    let mem = model.coord_memory(&memory).unwrap();
    let which: Vec<u32> = (0..n_cells)
        .map(|_| rng.random_range(0..n_images as u32))
        .collect();
    let idx = Tensor::new(which.as_slice(), &Device::Cpu).unwrap();
    let f_nc = random_tensor(&[n_cells, d], &mut rng, DType::F32);
    let batched = batch_coord_decode(model, &mem, &idx, &f_nc).unwrap();

    let mut worst = 0f32;
    let mut mismatches = 0;
    for (i, (qbox, _)) in batched.iter().enumerate() {
        let one = Tensor::new(&[which[i]], &Device::Cpu).unwrap();
        let f = f_nc.narrow(0, i, 1).unwrap();
        let mut coords: Vec<u32> = Vec::new();
        for t in 0..4 {
            let prev = Tensor::from_vec(coords.clone(), (1, t), &Device::Cpu).unwrap();
            let logits = model
                .coord_forward(&mem, &one, &f, &prev, &mut Ctx::eval())
                .unwrap();
            let row: Vec<f32> = logits.get(0).unwrap().get(t).unwrap().to_vec1().unwrap();
            // The same position in the batched pass, teacher-forced with
            // this cell's own prefix.
            let all_prev = Tensor::from_vec(
                batched
                    .iter()
                    .flat_map(|(q, _)| q.0[..t].to_vec())
                    .collect::<Vec<u32>>(),
                (n_cells, t),
                &Device::Cpu,
            )
            .unwrap();
            let all = model
                .coord_forward(&mem, &idx, &f_nc, &all_prev, &mut Ctx::eval())
                .unwrap();
            let brow: Vec<f32> = all.get(i).unwrap().get(t).unwrap().to_vec1().unwrap();
            if coords[..] == qbox.0[..t] {
                for (a, b) in row.iter().zip(&brow) {
                    worst = worst.max((a - b).abs());
                }
            }
            let best = row
                .iter()
                .enumerate()
                .fold(
                    (0, f32::NEG_INFINITY),
                    |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
                )
                .0;
            coords.push(best as u32);
        }
        if coords[..] != qbox.0[..] {
            mismatches += 1;
        }
    }
    (worst, mismatches)
}

/// Relative error `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖)` between the autograd
/// gradient of `f` at `x` (f64) and central finite differences.
pub fn finite_difference_error(f: &dyn Fn(&Tensor) -> Tensor, x: &Tensor, h: f64) -> f64 {
    let var = candle_core::Var::from_tensor(x).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
        None => vec![0.0; x.elem_count()],
    };
    let base: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
    let eval = |v: &[f64]| -> f64 {
        let t = Tensor::from_vec(v.to_vec(), x.dims(), &Device::Cpu).unwrap();
        f(&t).to_scalar::<f64>().unwrap()
    };
    let mut numeric = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + h;
        let up = eval(&probe);
        probe[i] = base[i] - h;
        let down = eval(&probe);
        probe[i] = base[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
