mod support;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::random_grid;
use tabstruct_core::quant::{dequantize_coord, quantize_coord};
use tabstruct_core::tokens::{detokenize, tokenize, Vocab};

#[test]
fn tokenizer_roundtrip_on_10k_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let vocab = Vocab::new(5);
    for case in 0..10_000 {
        let grid = random_grid(&mut rng, 6, 5);
        let seq = tokenize(&grid, 5).unwrap();
        let ids = vocab.encode(&seq).unwrap();
        let back = vocab.decode(&ids);
        assert_eq!(back, seq, "case {case}");
        let decoded = detokenize(&back);
        assert!(!decoded.is_repaired(), "case {case}: {:?}", decoded.repairs);
        assert!(decoded.grid.same_structure(&grid), "case {case}");
        assert_eq!(
            seq.trigger_positions().len(),
            grid.non_empty_cells().count(),
            "case {case}"
        );
    }
}

#[test]
fn quantization_error_bound_over_100k_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100_000 {
        let side = [160.0, 608.0, 64.0, 97.0][rng.random_range(0..4)];
        let n_bins = rng.random_range(1..=1000);
        let x = rng.random_range(0.0..=side);
        let (q, clamped) = quantize_coord(x, side, n_bins);
        assert!(!clamped && q <= n_bins);
        let err = (dequantize_coord(q, side, n_bins) - x).abs();
        let bound = side / (2.0 * n_bins as f64);
        assert!(
            err <= bound * (1.0 + 1e-12),
            "x={x} side={side} bins={n_bins}"
        );
    }
}
