use y4k_core::blocks::{
    Block, C2psaBlock, C3GhostBlock, C3k2Block, ConvBlock, GhostConvBlock, Module, ParamKind, SppfBlock,
};
use y4k_core::exec::Eval;
use y4k_core::tensor::{attention_weights, Shape, Tensor};
use y4k_core::weights::{init_params, is_buffer, BatchNormInit};
use y4k_core::Error;

fn weight_count(specs: &[y4k_core::blocks::ParamSpec]) -> usize {
    specs
        .iter()
        .filter(|s| matches!(s.kind, ParamKind::Weight { .. }))
        .map(|s| s.numel())
        .sum()
}

#[test]
fn hand_counted_parameters() {
    // 3·3·16·32 weights + 32 gamma + 32 beta
    assert_eq!(ConvBlock::new(16, 32, 3, 1).param_count(), 4672);
    // primary 16·16 + 2·16, cheap depthwise 25·16 + 2·16
    assert_eq!(GhostConvBlock::new(16, 32, 1, 1).unwrap().param_count(), 720);
    // one weight, one bias
    assert_eq!(ConvBlock::plain(1, 1, 1).param_count(), 2);
}

#[test]
fn hand_counted_flops() {
    let x = Shape::new(1, 16, 8, 8);
    // 2 · 16·32 · 64
    assert_eq!(ConvBlock::new(16, 32, 1, 1).flops(x).unwrap(), 65_536);
    // 2 · 16·16 · 64 + 2 · 25·16 · 64
    assert_eq!(GhostConvBlock::new(16, 32, 1, 1).unwrap().flops(x).unwrap(), 83_968);
}

#[test]
fn ghost_economy() {
    for c in [32usize, 64, 128, 256] {
        let ghost = weight_count(&GhostConvBlock::new(c, c, 1, 1).unwrap().param_specs(""));
        let dense = weight_count(&ConvBlock::new(c, c, 3, 1).param_specs(""));
        assert_eq!(ghost, c * c / 2 + 25 * c / 2);
        assert_eq!(dense, 9 * c * c);
        assert!(ghost < dense / 4, "c={c}: {ghost} vs {dense}");
    }
    assert_eq!(weight_count(&GhostConvBlock::new(64, 64, 1, 1).unwrap().param_specs("")), 2848);
    assert_eq!(weight_count(&ConvBlock::new(64, 64, 3, 1).param_specs("")), 36_864);
}

fn sample_blocks() -> Vec<(Block, usize)> {
    vec![
        (Block::Conv(ConvBlock::new(6, 8, 3, 2)), 6),
        (Block::GhostConv(GhostConvBlock::new(6, 8, 3, 1).unwrap()), 6),
        (Block::C3k2(C3k2Block::new(6, 8, 2, true).unwrap()), 6),
        (Block::C3Ghost(C3GhostBlock::new(6, 8, 1, true).unwrap()), 6),
        (Block::Sppf(SppfBlock::new(8, 6).unwrap()), 8),
        (Block::C2psa(C2psaBlock::new(8, 8, 1).unwrap()), 8),
    ]
}

/// Every learnable scalar is touched by a forward pass exactly as counted.
#[test]
fn forward_reads_match_param_count() {
    for (block, c) in sample_blocks() {
        let specs = block.param_specs("m");
        let weights = init_params::<f32>(&specs, 3, BatchNormInit::Identity).unwrap();
        let mut ev = Eval::new(&weights);
        let x = Tensor::full(Shape::new(1, c, 8, 8), 0.1f32);
        block.forward(&mut ev, "m", &[x]).unwrap();
        let read: usize = ev
            .reads()
            .iter()
            .filter(|n| !is_buffer(n))
            .map(|n| weights.get(n).unwrap().numel())
            .sum();
        assert_eq!(read, block.param_count(), "{}", block.kind());
        assert_eq!(ev.reads().len(), specs.len(), "{}", block.kind());
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let positions = 12;
    let key_dim = 4;
    let q: Vec<f64> = (0..positions * key_dim).map(|i| ((i * 37) % 17) as f64 / 3.0 - 2.5).collect();
    let k: Vec<f64> = (0..positions * key_dim).map(|i| ((i * 11) % 13) as f64 / 2.0 - 3.0).collect();
    let rows = attention_weights(&q, &k, key_dim, 1.0 / (key_dim as f64).sqrt());
    assert_eq!(rows.len(), positions);
    for row in rows {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn ghost_first_half_is_primary_output() {
    let ghost = GhostConvBlock::new(4, 6, 3, 1).unwrap();
    let weights = init_params::<f64>(&ghost.param_specs("g"), 9, BatchNormInit::Perturbed).unwrap();
    let x = Tensor::from_fn(Shape::new(1, 4, 7, 5), |_, c, y, x| (c as f64 - 1.5) * 0.3 + (y * x) as f64 * 0.01);
    let full = ghost.forward(&mut Eval::new(&weights), "g", &x).unwrap();
    let primary = ghost.primary.forward(&mut Eval::new(&weights), "g.primary", &x).unwrap();
    assert_eq!(full.shape(), Shape::new(1, 6, 7, 5));
    assert_eq!(&full.data()[..primary.len()], primary.data());
}

#[test]
fn zero_channel_input_is_rejected() {
    let conv = ConvBlock::new(4, 8, 3, 1);
    assert!(matches!(conv.out_shape(Shape::new(1, 0, 8, 8)), Err(Error::ChannelMismatch { .. })));
    assert!(GhostConvBlock::new(4, 0, 1, 1).is_err());
    assert!(C3k2Block::new(0, 8, 1, true).is_err());
}
