mod common;

use common::{nms_reference, nms_scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use y4k_core::infer::{nms, InferConfig};

#[test]
fn nms_equals_exhaustive_reference_on_100_scenes() {
    let cfg = InferConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for scene in 0..100 {
        let boxes = nms_scene(&mut rng, 200);
        let got = nms(&boxes, &cfg, None);
        let want = nms_reference(&boxes, cfg.iou_threshold, cfg.max_detections);
        assert_eq!(got, want, "scene {scene}");
    }
}

#[test]
fn max_detections_truncates_in_rank_order() {
    let cfg = InferConfig {
        max_detections: 7,
        ..InferConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let boxes = nms_scene(&mut rng, 200);
        let got = nms(&boxes, &cfg, None);
        assert_eq!(got, nms_reference(&boxes, cfg.iou_threshold, 7));
        assert!(got.len() <= 7);
    }
}

#[test]
fn input_order_does_not_matter() {
    let cfg = InferConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut boxes = nms_scene(&mut rng, 200);
    let a = nms(&boxes, &cfg, None);
    boxes.reverse();
    assert_eq!(a, nms(&boxes, &cfg, None));
}
