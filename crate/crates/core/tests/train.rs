use dgcnn::data::{synth_split, SynthSpec};
use dgcnn::models::{Classifier, ClassifierConfig};
use dgcnn::parallel::set_strict_deterministic;
use dgcnn::train::{
    cosine_lr, miou_shapenet, random_subsample_indices, shape_iou, side_drop_indices, train, CosineSchedule, Side,
    TrainConfig, TrainOptions,
};
use dgcnn::FeatureMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_run(seed: u64) -> dgcnn::train::TrainOutcome {
    let spec = SynthSpec { classes: vec!["sphere".into(), "cube".into()], points: 48, ..SynthSpec::default() };
    let (tr, te) = synth_split(&spec, 12, 4, seed).unwrap();
    let cfg = ClassifierConfig { k: 6, edgeconv_widths: vec![8, 8, 8, 8], embed_width: 16, head_widths: vec![8], ..ClassifierConfig::desk(2) };
    let mut model = Classifier::new(cfg, seed).unwrap();
    let tc = TrainConfig { epochs: 10, batch_size: 6, eval_every: 10, ..TrainConfig::desk() };
    train(&mut model, &tr, Some(&te), &tc, seed, TrainOptions::default()).unwrap()
}

#[test]
fn training_loss_falls() {
    let out = tiny_run(4);
    let (first, last) = (out.history[0].loss, out.history[9].loss);
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn strict_runs_replay_exactly() {
    set_strict_deterministic(true);
    let (a, b) = (tiny_run(8), tiny_run(8));
    set_strict_deterministic(false);
    assert_eq!(a.history, b.history);
    assert_eq!(a.final_metrics, b.final_metrics);
}

#[test]
fn seven_twelfths_fixture() {
    // part 0: 1/2, part 1: 2/3, mean 7/12
    let iou = shape_iou(&[0, 0, 1, 1], &[0, 1, 1, 1], &[0, 1]).unwrap();
    assert!((iou - 7.0 / 12.0).abs() < 1e-15);
    // part 2 never appears on either side and counts as 1
    let iou = shape_iou(&[0, 1], &[0, 1], &[0, 1, 2]).unwrap();
    assert_eq!(iou, 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_schedule_never_rises(total in 1usize..400, lo in 0.0..0.05f64, span in 0.0..1.0f64) {
        let s = CosineSchedule { lr_max: lo + span, lr_min: lo, total_epochs: total };
        let lrs: Vec<f64> = (0..=total).map(|e| cosine_lr(e, &s).unwrap()).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(lrs[0], lo + span);
        prop_assert_eq!(lrs[total], lo);
    }

    #[test]
    fn perfect_segmentation_scores_one(labels in prop::collection::vec(prop::collection::vec(0usize..3, 1..20), 1..6)) {
        let cats = vec![0; labels.len()];
        let r = miou_shapenet(&labels, &labels, &cats, &[vec![0, 1, 2]]).unwrap();
        prop_assert_eq!(r.miou, Some(1.0));
    }

    #[test]
    fn subsampling_keeps_the_requested_share(n in 1usize..300, frac in 0.01..1.0f64, seed in any::<u64>()) {
        let keep = random_subsample_indices(n, frac, &mut ChaCha8Rng::seed_from_u64(seed));
        let want = (n as f64 * frac).round() as usize;
        match keep {
            Ok(k) => {
                prop_assert_eq!(k.len(), want);
                prop_assert!(k.windows(2).all(|w| w[0] < w[1]) && k.iter().all(|&i| i < n));
            }
            Err(_) => prop_assert!(want == 0),
        }
    }

    #[test]
    fn side_drop_keeps_the_far_side(v in prop::collection::vec(-1.0..1.0f64, 3 * 40), frac in 0.1..1.0f64) {
        let x = FeatureMatrix::new(40, 3, v).unwrap();
        let keep = side_drop_indices(&x, frac, Side::Top).unwrap();
        let cut = keep.iter().map(|&i| x.row(i)[2]).fold(f64::NEG_INFINITY, f64::max);
        let dropped = (0..40).filter(|i| !keep.contains(i));
        for i in dropped {
            prop_assert!(x.row(i)[2] >= cut);
        }
    }
}
