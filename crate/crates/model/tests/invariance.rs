use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use risurconv_core::rotation::random_rotation;
use risurconv_core::{PointCloud, RotationMode};
use risurconv_model::{synth_dataset, Classifier, ClassifierConfig, LayerSpec, SaFlags, ShapeClass, SynthOptions};

const LOGIT_TOL: f32 = 1e-4;

fn small_net() -> Classifier {
    let spec = |points, neighbors, channels| LayerSpec {
        points,
        neighbors,
        channels,
    };
    let config = ClassifierConfig {
        layers: vec![spec(64, 8, 8), spec(32, 8, 16), spec(16, 8, 32), spec(1, 15, 32)],
        encoder_heads: 4,
        fc_widths: vec![16],
        num_classes: 5,
        risp_variant: "standard-14".into(),
        surfaces: 2,
        sa_flags: SaFlags::ALL,
        attention_bias: true,
        attention_residual: false,
        reestimate_normals: false,
    };
    Classifier::new(config, 11).unwrap()
}

fn cloud(class: usize, seed: u64) -> PointCloud {
    let opts = SynthOptions {
        points: 128,
        noise_sigma: 0.01,
        seed,
    };
    synth_dataset(&[ShapeClass::ALL[class]], 1, &opts).remove(0)
}

fn max_diff(a: &[Vec<f32>], b: &[Vec<f32>]) -> f32 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn logits_are_rotation_invariant(class in 0usize..5, seed in any::<u64>(), rot in any::<u64>()) {
        let net = small_net();
        let c = cloud(class, seed);
        let r = random_rotation(RotationMode::So3, rot);
        let a = net.logits(std::slice::from_ref(&c)).unwrap();
        let b = net.logits(&[c.rotated(&r)]).unwrap();
        prop_assert!(max_diff(&a, &b) < LOGIT_TOL);
    }

    #[test]
    fn logits_ignore_storage_order(class in 0usize..5, seed in any::<u64>(), shuffle in any::<u64>()) {
        let net = small_net();
        let c = cloud(class, seed);
        let mut order: Vec<usize> = (0..c.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let a = net.logits(std::slice::from_ref(&c)).unwrap();
        let b = net.logits(&[c.select(&order)]).unwrap();
        prop_assert!(max_diff(&a, &b) < LOGIT_TOL);
    }
}

// Batch size changes the matrix-product summation order, nothing else.
#[test]
fn evaluation_logits_do_not_depend_on_batch_mates_beyond_rounding() {
    let net = small_net();
    let clouds: Vec<PointCloud> = (0..5).map(|i| cloud(i, 40 + i as u64)).collect();
    let together = net.logits(&clouds).unwrap();
    for (c, row) in clouds.iter().zip(&together) {
        let alone = net.logits(std::slice::from_ref(c)).unwrap();
        let d = max_diff(&alone, std::slice::from_ref(row));
        assert!(d < 1e-5, "{d}");
    }
}

#[test]
fn translation_leaves_logits_unchanged() {
    let net = small_net();
    let c = cloud(3, 9);
    let moved = c.translated(risurconv_core::Vec3::new(3.0, -7.0, 0.5));
    let d = max_diff(&net.logits(&[c]).unwrap(), &net.logits(&[moved]).unwrap());
    assert!(d < LOGIT_TOL, "{d}");
}
