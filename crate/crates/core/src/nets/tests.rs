use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{grad_check, Tensor};

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn small_config() -> NetConfig {
    NetConfig {
        channels: 3,
        oa_channels: 3,
        pool_size: 2,
        transform: TransformKind::Residual,
        disc_hidden: 5,
        disc_paired: false,
        mlp_hidden: 6,
        relations: 4,
    }
}

#[test]
fn oa_identity_on_non_negative_map() {
    let mut w = vec![0.0; 9];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let oa = OaLayer {
        proj: Linear {
            weight: Tensor::new(vec![3, 3], w).unwrap(),
            bias: Some(Tensor::zeros(vec![3])),
        },
    };
    let vals: Vec<f64> = (0..48).map(|i| i as f64 * 0.5).collect();
    let map = FeatureMap::new(4, 4, 3, vals).unwrap();
    assert_eq!(oa_forward(&map, &oa).unwrap(), map);
}

#[test]
fn oa_zero_layer_gives_zero_map() {
    let oa = OaLayer {
        proj: Linear::zeros(3, 3, true),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let map = FeatureMap::from_tensor(random_tensor(vec![4, 4, 3], &mut rng)).unwrap();
    let out = oa_forward(&map, &oa).unwrap();
    assert!(out.values().iter().all(|&v| v == 0.0));
}

#[test]
fn oa_channel_mismatch() {
    let oa = OaLayer {
        proj: Linear::zeros(4, 4, true),
    };
    let map = FeatureMap::zeros(2, 2, 3);
    assert!(matches!(oa_forward(&map, &oa), Err(crate::Error::Shape { .. })));
}

#[test]
fn oa_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let map = random_tensor(vec![4, 4, 3], &mut rng);
    let w = random_tensor(vec![3, 3], &mut rng);
    let b = random_tensor(vec![3], &mut rng);
    let r = grad_check(
        |g, v| {
            let oa = OaVars(LinearVars {
                weight: v[1],
                bias: Some(v[2]),
            });
            let y = oa.forward(g, v[0])?;
            let sq = g.square(y)?;
            g.mean(sq)
        },
        &[map, w, b],
        1e-6,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

#[test]
fn zero_residual_transform_is_exact_identity() {
    let t = Transform {
        kind: TransformKind::Residual,
        layers: (0..4).map(|_| Linear::zeros(6, 6, true)).collect(),
    };
    let x = RoiFeature(vec![0.1, -3.0, 7.25, 1e-9, 0.0, 42.0]);
    let y = transform_forward(&x, &t).unwrap();
    assert!(x.0.iter().zip(&y.0).all(|(a, b)| a.to_bits() == b.to_bits()));
    let zero = RoiFeature(vec![0.0; 6]);
    assert_eq!(transform_forward(&zero, &t).unwrap(), zero);
}

#[test]
fn transform_dimension_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Transform::init(TransformKind::Residual, 4, &mut rng);
    assert!(transform_forward(&RoiFeature(vec![0.0; 5]), &t).is_err());
}

#[test]
fn transform_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for kind in [TransformKind::Residual, TransformKind::Plain] {
        let mut t = Transform::init(kind, 4, &mut rng);
        // Non-zero residual tails so every weight carries gradient.
        for p in t.params_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x = random_tensor(vec![3, 4], &mut rng);
        let probe = random_tensor(vec![3, 4], &mut rng);
        let mut inputs = vec![x];
        inputs.extend(t.named_params().into_iter().map(|(_, p)| p.clone()));
        let r = grad_check(
            |g, v| {
                let bound = t.rebind(&v[1..]);
                let y = bound.forward(g, v[0])?;
                let dir = g.constant(&probe);
                let jvp = g.mul(y, dir)?;
                g.sum(jvp)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{kind:?}: {r:?}");
    }
}

#[test]
fn zero_discriminator_outputs_half() {
    let d = Discriminator {
        hidden: Linear::zeros(4, 3, true),
        out: Linear::zeros(3, 1, true),
        paired: false,
    };
    assert_eq!(
        discriminator_forward(&RoiFeature(vec![1.0, 2.0, 3.0, 4.0]), &d).unwrap(),
        0.5
    );
}

#[test]
fn discriminator_output_is_a_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = Discriminator::init(8, 16, false, &mut rng);
    for _ in 0..1000 {
        let x = RoiFeature((0..8).map(|_| rng.random_range(-5.0..5.0)).collect());
        let p = discriminator_forward(&x, &d).unwrap();
        assert!(p > 0.0 && p < 1.0, "{p}");
    }
}

#[test]
fn discriminator_rejects_wrong_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = Discriminator::init(8, 16, false, &mut rng);
    assert!(discriminator_forward(&RoiFeature(vec![0.0; 7]), &d).is_err());
}

#[test]
fn discriminator_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for paired in [false, true] {
        let d = Discriminator::init(5, 6, paired, &mut rng);
        let x = random_tensor(vec![3, 5], &mut rng);
        let r = grad_check(
            |g, v| {
                let bound = d.bind(g, false);
                let p = bound.forward(g, v[0])?;
                g.sum(p)
            },
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "paired={paired}: {r:?}");
    }
}

#[test]
fn zero_classifier_is_uniform() {
    for relations in [4, 70] {
        let c = RelationClassifier {
            hidden1: Linear::zeros(6, 5, true),
            hidden2: Linear::zeros(5, 5, true),
            relation_weights: Linear::zeros(5, relations, false),
        };
        let s = relation_scores(&RoiFeature(vec![1.0; 3]), &RoiFeature(vec![-2.0; 3]), &c).unwrap();
        assert_eq!(s.len(), relations);
        for v in s {
            assert!((v - 1.0 / relations as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn classifier_is_order_sensitive_and_normalized() {
    let bundle = ModelBundle::init(&small_config(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = small_config().feature_dim();
    let a = RoiFeature((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let b = RoiFeature((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
    let ab = relation_scores(&a, &b, &bundle.classifier).unwrap();
    let ba = relation_scores(&b, &a, &bundle.classifier).unwrap();
    assert!((ab.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_ne!(ab, ba);
    assert!(relation_scores(&a, &RoiFeature(vec![0.0; d + 1]), &bundle.classifier).is_err());
}

#[test]
fn init_is_deterministic() {
    let a = init_params(&small_config(), 42).unwrap();
    let b = init_params(&small_config(), 42).unwrap();
    let c = init_params(&small_config(), 43).unwrap();
    assert!(a.bit_eq(&b));
    assert!(!a.bit_eq(&c));
}

#[test]
fn fresh_bundle_transforms_are_identity() {
    let bundle = init_params(&NetConfig::default(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = NetConfig::default().feature_dim();
    for _ in 0..20 {
        let x = RoiFeature((0..d).map(|_| rng.random_range(-5.0..5.0)).collect());
        assert_eq!(transform_forward(&x, &bundle.f).unwrap(), x);
        assert_eq!(transform_forward(&x, &bundle.g).unwrap(), x);
        let p = discriminator_forward(&x, &bundle.d_a).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn inconsistent_config_is_rejected() {
    let mut cfg = small_config();
    cfg.pool_size = 0;
    assert!(matches!(init_params(&cfg, 0), Err(crate::Error::Config { .. })));
    cfg = small_config();
    cfg.relations = 1;
    assert!(init_params(&cfg, 0).is_err());
}
