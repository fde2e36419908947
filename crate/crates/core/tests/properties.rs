use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sta::dataworld::Setting;
use sta::dataworld::{generate_world, WorldSpec};
use sta::eval::{
    alignment_recovery, overlap_ratio, per_relation_accuracy, recall_at_k, AlignmentScore, BiasPoint, MetricsReport,
    Prediction, PredictionSet, RunMeta, ScenePredictions, Truth,
};
use sta::nets::{BBox, FeatureMap, ModelBundle, NetConfig, TransformKind};

fn random_set(seed: u64) -> (PredictionSet, Vec<Vec<Truth>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = rng.random_range(2..5);
    let mut scenes = Vec::new();
    let mut truths = Vec::new();
    for id in 0..rng.random_range(1..4) {
        let boxes: Vec<BBox> = (0..rng.random_range(2..5))
            .map(|i| BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0))
            .collect();
        let mut items = Vec::new();
        for s in &boxes {
            for o in &boxes {
                for relation in 0..relations {
                    items.push(Prediction {
                        subject: *s,
                        object: *o,
                        relation,
                        confidence: rng.random_range(0..4) as f64,
                    });
                }
            }
        }
        truths.push(
            (0..rng.random_range(1..4))
                .map(|_| {
                    let p = items[rng.random_range(0..items.len())];
                    Truth {
                        subject: p.subject,
                        object: p.object,
                        relation: p.relation,
                    }
                })
                .collect(),
        );
        scenes.push(ScenePredictions { scene_id: id, items });
    }
    (PredictionSet { relations, scenes }, truths)
}

fn map_of(seed: u64, h: usize, w: usize, c: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::new(h, w, c, (0..h * w * c).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn boxes() -> impl Strategy<Value = BBox> {
    (0.0..6.0f64, 0.0..6.0f64, 0.5..4.0f64, 0.5..4.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k(seed in any::<u64>(), k in 1usize..40, extra in 0usize..40) {
        let (preds, truths) = random_set(seed);
        let low = recall_at_k(&preds, &truths, k).unwrap();
        let high = recall_at_k(&preds, &truths, k + extra).unwrap();
        prop_assert!((0.0..=1.0).contains(&low));
        prop_assert!(low <= high);
        prop_assert_eq!(recall_at_k(&preds, &truths, 1000).unwrap(), 1.0);
    }

    #[test]
    fn overlap_ignores_scale_and_order(seed in any::<u64>(), s in boxes(), o in boxes(), c in 0.01..50.0f64) {
        let map = map_of(seed, 10, 10, 3);
        let scaled = FeatureMap::new(10, 10, 3, map.values().iter().map(|v| v * c).collect()).unwrap();
        let base = overlap_ratio(&map, &s, &o).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&base));
        prop_assert!((overlap_ratio(&scaled, &s, &o).unwrap() - base).abs() <= 1e-9);
        prop_assert!((overlap_ratio(&map, &o, &s).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn alignment_ignores_relation_labels_and_triplet_order(seed in 0u64..1000) {
        let mut spec = WorldSpec::desk(seed);
        spec.train_scenes = 1;
        spec.test_scenes = 6;
        let world = generate_world(&spec).unwrap();
        let bundle = ModelBundle::init(&NetConfig { pool_size: 2, disc_hidden: 8, mlp_hidden: 8, ..NetConfig::default() }, seed).unwrap();
        let relabelled: Vec<_> = world.test.iter().cloned().map(|mut s| {
            for t in &mut s.triplets {
                t.relation = (t.relation + 3) % spec.relations;
            }
            s.triplets.reverse();
            s
        }).collect();
        match (alignment_recovery(&bundle, &world.test), alignment_recovery(&bundle, &relabelled)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a, b);
                prop_assert!((0.0..=1.0).contains(&a.rate));
                prop_assert!(a.baseline > 0.0 && a.baseline <= 1.0);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn report_json_round_trips(
        r50 in 0.0..1.0f64,
        r100 in 0.0..1.0f64,
        acc in proptest::collection::btree_map(0usize..8, 0.0..1.0f64, 0..8),
        rate in 0.0..1.0f64,
        wall in 0.0..1e4f64,
        seed in any::<u64>(),
        with_alignment in any::<bool>(),
    ) {
        let report = MetricsReport {
            setting: Setting::ZeroShot,
            variant: Some("sta".into()),
            recall_at_50: r50,
            recall_at_100: r100,
            per_relation_accuracy: acc.clone(),
            overlap_ratio: rate / 3.0,
            alignment: with_alignment.then_some(AlignmentScore { rate, baseline: 0.1 + rate / 7.0, subjects: 9 }),
            bias_curve: acc.iter().map(|(&relation, &a)| BiasPoint { relation, bias: a / 3.0, accuracy: Some(a) }).collect(),
            meta: RunMeta { seed, config_hash: "abc".into(), wall_time_secs: wall },
        };
        let text = report.to_json().unwrap();
        let back = MetricsReport::from_json(&text).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}

/// On worlds whose maps carry nothing but noise, a random bundle picks
/// partners at chance.
#[test]
fn alignment_is_at_chance_on_noise_worlds() {
    let (mut hits, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let net = NetConfig {
        pool_size: 2,
        transform: TransformKind::Plain,
        disc_hidden: 8,
        mlp_hidden: 8,
        ..NetConfig::default()
    };
    for seed in 0..100 {
        let mut spec = WorldSpec::desk(seed);
        spec.train_scenes = 1;
        spec.test_scenes = 10;
        spec.render.category_strength = 0.0;
        spec.render.relation_strength = 0.0;
        spec.render.instance_jitter = 0.0;
        spec.render.box_min = 8;
        spec.render.box_max = 8;
        spec.noise = 1.0;
        let world = generate_world(&spec).unwrap();
        let Ok(score) = alignment_recovery(&ModelBundle::init(&net, 1000 + seed).unwrap(), &world.test) else {
            continue;
        };
        let n = score.subjects as f64;
        hits += score.rate * n;
        expected += score.baseline * n;
        variance += n * score.baseline * (1.0 - score.baseline);
    }
    let z = (hits - expected) / variance.sqrt();
    assert!(z.abs() < 4.0, "hits {hits} vs chance {expected:.1} (z = {z:.2})");
}

#[test]
fn uniform_random_predictor_scores_one_over_r_per_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth: Vec<usize> = (0..80_000).map(|_| rng.random_range(0..8)).collect();
    let predicted: Vec<usize> = (0..truth.len()).map(|_| rng.random_range(0..8)).collect();
    let acc: BTreeMap<usize, f64> = per_relation_accuracy(&predicted, &truth).unwrap();
    assert_eq!(acc.len(), 8);
    for (r, a) in acc {
        assert!((a - 0.125).abs() < 0.01, "relation {r}: {a}");
    }
}
