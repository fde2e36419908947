use serde::{Deserialize, Serialize};

use super::metrics::{Prediction, PredictionSet, ScenePredictions};
use crate::dataworld::Scene;
use crate::error::{Error, Result};
use crate::nets::{pool_rois, BBox, FeatureMap, ModelBundle, Module};
use crate::tensor::Graph;

/// Which map the classifier reads RoI features from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    /// φ applied to the base map.
    Oa,
    /// The base map itself.
    Base,
}

/// The map a model with `source` reads for `scene`.
pub fn feature_map(bundle: &ModelBundle, source: FeatureSource, map: &FeatureMap) -> Result<FeatureMap> {
    match source {
        FeatureSource::Oa => bundle.oa.apply(map),
        FeatureSource::Base => Ok(map.clone()),
    }
}

/// Everything the metrics need from one pass of a model over test scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredScenes {
    /// Every ordered object pair under every relation.
    pub predictions: PredictionSet,
    /// Top-1 relation of each ground-truth pair, scene by scene.
    pub top1: Vec<usize>,
    /// Ground-truth relation of the same pairs.
    pub truth: Vec<usize>,
    /// Overlap ratio on the model's map for each ground-truth pair whose
    /// boxes carry activation.
    pub overlap: Vec<f64>,
}

struct SceneOutput {
    predictions: ScenePredictions,
    top1: Vec<usize>,
    truth: Vec<usize>,
    overlap: Vec<f64>,
}

fn score_scene(bundle: &ModelBundle, source: FeatureSource, scene: &Scene) -> Result<SceneOutput> {
    let n = scene.objects.len();
    let r = bundle.config.relations;
    let mut out = SceneOutput {
        predictions: ScenePredictions {
            scene_id: scene.id,
            items: Vec::new(),
        },
        top1: Vec::new(),
        truth: Vec::new(),
        overlap: Vec::new(),
    };
    if n < 2 {
        return Ok(out);
    }
    let map = feature_map(bundle, source, &scene.map)?;
    let mut g = Graph::new();
    let cls = bundle.classifier.bind(&mut g, false);
    let m = g.constant(map.tensor());
    let boxes: Vec<BBox> = scene.objects.iter().map(|o| o.bbox).collect();
    let rois = pool_rois(&mut g, m, &boxes, bundle.config.pool_size)?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let subj = g.select_rows(rois, &pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let obj = g.select_rows(rois, &pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let scores = cls.forward(&mut g, subj, obj)?;
    let scores = g.value(scores);
    for (row, &(i, j)) in pairs.iter().enumerate() {
        for (rel, &confidence) in scores.row(row).iter().enumerate() {
            out.predictions.items.push(Prediction {
                subject: boxes[i],
                object: boxes[j],
                relation: rel,
                confidence,
            });
        }
    }
    for t in &scene.triplets {
        let row = pairs
            .iter()
            .position(|&p| p == (t.subject, t.object))
            .ok_or_else(|| Error::Data(format!("scene {}: triplet {t:?} is not an object pair", scene.id)))?;
        let s = scores.row(row);
        let best = (0..r).fold(0, |b, k| if s[k] > s[b] { k } else { b });
        out.top1.push(best);
        out.truth.push(t.relation);
        match super::metrics::overlap_ratio(&map, &boxes[t.subject], &boxes[t.object]) {
            Ok(v) => out.overlap.push(v),
            Err(Error::Metric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Worker threads for evaluation: `STA_THREADS` when set to a positive
/// integer, else the available parallelism.
pub fn eval_threads() -> usize {
    std::env::var("STA_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Scores every scene with read-only access to `bundle`, spreading scenes
/// over `threads` workers. The result does not depend on `threads`.
pub fn score_scenes(
    bundle: &ModelBundle,
    source: FeatureSource,
    scenes: &[Scene],
    threads: usize,
) -> Result<ScoredScenes> {
    let threads = threads.clamp(1, scenes.len().max(1));
    let chunk = scenes.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<SceneOutput>>> = if threads == 1 {
        vec![scenes.iter().map(|s| score_scene(bundle, source, s)).collect()]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = scenes
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| score_scene(bundle, source, s)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };
    let mut out = ScoredScenes {
        predictions: PredictionSet {
            relations: bundle.config.relations,
            scenes: Vec::with_capacity(scenes.len()),
        },
        top1: Vec::new(),
        truth: Vec::new(),
        overlap: Vec::new(),
    };
    for part in parts {
        for s in part? {
            out.predictions.scenes.push(s.predictions);
            out.top1.extend(s.top1);
            out.truth.extend(s.truth);
            out.overlap.extend(s.overlap);
        }
    }
    Ok(out)
}
