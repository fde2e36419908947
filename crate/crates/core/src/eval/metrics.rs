use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataworld::Scene;
use crate::error::{Error, Result};
use crate::nets::{pool_rois, BBox, FeatureMap, ModelBundle, Module};
use crate::tensor::Graph;

/// One scored `(subject box, object box, relation)` hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject: BBox,
    pub object: BBox,
    pub relation: usize,
    pub confidence: f64,
}

/// Predictions of one scene, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenePredictions {
    pub scene_id: u64,
    pub items: Vec<Prediction>,
}

/// Predictions for a list of scenes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub relations: usize,
    pub scenes: Vec<ScenePredictions>,
}

impl PredictionSet {
    /// Checks finite confidences and in-range relation ids.
    pub fn validate(&self) -> Result<()> {
        for s in &self.scenes {
            for p in &s.items {
                if !p.confidence.is_finite() {
                    return Err(Error::Metric(format!("scene {}: non-finite confidence", s.scene_id)));
                }
                if p.relation >= self.relations {
                    return Err(Error::Metric(format!(
                        "scene {}: relation {} outside 0..{}",
                        s.scene_id, p.relation, self.relations
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A ground-truth relationship as boxes and a relation id.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub subject: BBox,
    pub object: BBox,
    pub relation: usize,
}

impl Truth {
    fn matches(&self, p: &Prediction) -> bool {
        self.relation == p.relation && self.subject.same_as(&p.subject) && self.object.same_as(&p.object)
    }
}

/// Ground truths of each scene, as boxes.
pub fn truths_of(scenes: &[Scene]) -> Vec<Vec<Truth>> {
    scenes
        .iter()
        .map(|s| {
            s.triplets
                .iter()
                .map(|t| Truth {
                    subject: s.objects[t.subject].bbox,
                    object: s.objects[t.object].bbox,
                    relation: t.relation,
                })
                .collect()
        })
        .collect()
}

/// Indices of the `k` most confident predictions; equal confidences keep
/// insertion order.
pub fn top_k(items: &[Prediction], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].confidence.total_cmp(&items[a].confidence));
    order.truncate(k);
    order
}

/// Fraction of ground truths found among the top `k` predictions of their
/// scene. Scenes without truths are left out of the denominator.
///
/// ```
/// use sta::eval::{recall_at_k, Prediction, PredictionSet, ScenePredictions, Truth};
/// use sta::nets::BBox;
/// let (s, o) = (BBox::new(0.0, 0.0, 2.0, 2.0), BBox::new(1.0, 1.0, 3.0, 3.0));
/// let p = |relation, confidence| Prediction { subject: s, object: o, relation, confidence };
/// let preds = PredictionSet {
///     relations: 3,
///     scenes: vec![ScenePredictions { scene_id: 0, items: vec![p(0, 0.9), p(1, 0.5), p(2, 0.1)] }],
/// };
/// let truths = vec![vec![
///     Truth { subject: s, object: o, relation: 0 },
///     Truth { subject: s, object: o, relation: 2 },
/// ]];
/// assert_eq!(recall_at_k(&preds, &truths, 2).unwrap(), 0.5);
/// ```
pub fn recall_at_k(preds: &PredictionSet, truths: &[Vec<Truth>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Metric("recall needs K >= 1".into()));
    }
    if preds.scenes.len() != truths.len() {
        return Err(Error::Metric(format!(
            "{} scenes of predictions but {} of truths",
            preds.scenes.len(),
            truths.len()
        )));
    }
    preds.validate()?;
    let (mut hits, mut total) = (0usize, 0usize);
    for (scene, gt) in preds.scenes.iter().zip(truths) {
        if gt.is_empty() {
            continue;
        }
        let top: Vec<&Prediction> = top_k(&scene.items, k).into_iter().map(|i| &scene.items[i]).collect();
        total += gt.len();
        hits += gt.iter().filter(|t| top.iter().any(|p| t.matches(p))).count();
    }
    if total == 0 {
        return Err(Error::Metric("no scene has a ground-truth relationship".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Channel-mean absolute activation of every cell.
fn cell_mass(map: &FeatureMap) -> Vec<f64> {
    let c = map.channels() as f64;
    map.values()
        .chunks(map.channels())
        .map(|cell| cell.iter().map(|v| v.abs()).sum::<f64>() / c)
        .collect()
}

fn mass_in(mass: &[f64], width: usize, b: &BBox) -> f64 {
    let (x0, x1) = (b.x0.floor().max(0.0) as usize, (b.x1.ceil() as usize).min(width));
    let height = mass.len() / width.max(1);
    let (y0, y1) = (b.y0.floor().max(0.0) as usize, (b.y1.ceil() as usize).min(height));
    let mut total = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            total += mass[y * width + x] * b.cell_coverage(y, x);
        }
    }
    total
}

/// Share of the activation mass over the union of two boxes that lies in
/// their intersection. Cells partly covered by a box count in proportion
/// to the covered area.
///
/// ```
/// use sta::eval::overlap_ratio;
/// use sta::nets::{BBox, FeatureMap};
/// let map = FeatureMap::new(20, 20, 2, vec![1.0; 800]).unwrap();
/// let r = overlap_ratio(&map, &BBox::new(0.0, 0.0, 10.0, 10.0), &BBox::new(5.0, 0.0, 15.0, 10.0)).unwrap();
/// assert!((r - 1.0 / 3.0).abs() < 1e-12);
/// ```
pub fn overlap_ratio(map: &FeatureMap, subject: &BBox, object: &BBox) -> Result<f64> {
    for b in [subject, object] {
        b.validate(map.width(), map.height())
            .map_err(|e| Error::Metric(e.to_string()))?;
    }
    let mass = cell_mass(map);
    let w = map.width();
    let over = subject.intersection(object).map_or(0.0, |i| mass_in(&mass, w, &i));
    let joint = mass_in(&mass, w, subject) + mass_in(&mass, w, object) - over;
    if joint.is_nan() || joint <= 0.0 {
        return Err(Error::Metric("no activation mass over the two boxes".into()));
    }
    Ok((over / joint).clamp(0.0, 1.0))
}

/// Outcome of [`alignment_recovery`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    /// Fraction of subjects whose translated feature lands nearest a true
    /// partner.
    pub rate: f64,
    /// Expected rate of a uniformly random pick among the same candidates.
    pub baseline: f64,
    /// Subjects evaluated.
    pub subjects: usize,
}

/// Nearest-neighbour check of `F` on scenes with known pairings.
///
/// In each scene the candidates are the objects that are the object of
/// some triplet (the scene's share of domain B). Every subject is pooled
/// from the OA map, translated by `F` and matched to the closest (L2)
/// candidate other than itself, lowest index winning ties. Subjects with
/// fewer than two candidates are skipped.
pub fn alignment_recovery(bundle: &ModelBundle, scenes: &[Scene]) -> Result<AlignmentScore> {
    let (mut hits, mut subjects, mut baseline) = (0usize, 0usize, 0.0);
    for s in scenes {
        let targets: BTreeSet<usize> = s.triplets.iter().map(|t| t.object).collect();
        let heads: BTreeSet<usize> = s.triplets.iter().map(|t| t.subject).collect();
        let mut g = Graph::new();
        let mut pooled = None;
        for &i in &heads {
            let candidates: Vec<usize> = targets.iter().copied().filter(|&j| j != i).collect();
            if candidates.len() < 2 {
                continue;
            }
            let (rois, moved) = match pooled {
                Some(p) => p,
                None => {
                    let oa = bundle.oa.bind(&mut g, false);
                    let f = bundle.f.bind(&mut g, false);
                    let map = g.constant(s.map.tensor());
                    let oa_map = oa.forward(&mut g, map)?;
                    let boxes: Vec<BBox> = s.objects.iter().map(|o| o.bbox).collect();
                    let rois = pool_rois(&mut g, oa_map, &boxes, bundle.config.pool_size)?;
                    let moved = f.forward(&mut g, rois)?;
                    *pooled.insert((rois, moved))
                }
            };
            let (rois, moved) = (g.value(rois), g.value(moved));
            let partners: BTreeSet<usize> = s.triplets.iter().filter(|t| t.subject == i).map(|t| t.object).collect();
            let query = moved.row(i);
            let mut best: Option<(usize, f64)> = None;
            for &j in &candidates {
                let d: f64 = query.iter().zip(rois.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            let (nearest, _) = best.expect("at least two candidates");
            hits += usize::from(partners.contains(&nearest));
            baseline += partners.len() as f64 / candidates.len() as f64;
            subjects += 1;
        }
    }
    if subjects == 0 {
        return Err(Error::Metric("no subject has two or more candidate objects".into()));
    }
    Ok(AlignmentScore {
        rate: hits as f64 / subjects as f64,
        baseline: baseline / subjects as f64,
        subjects,
    })
}

/// Top-1 accuracy per relation. `predicted[i]` is the predicted relation of
/// the ground-truth pair whose relation is `truth[i]`; relations that never
/// occur are absent from the table.
pub fn per_relation_accuracy(predicted: &[usize], truth: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if predicted.len() != truth.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} ground-truth pairs",
            predicted.len(),
            truth.len()
        )));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &t) in predicted.iter().zip(truth) {
        let e = counts.entry(t).or_default();
        e.0 += usize::from(p == t);
        e.1 += 1;
    }
    Ok(counts.into_iter().map(|(r, (c, n))| (r, c as f64 / n as f64)).collect())
}

/// Sample count over distinct category configurations of one relation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationBias {
    pub relation: usize,
    pub samples: usize,
    pub configurations: usize,
    pub bias: f64,
}

/// `N_R / N_C` of every relation seen in `scenes`, ascending by bias (then
/// by relation id).
pub fn relation_bias(scenes: &[Scene]) -> Vec<RelationBias> {
    let mut per: BTreeMap<usize, (usize, BTreeSet<(usize, usize)>)> = BTreeMap::new();
    for s in scenes {
        for t in &s.triplets {
            let e = per.entry(t.relation).or_default();
            e.0 += 1;
            e.1.insert((s.objects[t.subject].category, s.objects[t.object].category));
        }
    }
    let mut out: Vec<RelationBias> = per
        .into_iter()
        .map(|(relation, (samples, configs))| RelationBias {
            relation,
            samples,
            configurations: configs.len(),
            bias: samples as f64 / configs.len() as f64,
        })
        .collect();
    out.sort_by(|a, b| a.bias.total_cmp(&b.bias).then(a.relation.cmp(&b.relation)));
    out
}
