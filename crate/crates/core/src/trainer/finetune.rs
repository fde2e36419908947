use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{collect_grads, fresh_rng, mean, sample_up_to, select_params, ParamLayout};
use crate::dataworld::{Object, TrainSet};
use crate::error::{Error, Result};
use crate::nets::{pool_rois, BBox, FeatureMap, ModelBundle, Module};
use crate::objectives::{supervised_ce_loss, weak_loss};
use crate::tensor::{Graph, OptimizerState};

/// Which relationship loss drives fine-tuning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Cross-entropy on annotated pairs.
    #[default]
    Supervised,
    /// Image-level loss on average-pooled pair scores.
    Weak,
}

/// Settings of the fine-tuning stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Adam learning rate.
    pub lr: f64,
    pub epochs: usize,
    /// Cap on pairs per image.
    pub pairs_per_image: usize,
    pub mode: FinetuneMode,
    /// Keep φ fixed; only the classifier learns.
    pub freeze_oa: bool,
    /// Read RoI features from φ(map). When false the classifier reads the
    /// base map directly and φ plays no part.
    pub use_oa: bool,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-5,
            epochs: 50,
            pairs_per_image: 128,
            mode: FinetuneMode::Supervised,
            freeze_oa: false,
            use_oa: true,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.pairs_per_image == 0 {
            return Err(Error::config("pairs_per_image", "must be at least 1"));
        }
        Ok(())
    }

    fn trains_oa(&self) -> bool {
        self.use_oa && !self.freeze_oa
    }
}

/// Result of [`finetune`].
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub bundle: ModelBundle,
    /// Mean loss per epoch.
    pub history: Vec<f64>,
}

/// Resumable fine-tuning state.
#[derive(Clone, Debug)]
pub struct Finetuner {
    pub config: FinetuneConfig,
    pub bundle: ModelBundle,
    pub opt: OptimizerState,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub history: Vec<f64>,
}

/// One image as fine-tuning sees it.
struct Item<'a> {
    map: &'a FeatureMap,
    objects: &'a [Object],
    target: Target,
}

/// `(subject, object, relation)`.
type Pair = (usize, usize, usize);

enum Target {
    Pairs(Vec<Pair>),
    Labels(Vec<usize>),
}

fn items(data: &TrainSet, mode: FinetuneMode) -> Result<Vec<Item<'_>>> {
    let out: Vec<Item<'_>> = match (data, mode) {
        (TrainSet::Weak(_), FinetuneMode::Supervised) => {
            return Err(Error::config(
                "mode",
                "supervised fine-tuning needs pair annotations, got image labels only",
            ));
        }
        (TrainSet::Pairs(scenes), FinetuneMode::Supervised) => scenes
            .iter()
            .filter(|s| !s.triplets.is_empty())
            .map(|s| Item {
                map: &s.map,
                objects: &s.objects,
                target: Target::Pairs(s.triplets.iter().map(|t| (t.subject, t.object, t.relation)).collect()),
            })
            .collect(),
        (TrainSet::Pairs(scenes), FinetuneMode::Weak) => scenes
            .iter()
            .filter(|s| s.objects.len() >= 2)
            .map(|s| Item {
                map: &s.map,
                objects: &s.objects,
                target: Target::Labels(s.labels()),
            })
            .collect(),
        (TrainSet::Weak(scenes), FinetuneMode::Weak) => scenes
            .iter()
            .filter(|s| s.objects.len() >= 2)
            .map(|s| Item {
                map: &s.map,
                objects: &s.objects,
                target: Target::Labels(s.labels.clone()),
            })
            .collect(),
    };
    if out.is_empty() {
        return Err(Error::Data("no training image carries usable supervision".into()));
    }
    if mode == FinetuneMode::Weak
        && out
            .iter()
            .all(|i| matches!(&i.target, Target::Labels(l) if l.is_empty()))
    {
        return Err(Error::config(
            "mode",
            "weak fine-tuning needs image-level labels, every image has none",
        ));
    }
    Ok(out)
}

impl Finetuner {
    pub fn new(config: FinetuneConfig, bundle: ModelBundle) -> Result<Self> {
        config.validate()?;
        Ok(Finetuner {
            opt: OptimizerState::adam(config.lr),
            rng: fresh_rng(config.seed),
            epoch: 0,
            history: Vec::new(),
            config,
            bundle,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn run(&mut self, data: &TrainSet) -> Result<()> {
        while !self.is_done() {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    pub fn finish(self) -> FinetuneOutcome {
        FinetuneOutcome {
            bundle: self.bundle,
            history: self.history,
        }
    }

    pub fn run_epoch(&mut self, data: &TrainSet) -> Result<f64> {
        let mut work = items(data, self.config.mode)?;
        work.shuffle(&mut self.rng);
        let mut losses = Vec::with_capacity(work.len());
        for item in &work {
            losses.push(self.image_step(item)?);
        }
        let m = mean(&losses);
        self.history.push(m);
        self.epoch += 1;
        Ok(m)
    }

    fn image_step(&mut self, item: &Item<'_>) -> Result<f64> {
        let cap = self.config.pairs_per_image;
        let r = self.bundle.config.relations;
        let (pairs, labels): (Vec<Pair>, Option<Vec<bool>>) = match &item.target {
            Target::Pairs(p) => (sample_up_to(p, cap, &mut self.rng), None),
            Target::Labels(l) => {
                let n = item.objects.len();
                let all: Vec<(usize, usize, usize)> = (0..n)
                    .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, 0)))
                    .collect();
                let mut y = vec![false; r];
                for &rel in l {
                    if rel >= r {
                        return Err(Error::Data(format!("image label {rel} outside 0..{r}")));
                    }
                    y[rel] = true;
                }
                (sample_up_to(&all, cap, &mut self.rng), Some(y))
            }
        };
        let subj: Vec<BBox> = pairs.iter().map(|p| item.objects[p.0].bbox).collect();
        let obj: Vec<BBox> = pairs.iter().map(|p| item.objects[p.1].bbox).collect();

        let mut g = Graph::new();
        let trains_oa = self.config.trains_oa();
        let oa = self.bundle.oa.bind(&mut g, trains_oa);
        let cls = self.bundle.classifier.bind(&mut g, true);
        let map = g.constant(item.map.tensor());
        let source = if self.config.use_oa {
            oa.forward(&mut g, map)?
        } else {
            map
        };
        let p = self.bundle.config.pool_size;
        let xs = pool_rois(&mut g, source, &subj, p)?;
        let xo = pool_rois(&mut g, source, &obj, p)?;
        let scores = cls.forward(&mut g, xs, xo)?;
        let loss = match labels {
            None => supervised_ce_loss(&mut g, scores, &pairs.iter().map(|p| p.2).collect::<Vec<_>>())?,
            Some(y) => weak_loss(&mut g, scores, &y)?,
        };
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let layout = ParamLayout::of(&self.bundle);
        let (gs, ranges) = if trains_oa {
            (collect_grads(&[&oa, &cls], &grads), vec![layout.phi, layout.theta])
        } else {
            (collect_grads(&[&cls], &grads), vec![layout.theta])
        };
        let mut params = select_params(&mut self.bundle, &ranges);
        self.opt.step(&mut params, &gs)?;
        Ok(value)
    }
}

/// Trains the classifier (and φ unless frozen or bypassed) on `data`.
/// Each image is one Adam step over up to `pairs_per_image` pairs.
pub fn finetune(config: &FinetuneConfig, bundle: ModelBundle, data: &TrainSet) -> Result<FinetuneOutcome> {
    let mut f = Finetuner::new(config.clone(), bundle)?;
    f.run(data)?;
    Ok(f.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataworld::{generate_world, make_splits, Setting, WorldSpec};
    use crate::nets::NetConfig;

    fn data(setting: Setting) -> (TrainSet, ModelBundle) {
        let mut spec = WorldSpec::desk(2);
        spec.train_scenes = 6;
        spec.test_scenes = 4;
        let w = generate_world(&spec).unwrap();
        let cfg = NetConfig {
            pool_size: 2,
            disc_hidden: 8,
            mlp_hidden: 16,
            ..NetConfig::default()
        };
        (
            make_splits(&w, setting, 0).unwrap().train,
            ModelBundle::init(&cfg, 4).unwrap(),
        )
    }

    fn quick(mode: FinetuneMode) -> FinetuneConfig {
        FinetuneConfig {
            lr: 1e-3,
            epochs: 2,
            mode,
            ..FinetuneConfig::default()
        }
    }

    #[test]
    fn supervised_run_is_finite() {
        let (d, b) = data(Setting::Supervised);
        let out = finetune(&quick(FinetuneMode::Supervised), b.clone(), &d).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.history.iter().all(|v| v.is_finite()));
        assert_ne!(out.bundle.oa, b.oa);
        assert_eq!(out.bundle.f, b.f);
        assert_eq!(out.bundle.d_a, b.d_a);
    }

    #[test]
    fn frozen_oa_is_bit_identical() {
        let (d, b) = data(Setting::Supervised);
        let cfg = FinetuneConfig {
            freeze_oa: true,
            ..quick(FinetuneMode::Supervised)
        };
        let out = finetune(&cfg, b.clone(), &d).unwrap();
        assert!(out.bundle.oa.proj.weight.bit_eq(&b.oa.proj.weight));
        assert_ne!(out.bundle.classifier, b.classifier);
    }

    #[test]
    fn weak_mode_runs_on_weak_view() {
        let (d, b) = data(Setting::Weak);
        let out = finetune(&quick(FinetuneMode::Weak), b, &d).unwrap();
        assert!(out.history.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn supervised_mode_rejects_weak_view() {
        let (d, b) = data(Setting::Weak);
        let r = finetune(&quick(FinetuneMode::Supervised), b, &d);
        assert!(matches!(r, Err(Error::Config { field, .. }) if field == "mode"));
    }

    #[test]
    fn weak_mode_needs_some_labels() {
        let (d, b) = data(Setting::Weak);
        let TrainSet::Weak(mut scenes) = d else { panic!() };
        for s in &mut scenes {
            s.labels.clear();
        }
        let r = finetune(&quick(FinetuneMode::Weak), b, &TrainSet::Weak(scenes));
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn base_variant_reads_raw_map() {
        let (d, mut b) = data(Setting::Supervised);
        b.reinit_classifier(b.config.channels, 9);
        let cfg = FinetuneConfig {
            use_oa: false,
            ..quick(FinetuneMode::Supervised)
        };
        let out = finetune(&cfg, b.clone(), &d).unwrap();
        assert_eq!(out.bundle.oa, b.oa);
    }
}
