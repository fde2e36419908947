use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::jitter_box;
use super::generate::World;
use super::{composition_of, Object, Scene};
use crate::error::{Error, Result};
use crate::nets::FeatureMap;

/// Minimum IoU between a simulated detection and its ground-truth box.
pub const DETECTION_IOU: f64 = 0.5;

/// The four experimental settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    /// Ground-truth boxes and pair annotations.
    Supervised,
    /// As supervised, but test boxes are jittered detections.
    Detected,
    /// Training sees image-level relation labels only.
    Weak,
    /// Test truths restricted to held-out compositions.
    ZeroShot,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Supervised, Setting::Detected, Setting::Weak, Setting::ZeroShot];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Supervised => "supervised",
            Setting::Detected => "detected",
            Setting::Weak => "weak",
            Setting::ZeroShot => "zero-shot",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("setting", format!("unknown setting `{s}`")))
    }
}

/// A training scene with pair annotations projected away.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakScene {
    pub id: u64,
    pub map: FeatureMap,
    pub objects: Vec<Object>,
    /// Sorted relations present somewhere in the image.
    pub labels: Vec<usize>,
}

impl WeakScene {
    pub fn project(scene: &Scene) -> Self {
        WeakScene {
            id: scene.id,
            map: scene.map.clone(),
            objects: scene.objects.clone(),
            labels: scene.labels(),
        }
    }
}

/// Training data in the form a setting allows.
#[derive(Clone, Debug)]
pub enum TrainSet {
    Pairs(Vec<Scene>),
    Weak(Vec<WeakScene>),
}

impl TrainSet {
    pub fn len(&self) -> usize {
        match self {
            TrainSet::Pairs(s) => s.len(),
            TrainSet::Weak(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Train and test data for one setting. Test scene triplets are the truths
/// the metrics count.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub setting: Setting,
    pub train: TrainSet,
    pub test: Vec<Scene>,
}

/// Builds the train/test views of `world` for `setting`. `seed` drives the
/// simulated detections.
pub fn make_splits(world: &World, setting: Setting, seed: u64) -> Result<Experiment> {
    let held: BTreeSet<_> = world.spec.holdout.iter().copied().collect();
    // Zero-shot soundness holds in every setting: no training triplet may
    // carry a held-out composition.
    let train: Vec<Scene> = world
        .train
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let objects = &s.objects;
            s.triplets.retain(|t| !held.contains(&composition_of(objects, t)));
            s
        })
        .collect();
    let (train, test) = match setting {
        Setting::Supervised => (TrainSet::Pairs(train), world.test.clone()),
        Setting::Weak => (
            TrainSet::Weak(
                train
                    .iter()
                    .filter(|s| !s.triplets.is_empty())
                    .map(WeakScene::project)
                    .collect(),
            ),
            world.test.clone(),
        ),
        Setting::Detected => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut test = world.test.clone();
            for s in &mut test {
                let bounds = (s.map.width(), s.map.height());
                for o in &mut s.objects {
                    o.bbox = jitter_box(&o.bbox, DETECTION_IOU, bounds, &mut rng)?;
                }
            }
            (TrainSet::Pairs(train), test)
        }
        Setting::ZeroShot => {
            if held.is_empty() {
                return Err(Error::config(
                    "holdout",
                    "zero-shot needs at least one held-out composition",
                ));
            }
            let test = world
                .test
                .iter()
                .filter_map(|s| {
                    let mut s = s.clone();
                    let objects = &s.objects;
                    s.triplets.retain(|t| held.contains(&composition_of(objects, t)));
                    (!s.triplets.is_empty()).then_some(s)
                })
                .collect();
            (TrainSet::Pairs(train), test)
        }
    };
    Ok(Experiment { setting, train, test })
}
