//! Synthetic relationship worlds: generation, the shuffle step, RoI
//! augmentation, experiment splits and the scene file format.

mod augment;
mod generate;
mod io;
mod shuffle;
mod spec;
mod splits;

pub use augment::{augment_rois, iou, jitter_box};
pub use generate::{generate_world, interaction_region, World};
pub use io::{
    read_scenes, read_scenes_from, read_world, write_scenes, write_scenes_to, write_world, SceneFile, SCENE_MAGIC,
    SCENE_VERSION, TEST_FILE, TRAIN_FILE,
};
pub use shuffle::{shuffle_domains, DomainRecord, DomainSets, RoleSet};
pub use spec::{Composition, Layout, RenderRules, WorldSpec};
pub use splits::{make_splits, Experiment, Setting, TrainSet, WeakScene, DETECTION_IOU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{BBox, FeatureMap};

/// A boxed object with its category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub bbox: BBox,
    pub category: usize,
}

/// `subject --relation--> object`, indices into the scene's object list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

pub(crate) fn composition_of(objects: &[Object], t: &Triplet) -> Composition {
    Composition {
        subject: objects[t.subject].category,
        relation: t.relation,
        object: objects[t.object].category,
    }
}

/// One synthetic image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub map: FeatureMap,
    pub objects: Vec<Object>,
    pub triplets: Vec<Triplet>,
}

impl Scene {
    /// Sorted, deduplicated relations occurring in the scene.
    pub fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.triplets.iter().map(|t| t.relation).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn composition(&self, t: &Triplet) -> Composition {
        composition_of(&self.objects, t)
    }

    /// Checks boxes against the map and triplet indices against the objects.
    pub fn validate(&self) -> Result<()> {
        for o in &self.objects {
            o.bbox
                .validate(self.map.width(), self.map.height())
                .map_err(|e| Error::Data(format!("scene {}: {e}", self.id)))?;
        }
        for t in &self.triplets {
            if t.subject >= self.objects.len() || t.object >= self.objects.len() {
                return Err(Error::Data(format!(
                    "scene {}: triplet {t:?} references a missing object",
                    self.id
                )));
            }
            if t.subject == t.object {
                return Err(Error::Data(format!(
                    "scene {}: triplet {t:?} relates an object to itself",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Exact bitwise equality, including feature values.
    pub fn bit_eq(&self, other: &Scene) -> bool {
        self.id == other.id
            && self.map.tensor().bit_eq(other.map.tensor())
            && self.triplets == other.triplets
            && self.objects.len() == other.objects.len()
            && self
                .objects
                .iter()
                .zip(&other.objects)
                .all(|(a, b)| a.category == b.category && a.bbox.same_as(&b.bbox))
    }
}
