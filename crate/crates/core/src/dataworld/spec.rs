use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `(subject category, relation, object category)` combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Composition {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

/// Where the subject box sits relative to the object box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Above,
    Below,
    Left,
    Right,
    /// Subject box inside the object box.
    Inside,
    /// Object box inside the subject box.
    Contains,
}

impl Layout {
    pub const ALL: [Layout; 6] = [
        Layout::Above,
        Layout::Below,
        Layout::Left,
        Layout::Right,
        Layout::Inside,
        Layout::Contains,
    ];
}

/// How objects and relations are written into the base map.
///
/// Rendering happens in a latent channel space: the first
/// `category_channels` latent channels carry object-category signatures, the
/// rest carry relation signatures. With `mix_channels` a fixed random
/// rotation (drawn from the world seed) maps latent channels to the stored
/// ones, so both kinds of signal share every stored channel. Where boxes
/// overlap, the smaller box occludes the larger one's category signature;
/// relation signatures add on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRules {
    pub category_channels: usize,
    pub category_strength: f64,
    /// Std of the per-instance perturbation of category signatures.
    pub instance_jitter: f64,
    pub relation_strength: f64,
    pub mix_channels: bool,
    /// Box side lengths, in cells.
    pub box_min: usize,
    pub box_max: usize,
    /// One layout per relation.
    pub layouts: Vec<Layout>,
    /// Probability that a test triplet draws a held-out composition.
    pub holdout_rate: f64,
    /// Within a relation, the k-th composition is drawn with weight
    /// `(k + 1)^-tail_exponent`.
    pub tail_exponent: f64,
}

/// Everything that determines a synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub categories: usize,
    pub relations: usize,
    pub compositions: Vec<Composition>,
    /// Compositions that only ever appear in test scenes.
    pub holdout: Vec<Composition>,
    pub objects_min: usize,
    pub objects_max: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub render: RenderRules,
    /// Std of per-cell Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl WorldSpec {
    /// The default desk-scale world: 32×32×8 maps, 12 categories, 8
    /// relations, 3 to 6 objects per scene, 200 train and 50 test scenes, 4
    /// held-out compositions.
    ///
    /// Categories `0..6` act as subjects and `6..12` as objects in every
    /// composition; each relation gets 4 category pairs.
    pub fn desk(seed: u64) -> Self {
        let (categories, relations, per_relation, holdout_count) = (12, 8, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0fc0_3105);
        let half = categories / 2;
        let pairs: Vec<(usize, usize)> = (0..half)
            .flat_map(|s| (half..categories).map(move |o| (s, o)))
            .collect();
        let mut compositions = Vec::new();
        for relation in 0..relations {
            for &(subject, object) in pairs.choose_multiple(&mut rng, per_relation) {
                compositions.push(Composition {
                    subject,
                    relation,
                    object,
                });
            }
        }
        let mut rels: Vec<usize> = (0..relations).collect();
        rels.shuffle(&mut rng);
        let holdout = rels[..holdout_count]
            .iter()
            .map(|&r| {
                // The last (rarest) composition of the relation.
                *compositions.iter().rev().find(|c| c.relation == r).unwrap()
            })
            .collect();
        WorldSpec {
            height: 32,
            width: 32,
            channels: 8,
            categories,
            relations,
            compositions,
            holdout,
            objects_min: 3,
            objects_max: 6,
            train_scenes: 200,
            test_scenes: 50,
            render: RenderRules {
                category_channels: 3,
                category_strength: 2.0,
                instance_jitter: 0.5,
                relation_strength: 1.0,
                mix_channels: true,
                box_min: 6,
                box_max: 10,
                layouts: (0..relations).map(|r| Layout::ALL[r % Layout::ALL.len()]).collect(),
                holdout_rate: 0.3,
                tail_exponent: 1.0,
            },
            noise: 0.1,
            seed,
        }
    }

    pub fn relation_channels(&self) -> usize {
        self.channels - self.render.category_channels
    }

    /// Compositions available to training scenes.
    pub fn train_compositions(&self) -> Vec<Composition> {
        let held: BTreeSet<_> = self.holdout.iter().collect();
        self.compositions
            .iter()
            .filter(|c| !held.contains(c))
            .copied()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("categories", self.categories),
            ("objects_min", self.objects_min),
            ("render.box_min", self.render.box_min),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.relations < 2 {
            return Err(Error::config("relations", "must be at least 2"));
        }
        let r = &self.render;
        if r.category_channels == 0 || r.category_channels >= self.channels {
            return Err(Error::config(
                "render.category_channels",
                format!("must leave room for relations within {} channels", self.channels),
            ));
        }
        if self.objects_min < 2 || self.objects_max < self.objects_min {
            return Err(Error::config("objects_max", "need 2 <= objects_min <= objects_max"));
        }
        if r.box_max < r.box_min || r.box_max > self.height.min(self.width) {
            return Err(Error::config("render.box_max", "need box_min <= box_max <= map side"));
        }
        if r.layouts.len() != self.relations {
            return Err(Error::config(
                "render.layouts",
                format!("need one layout per relation ({})", self.relations),
            ));
        }
        if !(0.0..=1.0).contains(&r.holdout_rate) {
            return Err(Error::config("render.holdout_rate", "must lie in [0, 1]"));
        }
        let finite = [
            ("render.category_strength", r.category_strength),
            ("render.instance_jitter", r.instance_jitter),
            ("render.relation_strength", r.relation_strength),
            ("render.tail_exponent", r.tail_exponent),
            ("noise", self.noise),
        ];
        for (field, v) in finite {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        for c in &self.compositions {
            if c.subject >= self.categories || c.object >= self.categories || c.relation >= self.relations {
                return Err(Error::config("compositions", format!("{c:?} is out of range")));
            }
        }
        let table: BTreeSet<_> = self.compositions.iter().collect();
        for h in &self.holdout {
            if !table.contains(h) {
                return Err(Error::config(
                    "holdout",
                    format!("{h:?} is not in the composition table"),
                ));
            }
        }
        let open = self.train_compositions();
        for rel in 0..self.relations {
            let n = open.iter().filter(|c| c.relation == rel).collect::<BTreeSet<_>>().len();
            if n < 2 {
                return Err(Error::config(
                    "compositions",
                    format!("relation {rel} has {n} compositions outside the holdout, need 2"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_spec_is_valid() {
        for seed in 0..20 {
            let s = WorldSpec::desk(seed);
            s.validate().unwrap();
            assert_eq!(s.holdout.len(), 4);
            assert_eq!(s.compositions.len(), 32);
        }
    }

    #[test]
    fn holdout_outside_table_is_rejected() {
        let mut s = WorldSpec::desk(1);
        s.holdout.push(Composition {
            subject: 11,
            relation: 0,
            object: 0,
        });
        assert!(matches!(s.validate(), Err(Error::Config { field, .. }) if field == "holdout"));
    }

    #[test]
    fn relation_needs_two_open_compositions() {
        let mut s = WorldSpec::desk(1);
        let r0: Vec<Composition> = s.compositions.iter().filter(|c| c.relation == 0).copied().collect();
        s.holdout = r0[..3].to_vec();
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let s = WorldSpec::desk(3);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<WorldSpec>(&text).unwrap(), s);
    }
}
