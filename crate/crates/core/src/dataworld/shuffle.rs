use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::nets::BBox;

/// One RoI of a shuffled domain. Carries nothing that identifies a partner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainRecord {
    pub scene_id: u64,
    pub bbox: BBox,
}

/// Subject RoIs (`a`) and object RoIs (`b`) with pairings discarded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSets {
    pub a: Vec<DomainRecord>,
    pub b: Vec<DomainRecord>,
}

/// The two domains restricted to one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RoleSet {
    pub scene_id: u64,
    pub subjects: Vec<BBox>,
    pub objects: Vec<BBox>,
}

fn key(r: &DomainRecord) -> (u64, [u64; 4]) {
    let b = &r.bbox;
    (
        r.scene_id,
        [b.x0.to_bits(), b.y0.to_bits(), b.x1.to_bits(), b.y1.to_bits()],
    )
}

fn canonical_shuffle(mut records: Vec<DomainRecord>, rng: &mut ChaCha8Rng) -> Vec<DomainRecord> {
    // Sorting first makes the result depend only on the multiset of records,
    // not on the triplet order they were read in.
    records.sort_by_key(key);
    records.shuffle(rng);
    records
}

/// Every triplet contributes its subject box to `a` and its object box to
/// `b`; each domain is then put in a seeded random order.
pub fn shuffle_domains(scenes: &[Scene], seed: u64) -> DomainSets {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in scenes {
        for t in &s.triplets {
            a.push(DomainRecord {
                scene_id: s.id,
                bbox: s.objects[t.subject].bbox,
            });
            b.push(DomainRecord {
                scene_id: s.id,
                bbox: s.objects[t.object].bbox,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = canonical_shuffle(a, &mut rng);
    let b = canonical_shuffle(b, &mut rng);
    DomainSets { a, b }
}

impl DomainSets {
    /// Groups records by scene, in ascending scene id. Within a scene the
    /// domain order is kept.
    pub fn by_scene(&self) -> Vec<RoleSet> {
        let mut groups: BTreeMap<u64, RoleSet> = BTreeMap::new();
        fn group(groups: &mut BTreeMap<u64, RoleSet>, id: u64) -> &mut RoleSet {
            groups.entry(id).or_insert_with(|| RoleSet {
                scene_id: id,
                subjects: Vec::new(),
                objects: Vec::new(),
            })
        }
        for r in &self.a {
            group(&mut groups, r.scene_id).subjects.push(r.bbox);
        }
        for r in &self.b {
            group(&mut groups, r.scene_id).objects.push(r.bbox);
        }
        groups.into_values().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataworld::{generate_world, Triplet, WorldSpec};

    fn scenes() -> Vec<Scene> {
        let mut spec = WorldSpec::desk(2);
        spec.train_scenes = 12;
        spec.test_scenes = 4;
        generate_world(&spec).unwrap().train
    }

    fn sorted(mut v: Vec<DomainRecord>) -> Vec<DomainRecord> {
        v.sort_by_key(key);
        v
    }

    #[test]
    fn one_record_per_triplet_side() {
        let s = scenes();
        let d = shuffle_domains(&s[..1], 0);
        assert_eq!(d.a.len(), s[0].triplets.len());
        assert_eq!(d.b.len(), s[0].triplets.len());
    }

    #[test]
    fn seeds_permute_the_same_multiset() {
        let s = scenes();
        let x = shuffle_domains(&s, 1);
        let y = shuffle_domains(&s, 2);
        assert_ne!(x.a, y.a);
        assert_eq!(sorted(x.a), sorted(y.a));
        assert_eq!(sorted(x.b), sorted(y.b));
    }

    #[test]
    fn serialized_records_hold_no_partner() {
        let d = shuffle_domains(&scenes(), 3);
        let v = serde_json::to_value(&d).unwrap();
        let rec = v["a"][0].as_object().unwrap();
        let mut keys: Vec<&str> = rec.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["bbox", "scene_id"]);
    }

    #[test]
    fn relinking_triplets_does_not_change_output() {
        let s = scenes();
        let mut relinked = s.clone();
        for scene in &mut relinked {
            let objs: Vec<usize> = scene.triplets.iter().map(|t| t.object).collect();
            let n = objs.len();
            scene.triplets = scene
                .triplets
                .iter()
                .enumerate()
                .map(|(i, t)| Triplet {
                    object: objs[(i + 1) % n],
                    ..*t
                })
                .rev()
                .collect();
        }
        assert_eq!(shuffle_domains(&s, 4), shuffle_domains(&relinked, 4));
    }

    #[test]
    fn grouping_by_scene() {
        let s = scenes();
        let groups = shuffle_domains(&s, 5).by_scene();
        assert_eq!(groups.len(), s.len());
        for (g, scene) in groups.iter().zip(&s) {
            assert_eq!(g.scene_id, scene.id);
            assert_eq!(g.subjects.len(), scene.triplets.len());
            assert_eq!(g.objects.len(), scene.triplets.len());
        }
    }
}
