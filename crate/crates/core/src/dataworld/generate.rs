use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::spec::{Composition, Layout, WorldSpec};
use super::{Object, Scene, Triplet};
use crate::error::{Error, Result};
use crate::nets::{BBox, FeatureMap};

const SCENE_ATTEMPTS: usize = 200;

/// Generated train and test scenes together with the spec that made them.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

/// Fixed per-world rendering tables drawn from the world seed.
struct Palette {
    categories: Vec<Vec<f64>>,
    relations: Vec<Vec<f64>>,
    /// Row-major `C × C` map from latent to stored channels.
    mixing: Vec<f64>,
}

impl Palette {
    fn new(spec: &WorldSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let r = &spec.render;
        let cdim = r.category_channels;
        let rdim = spec.relation_channels();
        let categories = (0..spec.categories)
            .map(|_| {
                (0..cdim)
                    .map(|_| r.category_strength * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        // Two-hot relation codes when there are enough of them, otherwise
        // positive random codes.
        let mut two_hot: Vec<(usize, usize)> = (0..rdim).flat_map(|i| (i + 1..rdim).map(move |j| (i, j))).collect();
        two_hot.shuffle(&mut rng);
        let relations = (0..spec.relations)
            .map(|k| {
                let mut v = vec![0.0; rdim];
                if two_hot.len() >= spec.relations {
                    let (i, j) = two_hot[k];
                    v[i] = r.relation_strength;
                    v[j] = r.relation_strength;
                } else {
                    for x in &mut v {
                        *x = r.relation_strength * rng.random_range(0.25..1.0);
                    }
                }
                v
            })
            .collect();

        let c = spec.channels;
        let mixing = if r.mix_channels {
            random_rotation(c, &mut rng)
        } else {
            let mut m = vec![0.0; c * c];
            for i in 0..c {
                m[i * c + i] = 1.0;
            }
            m
        };
        Palette {
            categories,
            relations,
            mixing,
        }
    }
}

/// Orthonormal rows from Gram-Schmidt on a Gaussian matrix.
fn random_rotation(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(r) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.concat()
}

/// Where a relation between two boxes is rendered: their intersection, or
/// the gap between them when they are disjoint. `None` when the boxes only
/// touch.
pub fn interaction_region(a: &BBox, b: &BBox) -> Option<BBox> {
    if let Some(i) = a.intersection(b) {
        return Some(i);
    }
    // Along each axis take the shared span, or the gap when the spans are
    // disjoint.
    let span = |a0: f64, a1: f64, b0: f64, b1: f64| {
        let (lo, hi) = (a0.max(b0), a1.min(b1));
        if lo < hi {
            (lo, hi)
        } else {
            (hi, lo)
        }
    };
    let (x0, x1) = span(a.x0, a.x1, b.x0, b.x1);
    let (y0, y1) = span(a.y0, a.y1, b.y0, b.y1);
    (x0 < x1 && y0 < y1).then(|| BBox::new(x0, y0, x1, y1))
}

/// Cells whose centres fall inside `b`.
fn cells(b: &BBox, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let lo = |v: f64| (v - 0.5).ceil().max(0.0) as usize;
    let hi = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
    let (ys, ye) = (lo(b.y0), hi(b.y1, h));
    let (xs, xe) = (lo(b.x0), hi(b.x1, w));
    (ys..ye).flat_map(move |y| (xs..xe).map(move |x| (y, x)))
}

fn pick_composition(pool: &[Composition], relation: usize, tail: f64, rng: &mut impl Rng) -> Option<Composition> {
    let options: Vec<&Composition> = pool.iter().filter(|c| c.relation == relation).collect();
    if options.is_empty() {
        return None;
    }
    let weights: Vec<f64> = (0..options.len()).map(|k| ((k + 1) as f64).powf(-tail)).collect();
    let idx = WeightedIndex::new(&weights).ok()?.sample(rng);
    Some(*options[idx])
}

/// Places a subject/object pair with the given layout. Integer coordinates.
fn place_pair(layout: Layout, spec: &WorldSpec, rng: &mut impl Rng) -> Option<(BBox, BBox)> {
    let r = &spec.render;
    let (lo, hi) = (r.box_min, r.box_max);
    let mut side = || rng.random_range(lo..=hi) as i64;
    let (mut ws, mut hs, wo, ho) = (side(), side(), side(), side());
    let (wmap, hmap) = (spec.width as i64, spec.height as i64);
    let inner = |outer: i64, rng: &mut dyn rand::RngCore| {
        let small = ((lo as i64 + 1) / 2).max(1);
        let big = (outer - 2).max(small);
        rng.random_range(small..=big)
    };
    let inset = |outer0: i64, outer: i64, len: i64, rng: &mut dyn rand::RngCore| {
        if outer - len >= 2 {
            outer0 + rng.random_range(1..=outer - len - 1)
        } else {
            outer0 + rng.random_range(0..=(outer - len).max(0))
        }
    };
    // Overlap depth and lateral offset for the side-by-side layouts.
    let depth = |a: i64, b: i64, rng: &mut dyn rand::RngCore| {
        let m = a.min(b);
        rng.random_range((m / 4).max(1)..=(m / 2).max(1))
    };
    let offset = |len: i64, other: i64, rng: &mut dyn rand::RngCore| {
        rng.random_range(-(len / 3)..=(other - 2 * len / 3).max(-(len / 3)))
    };

    let big_w = if matches!(layout, Layout::Contains) { ws } else { wo };
    let big_h = if matches!(layout, Layout::Contains) { hs } else { ho };
    let ox = rng.random_range(0..=(wmap - big_w).max(0));
    let oy = rng.random_range(0..=(hmap - big_h).max(0));
    let (s, o) = match layout {
        Layout::Inside => {
            ws = inner(wo, rng);
            hs = inner(ho, rng);
            let sx = inset(ox, wo, ws, rng);
            let sy = inset(oy, ho, hs, rng);
            ((sx, sy, ws, hs), (ox, oy, wo, ho))
        }
        Layout::Contains => {
            let w2 = inner(ws, rng);
            let h2 = inner(hs, rng);
            let bx = inset(ox, ws, w2, rng);
            let by = inset(oy, hs, h2, rng);
            ((ox, oy, ws, hs), (bx, by, w2, h2))
        }
        Layout::Above | Layout::Below => {
            let d = depth(hs, ho, rng);
            let sx = ox + offset(ws, wo, rng);
            let sy = if layout == Layout::Above {
                oy + d - hs
            } else {
                oy + ho - d
            };
            ((sx, sy, ws, hs), (ox, oy, wo, ho))
        }
        Layout::Left | Layout::Right => {
            let d = depth(ws, wo, rng);
            let sy = oy + offset(hs, ho, rng);
            let sx = if layout == Layout::Left {
                ox + d - ws
            } else {
                ox + wo - d
            };
            ((sx, sy, ws, hs), (ox, oy, wo, ho))
        }
    };
    let to_box = |(x, y, w, h): (i64, i64, i64, i64)| {
        (x >= 0 && y >= 0 && x + w <= wmap && y + h <= hmap && w > 0 && h > 0)
            .then(|| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
    };
    let (s, o) = (to_box(s)?, to_box(o)?);
    (s.intersection(&o).is_some() && !s.same_as(&o)).then_some((s, o))
}

fn place_single(spec: &WorldSpec, rng: &mut impl Rng) -> BBox {
    let r = &spec.render;
    let w = rng.random_range(r.box_min..=r.box_max);
    let h = rng.random_range(r.box_min..=r.box_max);
    let x = rng.random_range(0..=spec.width - w);
    let y = rng.random_range(0..=spec.height - h);
    BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)
}

fn disjoint(b: &BBox, placed: &[BBox]) -> bool {
    placed.iter().all(|p| b.intersection(p).is_none())
}

/// Objects and triplets of one scene, before rendering.
fn layout_scene(
    spec: &WorldSpec,
    pool: &[Composition],
    forced: Option<Composition>,
    holdout_rate: f64,
    rng: &mut impl Rng,
) -> Option<(Vec<Object>, Vec<Triplet>)> {
    let n = rng.random_range(spec.objects_min..=spec.objects_max);
    let t = rng.random_range(1..=n / 2);
    let mut objects = Vec::with_capacity(n);
    let mut triplets = Vec::with_capacity(t);
    let mut placed: Vec<BBox> = Vec::with_capacity(n);
    for k in 0..t {
        let comp = match (k, forced) {
            (0, Some(c)) => c,
            _ if holdout_rate > 0.0 && rng.random_bool(holdout_rate) => *spec.holdout.choose(rng)?,
            _ => {
                let rel = rng.random_range(0..spec.relations);
                pick_composition(pool, rel, spec.render.tail_exponent, rng)?
            }
        };
        let (s, o) = place_pair(spec.render.layouts[comp.relation], spec, rng)?;
        if !disjoint(&s, &placed) || !disjoint(&o, &placed) {
            return None;
        }
        placed.extend([s, o]);
        triplets.push(Triplet {
            subject: objects.len(),
            relation: comp.relation,
            object: objects.len() + 1,
        });
        objects.push(Object {
            bbox: s,
            category: comp.subject,
        });
        objects.push(Object {
            bbox: o,
            category: comp.object,
        });
    }
    while objects.len() < n {
        let b = place_single(spec, rng);
        if !disjoint(&b, &placed) {
            return None;
        }
        placed.push(b);
        objects.push(Object {
            bbox: b,
            category: rng.random_range(0..spec.categories),
        });
    }
    // Object order carries no pairing information.
    let mut perm: Vec<usize> = (0..objects.len()).collect();
    perm.shuffle(rng);
    let mut shuffled = vec![objects[0]; objects.len()];
    for (old, &new) in perm.iter().enumerate() {
        shuffled[new] = objects[old];
    }
    for t in &mut triplets {
        t.subject = perm[t.subject];
        t.object = perm[t.object];
    }
    Some((shuffled, triplets))
}

fn render(
    spec: &WorldSpec,
    palette: &Palette,
    objects: &[Object],
    triplets: &[Triplet],
    rng: &mut impl Rng,
) -> Result<FeatureMap> {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let cdim = spec.render.category_channels;
    let mut latent = vec![0.0; h * w * c];
    let sigs: Vec<Vec<f64>> = objects
        .iter()
        .map(|o| {
            palette.categories[o.category]
                .iter()
                .map(|v| v + spec.render.instance_jitter * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    // Larger boxes first, so a smaller box occludes the larger one it overlaps.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| objects[b].bbox.area().total_cmp(&objects[a].bbox.area()));
    for i in order {
        for (y, x) in cells(&objects[i].bbox, h, w) {
            latent[(y * w + x) * c..(y * w + x) * c + cdim].copy_from_slice(&sigs[i]);
        }
    }
    for t in triplets {
        let (s, o) = (&objects[t.subject].bbox, &objects[t.object].bbox);
        if let Some(region) = interaction_region(s, o) {
            for (y, x) in cells(&region, h, w) {
                let cell = &mut latent[(y * w + x) * c + cdim..(y * w + x + 1) * c];
                for (v, s) in cell.iter_mut().zip(&palette.relations[t.relation]) {
                    *v += s;
                }
            }
        }
    }
    let mut stored = vec![0.0; h * w * c];
    for (src, dst) in latent.chunks_exact(c).zip(stored.chunks_exact_mut(c)) {
        for (i, d) in dst.iter_mut().enumerate() {
            let row = &palette.mixing[i * c..(i + 1) * c];
            *d = row.iter().zip(src).map(|(m, v)| m * v).sum::<f64>();
            if spec.noise > 0.0 {
                *d += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    FeatureMap::new(h, w, c, stored)
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

fn make_scene(
    spec: &WorldSpec,
    palette: &Palette,
    id: u64,
    pool: &[Composition],
    forced: Option<Composition>,
    holdout_rate: f64,
) -> Result<Scene> {
    let mut rng = scene_rng(spec.seed, id);
    for _ in 0..SCENE_ATTEMPTS {
        if let Some((objects, triplets)) = layout_scene(spec, pool, forced, holdout_rate, &mut rng) {
            let map = render(spec, palette, &objects, &triplets, &mut rng)?;
            let scene = Scene {
                id,
                map,
                objects,
                triplets,
            };
            scene.validate()?;
            return Ok(scene);
        }
    }
    Err(Error::Generation {
        scene: id,
        reason: format!("no valid placement in {SCENE_ATTEMPTS} attempts"),
    })
}

/// Generates the train and test scenes of `spec`. A pure function of the
/// spec: train scene `i` has id `i`, test scene `j` has id
/// `train_scenes + j`, and each scene draws from its own random stream.
///
/// Train scenes never contain a held-out composition. The first
/// `holdout.len()` test scenes each open with one held-out composition;
/// later test triplets draw one with probability `render.holdout_rate`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let palette = Palette::new(spec);
    let open = spec.train_compositions();
    let mut train = Vec::with_capacity(spec.train_scenes);
    for i in 0..spec.train_scenes {
        train.push(make_scene(spec, &palette, i as u64, &open, None, 0.0)?);
    }
    let mut test = Vec::with_capacity(spec.test_scenes);
    for j in 0..spec.test_scenes {
        let forced = spec.holdout.get(j).copied();
        let id = (spec.train_scenes + j) as u64;
        test.push(make_scene(spec, &palette, id, &open, forced, spec.render.holdout_rate)?);
    }
    Ok(World {
        spec: spec.clone(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small_spec(seed: u64) -> WorldSpec {
        let mut s = WorldSpec::desk(seed);
        s.train_scenes = 30;
        s.test_scenes = 20;
        s
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = random_rotation(5, &mut rng);
        for i in 0..5 {
            for j in 0..5 {
                let d: f64 = (0..5).map(|k| q[i * 5 + k] * q[j * 5 + k]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interaction_region_cases() {
        let a = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(
            interaction_region(&a, &BBox::new(2.0, 2.0, 6.0, 6.0)),
            Some(BBox::new(2.0, 2.0, 4.0, 4.0))
        );
        // Horizontal gap: the band between the boxes over their shared rows.
        assert_eq!(
            interaction_region(&a, &BBox::new(6.0, 1.0, 9.0, 3.0)),
            Some(BBox::new(4.0, 1.0, 6.0, 3.0))
        );
        // Diagonal gap.
        assert_eq!(
            interaction_region(&a, &BBox::new(5.0, 6.0, 8.0, 9.0)),
            Some(BBox::new(4.0, 4.0, 5.0, 6.0))
        );
        // Touching edges.
        assert_eq!(interaction_region(&a, &BBox::new(4.0, 0.0, 8.0, 4.0)), None);
    }

    #[test]
    fn cells_of_integer_box() {
        let got: Vec<_> = cells(&BBox::new(1.0, 2.0, 3.0, 4.0), 8, 8).collect();
        assert_eq!(got, vec![(2, 1), (2, 2), (3, 1), (3, 2)]);
    }

    #[test]
    fn scenes_are_well_formed() {
        let spec = small_spec(4);
        let w = generate_world(&spec).unwrap();
        assert_eq!(w.train.len(), 30);
        assert_eq!(w.test.len(), 20);
        for s in w.train.iter().chain(&w.test) {
            s.validate().unwrap();
            assert!((spec.objects_min..=spec.objects_max).contains(&s.objects.len()));
            assert!(!s.triplets.is_empty());
            for (i, a) in s.objects.iter().enumerate() {
                for b in &s.objects[i + 1..] {
                    assert!(!a.bbox.same_as(&b.bbox));
                }
            }
            for t in &s.triplets {
                let (a, b) = (&s.objects[t.subject].bbox, &s.objects[t.object].bbox);
                assert!(a.intersection(b).is_some());
            }
        }
    }

    #[test]
    fn holdout_only_in_test() {
        let spec = small_spec(5);
        let w = generate_world(&spec).unwrap();
        let held: BTreeSet<_> = spec.holdout.iter().copied().collect();
        for s in &w.train {
            for t in &s.triplets {
                assert!(!held.contains(&s.composition(t)));
            }
        }
        for h in &held {
            let n = w
                .test
                .iter()
                .flat_map(|s| s.triplets.iter().map(move |t| s.composition(t)))
                .filter(|c| c == h)
                .count();
            assert!(n >= 1);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(6);
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        assert!(a.train.iter().zip(&b.train).all(|(x, y)| x.bit_eq(y)));
        assert!(a.test.iter().zip(&b.test).all(|(x, y)| x.bit_eq(y)));
        let c = generate_world(&small_spec(7)).unwrap();
        assert!(!a.train[0].bit_eq(&c.train[0]));
    }

    #[test]
    fn noiseless_relation_signature_is_shared() {
        let mut spec = small_spec(8);
        spec.noise = 0.0;
        spec.render.instance_jitter = 0.0;
        let w = generate_world(&spec).unwrap();
        // Overlap cell values of every triplet, keyed by composition and the
        // category in front.
        let mut seen: std::collections::BTreeMap<(Composition, usize), Vec<f64>> = Default::default();
        let mut compared = 0;
        for s in &w.train {
            for t in &s.triplets {
                let (a, b) = (&s.objects[t.subject].bbox, &s.objects[t.object].bbox);
                let region = interaction_region(a, b).unwrap();
                let (y, x) = cells(&region, spec.height, spec.width).next().unwrap();
                let v = s.map.at(y, x).to_vec();
                let (sa, oa) = (a.area(), b.area());
                let front = if sa < oa || (sa == oa && t.subject > t.object) {
                    s.objects[t.subject].category
                } else {
                    s.objects[t.object].category
                };
                let key = (s.composition(t), front);
                match seen.get(&key) {
                    Some(prev) => {
                        assert_eq!(prev, &v);
                        compared += 1;
                    }
                    None => {
                        seen.insert(key, v);
                    }
                }
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn impossible_placement_names_the_scene() {
        let mut spec = small_spec(9);
        spec.height = 10;
        spec.width = 10;
        spec.objects_min = 6;
        match generate_world(&spec) {
            Err(Error::Generation { scene, .. }) => assert_eq!(scene, 0),
            other => panic!("{other:?}"),
        }
    }
}
