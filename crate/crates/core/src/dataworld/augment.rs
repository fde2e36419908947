use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::BBox;

const MAX_ATTEMPTS: usize = 10_000;

/// Intersection over union; 0 for disjoint or empty boxes.
///
/// ```
/// use sta::dataworld::iou;
/// use sta::nets::BBox;
/// let a = BBox::new(0.0, 0.0, 10.0, 10.0);
/// let b = BBox::new(5.0, 0.0, 15.0, 10.0);
/// assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
/// ```
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One random perturbation of `bbox` with IoU at least `iou_min`, clipped to
/// a `width × height` map.
pub fn jitter_box(bbox: &BBox, iou_min: f64, bounds: (usize, usize), rng: &mut impl Rng) -> Result<BBox> {
    check(bbox, iou_min, bounds)?;
    if iou_min >= 1.0 {
        return Ok(*bbox);
    }
    let (w, h) = (bbox.width(), bbox.height());
    let (cx, cy) = (bbox.x0 + w / 2.0, bbox.y0 + h / 2.0);
    let spread = 1.0 - iou_min;
    for _ in 0..MAX_ATTEMPTS {
        let nw = w * (1.0 + rng.random_range(-spread..spread));
        let nh = h * (1.0 + rng.random_range(-spread..spread));
        let nx = cx + w * rng.random_range(-spread..spread) / 2.0;
        let ny = cy + h * rng.random_range(-spread..spread) / 2.0;
        let cand = BBox::new(
            (nx - nw / 2.0).max(0.0),
            (ny - nh / 2.0).max(0.0),
            (nx + nw / 2.0).min(bounds.0 as f64),
            (ny + nh / 2.0).min(bounds.1 as f64),
        );
        if cand.x0 < cand.x1 && cand.y0 < cand.y1 && iou(&cand, bbox) >= iou_min {
            return Ok(cand);
        }
    }
    Err(Error::Augmentation(format!(
        "no jitter of {bbox:?} reached IoU {iou_min} in {MAX_ATTEMPTS} attempts"
    )))
}

fn check(bbox: &BBox, iou_min: f64, bounds: (usize, usize)) -> Result<()> {
    if !(iou_min > 0.0 && iou_min <= 1.0) {
        return Err(Error::config("iou_min", format!("must lie in (0, 1], got {iou_min}")));
    }
    bbox.validate(bounds.0, bounds.1)
}

/// `n` boxes around `bbox`, each with IoU ≥ `iou_min` and inside the
/// `(width, height)` bounds. The first is `bbox` itself.
pub fn augment_rois(bbox: &BBox, n: usize, iou_min: f64, bounds: (usize, usize), seed: u64) -> Result<Vec<BBox>> {
    if n == 0 {
        return Err(Error::config("rois_per_box", "must be at least 1"));
    }
    check(bbox, iou_min, bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    out.push(*bbox);
    while out.len() < n {
        out.push(jitter_box(bbox, iou_min, bounds, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(10.0, 0.0, 20.0, 10.0)), 0.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        // Containment: 25 / 100.
        assert_eq!(iou(&a, &BBox::new(2.0, 2.0, 7.0, 7.0)), 0.25);
    }

    #[test]
    fn augmented_boxes_respect_floor() {
        let b = BBox::new(3.0, 4.0, 11.0, 9.0);
        let out = augment_rois(&b, 10, 0.7, (32, 32), 5).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out[0].same_as(&b));
        for o in &out {
            assert!(iou(o, &b) >= 0.7);
            o.validate(32, 32).unwrap();
        }
        assert!(out[1..].iter().any(|o| !o.same_as(&b)));
    }

    #[test]
    fn single_and_exact_requests() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        let one = augment_rois(&b, 1, 0.7, (8, 8), 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one[0].same_as(&b));
        let exact = augment_rois(&b, 6, 1.0, (8, 8), 1).unwrap();
        assert!(exact.iter().all(|o| o.same_as(&b)));
    }

    #[test]
    fn boxes_at_the_border_are_clipped() {
        let b = BBox::new(0.0, 0.0, 8.0, 8.0);
        for o in augment_rois(&b, 50, 0.5, (8, 8), 2).unwrap() {
            o.validate(8, 8).unwrap();
            assert!(iou(&o, &b) >= 0.5);
        }
    }

    #[test]
    fn bad_arguments() {
        let b = BBox::new(0.0, 0.0, 4.0, 4.0);
        assert!(augment_rois(&b, 0, 0.7, (8, 8), 1).is_err());
        assert!(augment_rois(&b, 3, 0.0, (8, 8), 1).is_err());
        assert!(augment_rois(&b, 3, 1.5, (8, 8), 1).is_err());
        assert!(augment_rois(&BBox::new(0.0, 0.0, 9.0, 4.0), 3, 0.7, (8, 8), 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let b = BBox::new(5.0, 5.0, 12.0, 15.0);
        let x = augment_rois(&b, 10, 0.7, (32, 32), 9).unwrap();
        let y = augment_rois(&b, 10, 0.7, (32, 32), 9).unwrap();
        assert!(x.iter().zip(&y).all(|(p, q)| p.same_as(q)));
    }
}
