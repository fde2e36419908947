//! Feature maps, boxes and RoI max pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Axis-aligned box in feature-map cell coordinates. Cell `(y, x)` covers
/// `[x, x + 1) × [y, y + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Checks `0 <= x0 < x1 <= width` and `0 <= y0 < y1 <= height`.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x0 < self.x1
            && self.y0 < self.y1
            && self.x1 <= width as f64
            && self.y1 <= height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "box {self:?} is not inside a {width}x{height} map"
            )))
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let b = BBox {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        };
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    /// Bitwise identity of all four coordinates.
    pub fn same_as(&self, other: &BBox) -> bool {
        self.x0.to_bits() == other.x0.to_bits()
            && self.y0.to_bits() == other.y0.to_bits()
            && self.x1.to_bits() == other.x1.to_bits()
            && self.y1.to_bits() == other.y1.to_bits()
    }

    /// Fraction of cell `(y, x)` covered by the box.
    pub fn cell_coverage(&self, y: usize, x: usize) -> f64 {
        let cell = BBox::new(x as f64, y as f64, x as f64 + 1.0, y as f64 + 1.0);
        self.intersection(&cell).map_or(0.0, |b| b.area())
    }
}

/// `H × W × C` grid of features, stored row-major as `[H, W, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    tensor: Tensor,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let tensor = Tensor::new(vec![height, width, channels], values)?;
        if !tensor.is_finite() {
            return Err(Error::NonFinite { op: "feature_map" });
        }
        Ok(FeatureMap { tensor })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            tensor: Tensor::zeros(vec![height, width, channels]),
        }
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        match tensor.shape() {
            [_, _, _] => Ok(FeatureMap { tensor }),
            s => Err(Error::shape("feature_map", format!("expected [H, W, C], got {s:?}"))),
        }
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn values(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.tensor.data_mut()
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        let c = self.channels();
        let o = (y * self.width() + x) * c;
        &self.tensor.data()[o..o + c]
    }

    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let c = self.channels();
        let o = (y * self.width() + x) * c;
        &mut self.tensor.data_mut()[o..o + c]
    }
}

/// Pooled `P × P × C` feature of one box, flattened as `(bin_y, bin_x, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiFeature(pub Vec<f64>);

/// Half-open cell ranges for each of the `p` bins along one axis.
fn bin_edges(lo: f64, hi: f64, p: usize, limit: usize) -> Vec<(usize, usize)> {
    const SNAP: f64 = 1e-9;
    let step = (hi - lo) / p as f64;
    (0..p)
        .map(|k| {
            let a = lo + k as f64 * step;
            let b = lo + (k + 1) as f64 * step;
            let start = ((a + SNAP).floor().max(0.0) as usize).min(limit - 1);
            let end = ((b - SNAP).ceil().max(0.0) as usize).min(limit);
            (start, end.max(start + 1))
        })
        .collect()
}

/// For each output entry of a `P × P × C` pooling of `bbox`, the flat index
/// into the `[H, W, C]` map holding the bin maximum. Ties go to the first
/// cell in row-major order.
pub(crate) fn roi_argmax(map: &[f64], h: usize, w: usize, c: usize, bbox: &BBox, p: usize) -> Vec<usize> {
    let rows = bin_edges(bbox.y0, bbox.y1, p, h);
    let cols = bin_edges(bbox.x0, bbox.x1, p, w);
    let mut out = Vec::with_capacity(p * p * c);
    for &(ys, ye) in &rows {
        for &(xs, xe) in &cols {
            for ch in 0..c {
                let mut best = (ys * w + xs) * c + ch;
                for y in ys..ye {
                    for x in xs..xe {
                        let i = (y * w + x) * c + ch;
                        if map[i] > map[best] {
                            best = i;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    out
}

/// Max-pools `bbox` into `p × p` bins.
///
/// ```
/// use sta::nets::{roi_pool, BBox, FeatureMap};
/// let map = FeatureMap::new(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap();
/// let pooled = roi_pool(&map, &BBox::new(0.0, 0.0, 4.0, 4.0), 2).unwrap();
/// assert_eq!(pooled.0, vec![6.0, 8.0, 14.0, 16.0]);
/// ```
pub fn roi_pool(map: &FeatureMap, bbox: &BBox, p: usize) -> Result<RoiFeature> {
    if p == 0 {
        return Err(Error::config("pool_size", "must be at least 1"));
    }
    bbox.validate(map.width(), map.height())?;
    let idx = roi_argmax(map.values(), map.height(), map.width(), map.channels(), bbox, p);
    Ok(RoiFeature(idx.into_iter().map(|i| map.values()[i]).collect()))
}

/// Differentiable RoI pooling of several boxes from a map recorded on `g`
/// (shape `[H, W, C]`). Returns an `[n, P·P·C]` matrix; gradients flow to the
/// argmax cells.
pub fn pool_rois(g: &mut Graph, map: Var, boxes: &[BBox], p: usize) -> Result<Var> {
    let (h, w, c) = match g.shape(map) {
        [h, w, c] => (*h, *w, *c),
        s => return Err(Error::shape("roi_pool", format!("map must be [H, W, C], got {s:?}"))),
    };
    if boxes.is_empty() {
        return Err(Error::Contract("roi_pool needs at least one box".into()));
    }
    if p == 0 {
        return Err(Error::config("pool_size", "must be at least 1"));
    }
    let mut source = Vec::with_capacity(boxes.len() * p * p * c);
    for b in boxes {
        b.validate(w, h)?;
        source.extend(roi_argmax(g.value(map).data(), h, w, c, b, p));
    }
    g.gather_max(map, source, vec![boxes.len(), p * p * c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn ramp() -> FeatureMap {
        FeatureMap::new(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn full_box_two_bins() {
        // Bins: rows {0,1}/{2,3} x cols {0,1}/{2,3}; maxima 6, 8, 14, 16.
        let r = roi_pool(&ramp(), &BBox::new(0.0, 0.0, 4.0, 4.0), 2).unwrap();
        assert_eq!(r.0, vec![6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn single_bin_is_global_max() {
        let r = roi_pool(&ramp(), &BBox::new(0.0, 0.0, 4.0, 4.0), 1).unwrap();
        assert_eq!(r.0, vec![16.0]);
    }

    #[test]
    fn constant_map_pools_constant() {
        let map = FeatureMap::new(5, 6, 2, vec![3.25; 60]).unwrap();
        for (b, p) in [
            (BBox::new(0.0, 0.0, 6.0, 5.0), 3),
            (BBox::new(1.5, 0.2, 2.0, 4.9), 4),
            (BBox::new(4.1, 3.3, 5.9, 4.0), 7),
        ] {
            let r = roi_pool(&map, &b, p).unwrap();
            assert!(r.0.iter().all(|&v| v == 3.25));
        }
    }

    #[test]
    fn degenerate_box_replicates_single_cell() {
        let r = roi_pool(&ramp(), &BBox::new(2.2, 1.1, 2.7, 1.6), 3).unwrap();
        // Cell (y=1, x=2) holds 7.
        assert_eq!(r.0, vec![7.0; 9]);
    }

    #[test]
    fn box_outside_map_is_rejected() {
        assert!(roi_pool(&ramp(), &BBox::new(0.0, 0.0, 5.0, 4.0), 2).is_err());
    }

    #[test]
    fn ties_route_to_first_cell() {
        let map = FeatureMap::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let mut g = Graph::new();
        let m = g.param(map.tensor());
        let pooled = pool_rois(&mut g, m, &[BBox::new(0.0, 0.0, 2.0, 2.0)], 1).unwrap();
        let loss = g.sum(pooled).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(m).data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pooling_gradient_matches_finite_differences() {
        let vals: Vec<f64> = (0..48).map(|i| ((i * 37 % 23) as f64 * 0.173).sin()).collect();
        let map = Tensor::new(vec![4, 4, 3], vals).unwrap();
        let boxes = [BBox::new(0.0, 0.0, 4.0, 4.0), BBox::new(0.5, 1.0, 3.0, 3.5)];
        let r = grad_check(
            |g, v| {
                let p = pool_rois(g, v[0], &boxes, 2)?;
                let sq = g.square(p)?;
                g.sum(sq)
            },
            &[map],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
