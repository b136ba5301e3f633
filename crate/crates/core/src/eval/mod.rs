//! Evaluation protocols: pointing game, threshold localization and
//! attention-weighted proposal ranking.

mod dataset;

pub use dataset::{DatasetManifest, Entry, ProposalSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::excitation::AttentionMap;

/// Axis-aligned box with inclusive pixel corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return Err(Error::InvalidArgument(format!("unordered box ({x0},{y0},{x1},{y1})")));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    /// Grown by `margin` on every side, clipped to a `w×h` image.
    pub fn dilate(&self, margin: usize, w: usize, h: usize) -> BBox {
        BBox {
            x0: self.x0.saturating_sub(margin),
            y0: self.y0.saturating_sub(margin),
            x1: (self.x1 + margin).min(w.saturating_sub(1)),
            y1: (self.y1 + margin).min(h.saturating_sub(1)),
        }
    }

    pub fn fits(&self, w: usize, h: usize) -> bool {
        self.x1 < w && self.y1 < h
    }
}

impl TryFrom<[usize; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [usize; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Binary pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!("mask {height}x{width} has {} pixels", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tightest box around the set pixels, if any.
    pub fn bbox(&self) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &s)| s) {
            let (x, y) = (i % self.width, i / self.width);
            b = Some(match b {
                None => BBox {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                },
                Some(b) => BBox {
                    x0: b.x0.min(x),
                    y0: b.y0.min(y),
                    x1: b.x1.max(x),
                    y1: b.y1.max(y),
                },
            });
        }
        b
    }

    /// True when a set pixel lies within Chebyshev distance `margin`.
    pub fn near(&self, x: usize, y: usize, margin: usize) -> bool {
        let ys = y.saturating_sub(margin)..=(y + margin).min(self.height - 1);
        ys.into_iter().any(|yy| {
            let xs = x.saturating_sub(margin)..=(x + margin).min(self.width - 1);
            xs.into_iter().any(|xx| self.get(xx, yy))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Geometry {
    BBox(BBox),
    Mask(Mask),
}

impl Geometry {
    fn check_extent(&self, w: usize, h: usize) -> Result<()> {
        let ok = match self {
            Geometry::BBox(b) => b.fits(w, h),
            Geometry::Mask(m) => m.width == w && m.height == h,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!("region does not fit a {w}x{h} image")))
        }
    }

    fn covers(&self, x: usize, y: usize) -> bool {
        match self {
            Geometry::BBox(b) => b.contains(x, y),
            Geometry::Mask(m) => m.get(x, y),
        }
    }
}

/// Annotated object instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub category: String,
    pub geometry: Geometry,
}

/// Location of the largest value; ties go to the lowest flat index.
pub fn argmax(map: &AttentionMap) -> (usize, usize) {
    let mut best = 0;
    for (i, &v) in map.values.data().iter().enumerate() {
        if v > map.values.data()[best] {
            best = i;
        }
    }
    (best % map.width(), best / map.width())
}

/// Whether the map's peak falls on one of `regions`, each grown by
/// `margin` pixels.
pub fn pointing_hit(map: &AttentionMap, regions: &[&Region], margin: usize) -> Result<bool> {
    let (w, h) = (map.width(), map.height());
    for r in regions {
        r.geometry.check_extent(w, h)?;
    }
    let (x, y) = argmax(map);
    Ok(regions.iter().any(|r| match &r.geometry {
        Geometry::BBox(b) => b.dilate(margin, w, h).contains(x, y),
        Geometry::Mask(m) => m.near(x, y, margin),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAccuracy {
    pub category: String,
    pub hits: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingReport {
    pub categories: Vec<CategoryAccuracy>,
    pub mean_accuracy: f64,
}

/// Per-category hit rate and its unweighted mean over `categories`.
pub fn pointing_game(results: &[(String, bool)], categories: &[String]) -> Result<PointingReport> {
    let mut rows = Vec::with_capacity(categories.len());
    for c in categories {
        let (hits, total) = results
            .iter()
            .filter(|(cat, _)| cat == c)
            .fold((0, 0), |(h, t), (_, hit)| (h + usize::from(*hit), t + 1));
        if total == 0 {
            return Err(Error::EmptyCategory(c.clone()));
        }
        rows.push(CategoryAccuracy {
            category: c.clone(),
            hits,
            total,
            accuracy: hits as f64 / total as f64,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no categories to report".into()));
    }
    let mean_accuracy = rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64;
    Ok(PointingReport {
        categories: rows,
        mean_accuracy,
    })
}

/// Number of pixels covered by the union of `regions` in a `w×h` image.
pub fn union_area(regions: &[&Region], w: usize, h: usize) -> usize {
    (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| regions.iter().any(|r| r.geometry.covers(x, y)))
        .count()
}

/// The entry's targets whose instances cover less than a quarter of the
/// image and that share the image with another category.
pub fn difficult_targets(e: &Entry) -> Vec<String> {
    let present = e.present_categories();
    e.targets
        .iter()
        .filter(|t| {
            let own = e.regions_of(t);
            let distracted = present.iter().any(|c| c != *t);
            distracted && 4 * union_area(&own, e.width, e.height) < e.width * e.height
        })
        .cloned()
        .collect()
}

/// Keeps the (image, category) pairs meeting [`difficult_targets`].
pub fn filter_difficult(manifest: &DatasetManifest) -> DatasetManifest {
    let entries = manifest
        .entries
        .iter()
        .filter_map(|e| {
            let targets = difficult_targets(e);
            (!targets.is_empty()).then(|| Entry { targets, ..e.clone() })
        })
        .collect();
    DatasetManifest {
        entries,
        categories: manifest.categories.clone(),
    }
}

/// Tightest box around pixels with value ≥ `alpha × mean` that are also
/// positive.
pub fn extract_bbox(map: &AttentionMap, alpha: f64) -> Result<BBox> {
    let data = map.values.data();
    // the mean can never exceed the maximum; clamping removes rounding excess
    let mean = (data.iter().sum::<f64>() / data.len() as f64).min(map.values.max());
    let tau = alpha * mean;
    let white = data.iter().map(|&v| v >= tau && v > 0.0).collect();
    Mask::new(map.height(), map.width(), white)?
        .bbox()
        .ok_or(Error::EmptyAttention)
}

/// Intersection over union with inclusive pixel corners.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (x0, y0) = (a.x0.max(b.x0), a.y0.max(b.y0));
    let (x1, y1) = (a.x1.min(b.x1), a.y1.min(b.y1));
    if x0 > x1 || y0 > y1 {
        return 0.0;
    }
    let inter = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    inter / (a.area() as f64 + b.area() as f64 - inter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    /// Position in the proposal list the box came from.
    pub proposal: usize,
}

/// Segment proposal: a box or a pixel mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Proposal {
    BBox(BBox),
    Mask(Mask),
}

/// Scores each proposal by `S / A^gamma` (attention mass inside over area
/// raised to `gamma`) and sorts descending. Ties keep input order.
pub fn score_segments(map: &AttentionMap, proposals: &[Proposal], gamma: f64) -> Result<Vec<ScoredBox>> {
    let (w, h) = (map.width(), map.height());
    let mut out = Vec::with_capacity(proposals.len());
    for (i, p) in proposals.iter().enumerate() {
        let (mass, area, bbox) = match p {
            Proposal::BBox(b) => {
                if !b.fits(w, h) {
                    return Err(Error::shape(format!("proposal {i} {b:?} exceeds a {w}x{h} map")));
                }
                let mut s = 0.0;
                for y in b.y0..=b.y1 {
                    s += map.values.data()[y * w + b.x0..=y * w + b.x1].iter().sum::<f64>();
                }
                (s, b.area(), *b)
            }
            Proposal::Mask(m) => {
                if m.width != w || m.height != h {
                    return Err(Error::shape(format!("proposal {i} mask is {}x{}", m.width, m.height)));
                }
                let s = m
                    .bits
                    .iter()
                    .zip(map.values.data())
                    .filter(|(b, _)| **b)
                    .map(|(_, v)| v)
                    .sum();
                (s, m.count(), m.bbox().ok_or(Error::EmptyProposal(i))?)
            }
        };
        if area == 0 {
            return Err(Error::EmptyProposal(i));
        }
        out.push(ScoredBox {
            bbox,
            score: mass / (area as f64).powf(gamma),
            proposal: i,
        });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Greedy suppression: visiting boxes by descending score (ties in input
/// order), a box is dropped when its IoU with a kept box reaches
/// `iou_threshold`.
pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<&ScoredBox> = boxes.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<ScoredBox> = Vec::new();
    for b in order {
        if kept.iter().all(|k| iou(&k.bbox, &b.bbox) < iou_threshold) {
            kept.push(*b);
        }
    }
    kept
}

/// Whether any of the first `k` boxes overlaps a ground-truth box with
/// IoU ≥ `iou_threshold`.
pub fn recall_at_k(scored: &[ScoredBox], gt: &[BBox], k: usize, iou_threshold: f64) -> bool {
    scored
        .iter()
        .take(k)
        .any(|s| gt.iter().any(|g| iou(&s.bbox, g) >= iou_threshold))
}

#[cfg(test)]
mod tests;
