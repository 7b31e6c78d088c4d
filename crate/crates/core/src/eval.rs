//! Segmentation metrics: confusion matrices, per-class and mean IOU, and IOU
//! restricted to a band around ground-truth boundaries.

use crate::error::{Error, Result};
use crate::types::{LabelMap, IGNORE_LABEL};

/// `classes × classes` pixel counts; entry `(g, p)` counts pixels with ground
/// truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize) {
        self.counts[gt * self.classes + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another matrix of the same size into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// IOU of every class; `None` for classes absent from both prediction
    /// and ground truth.
    pub fn class_ious(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
                let col: u64 = (0..self.classes).map(|g| self.get(g, c)).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

/// Tallies `(gt, pred)` pairs over pixels that are inside `mask` (when given)
/// and not labelled [`IGNORE_LABEL`] in the ground truth.
pub fn confusion(
    pred: &LabelMap,
    gt: &LabelMap,
    classes: usize,
    mask: Option<&TrimapBand>,
) -> Result<ConfusionMatrix> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    if let Some(m) = mask {
        if (m.height, m.cols) != (gt.height(), gt.width()) {
            return Err(Error::Shape("mask size differs from the label maps".into()));
        }
    }
    gt.check_classes(classes, true)?;
    pred.check_classes(classes, false)?;
    let mut cm = ConfusionMatrix::new(classes);
    for (i, (&p, &g)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
        if g == IGNORE_LABEL || mask.is_some_and(|m| !m.mask[i]) {
            continue;
        }
        cm.add(g as usize, p as usize);
    }
    Ok(cm)
}

/// Mean of the per-class IOUs over classes with a non-empty union.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    let ious: Vec<f64> = cm.class_ious().into_iter().flatten().collect();
    if ious.is_empty() {
        return Err(Error::UndefinedMetric("no class has any pixels".into()));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Pixels near a ground-truth label boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrimapBand {
    pub width: usize,
    height: usize,
    cols: usize,
    mask: Vec<bool>,
}

impl TrimapBand {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.cols + x]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Marks pixels within `width` pixels of a ground-truth label boundary.
///
/// Boundary pixels are those with a 4-neighbour of a different label
/// ([`IGNORE_LABEL`] counts as a label here), so both sides of an edge are
/// marked. The band is the boundary grown `width - 1` times with the 3×3
/// structuring element: a straight edge gets `width` pixels on each side.
pub fn trimap_mask(gt: &LabelMap, width: usize) -> Result<TrimapBand> {
    if width == 0 {
        return Err(Error::Validation("trimap width must be at least 1".into()));
    }
    let (h, w) = (gt.height(), gt.width());
    let mut mask = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let l = gt.get(y, x);
            let differs = (y > 0 && gt.get(y - 1, x) != l)
                || (y + 1 < h && gt.get(y + 1, x) != l)
                || (x > 0 && gt.get(y, x - 1) != l)
                || (x + 1 < w && gt.get(y, x + 1) != l);
            mask[y * w + x] = differs;
        }
    }
    for _ in 1..width {
        if mask.iter().all(|&m| m) || !mask.iter().any(|&m| m) {
            break;
        }
        let prev = mask.clone();
        for y in 0..h {
            for x in 0..w {
                if prev[y * w + x] {
                    continue;
                }
                let hit = (y.saturating_sub(1)..=(y + 1).min(h - 1)).any(|yy| {
                    (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|xx| prev[yy * w + xx])
                });
                mask[y * w + x] = hit;
            }
        }
    }
    Ok(TrimapBand {
        width,
        height: h,
        cols: w,
        mask,
    })
}

/// Mean IOU restricted to [`trimap_mask`]`(gt, width)`.
pub fn trimap_miou(pred: &LabelMap, gt: &LabelMap, classes: usize, width: usize) -> Result<f64> {
    let band = trimap_mask(gt, width)?;
    if band.is_empty() {
        return Err(Error::UndefinedMetric("trimap band is empty".into()));
    }
    mean_iou(&confusion(pred, gt, classes, Some(&band))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_diagonal() {
        let gt = map(2, 3, &[0, 1, 2, 2, 1, 0]);
        let cm = confusion(&gt, &gt, 3, None).unwrap();
        for g in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(g, p), if g == p { 2 } else { 0 });
            }
        }
        assert_eq!(mean_iou(&cm).unwrap(), 1.0);
    }

    #[test]
    fn all_wrong() {
        let cm = confusion(&map(2, 2, &[1; 4]), &map(2, 2, &[0; 4]), 2, None).unwrap();
        assert_eq!(cm.get(0, 1), 4);
        assert_eq!(cm.total(), 4);
    }

    #[test]
    fn half_flipped_class() {
        // four pixels of each class, two of class 0 predicted as 1
        let gt = map(1, 8, &[0, 0, 0, 0, 1, 1, 1, 1]);
        let pred = map(1, 8, &[0, 0, 1, 1, 1, 1, 1, 1]);
        let cm = confusion(&pred, &gt, 2, None).unwrap();
        let ious = cm.class_ious();
        assert_eq!(ious[0], Some(2.0 / 4.0));
        assert_eq!(ious[1], Some(4.0 / 6.0));
        assert!((mean_iou(&cm).unwrap() - (0.5 + 4.0 / 6.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded() {
        let gt = map(1, 2, &[0, 2]);
        let cm = confusion(&gt, &gt, 3, None).unwrap();
        assert_eq!(cm.class_ious()[1], None);
        assert_eq!(mean_iou(&cm).unwrap(), 1.0);
    }

    #[test]
    fn ignore_label_and_errors() {
        let gt = map(1, 3, &[0, IGNORE_LABEL, 1]);
        let pred = map(1, 3, &[0, 1, 0]);
        let cm = confusion(&pred, &gt, 2, None).unwrap();
        assert_eq!(cm.total(), 2);
        assert!(matches!(
            confusion(&pred, &map(1, 2, &[0, 0]), 2, None),
            Err(Error::Shape(_))
        ));
        assert!(confusion(&map(1, 3, &[0, 5, 0]), &gt, 2, None).is_err());
        let all_ignored = map(1, 2, &[IGNORE_LABEL; 2]);
        let cm = confusion(&map(1, 2, &[0, 0]), &all_ignored, 2, None).unwrap();
        assert!(matches!(mean_iou(&cm), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn constant_ground_truth_has_no_band() {
        let band = trimap_mask(&LabelMap::filled(6, 6, 3), 4).unwrap();
        assert!(band.is_empty());
        assert!(trimap_mask(&LabelMap::filled(2, 2, 0), 0).is_err());
        let gt = LabelMap::filled(6, 6, 3);
        assert!(matches!(
            trimap_miou(&gt, &gt, 4, 2),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn vertical_edge_band() {
        let gt = LabelMap::from_fn(8, 8, |_, x| (x >= 4) as u8);
        let band = trimap_mask(&gt, 2).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(band.contains(y, x), (2..6).contains(&x), "({y},{x})");
            }
        }
        let one = trimap_mask(&gt, 1).unwrap();
        assert_eq!(one.len(), 16);
    }

    #[test]
    fn wide_band_covers_everything() {
        let gt = LabelMap::from_fn(7, 5, |y, x| ((y * 5 + x) == 17) as u8);
        assert_eq!(trimap_mask(&gt, 7).unwrap().len(), 35);
    }

    #[test]
    fn band_restricted_to_correct_pixels() {
        let gt = LabelMap::from_fn(10, 10, |_, x| (x >= 5) as u8);
        // errors only far from the edge
        let pred = LabelMap::from_fn(
            10,
            10,
            |y, x| if x == 0 && y < 3 { 1 } else { (x >= 5) as u8 },
        );
        assert_eq!(trimap_miou(&pred, &gt, 2, 2).unwrap(), 1.0);
        assert!(mean_iou(&confusion(&pred, &gt, 2, None).unwrap()).unwrap() < 1.0);
    }
}
