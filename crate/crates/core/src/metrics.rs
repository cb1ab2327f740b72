//! Evaluation: IoU against a reference labelling and the star-shape ray check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::{LabelMap, SoftSegmentation};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouReport {
    /// IoU of each class; `None` when the class is absent from both maps.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that were counted.
    pub miou: f64,
}

/// Per-class intersection-over-union and its mean.
pub fn iou(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<IouReport> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidLabel {
                label: p.max(t),
                index: 0,
                classes,
            });
        }
        if p == t {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[t] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    let counted: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok(IouReport { per_class, miou })
}

/// Bilinear interpolation of a boolean mask at a real position `(y, x)`.
fn bilinear(mask: &[bool], height: usize, width: usize, y: f64, x: f64) -> f64 {
    let y0 = y.floor().clamp(0.0, (height - 1) as f64) as usize;
    let x0 = x.floor().clamp(0.0, (width - 1) as f64) as usize;
    let y1 = (y0 + 1).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let fy = (y - y0 as f64).clamp(0.0, 1.0);
    let fx = (x - x0 as f64).clamp(0.0, 1.0);
    let v = |yy: usize, xx: usize| if mask[yy * width + xx] { 1.0 } else { 0.0 };
    (1.0 - fy) * ((1.0 - fx) * v(y0, x0) + fx * v(y0, x1))
        + fy * ((1.0 - fx) * v(y1, x0) + fx * v(y1, x1))
}

/// Counts object pixels whose straight path to `center` leaves the object.
///
/// From each object pixel the path is sampled in unit steps toward the
/// center; a sample whose bilinearly interpolated membership is below 1/2
/// counts as outside, as does the center itself when it is not an object
/// pixel.
pub fn ray_violations(mask: &[bool], height: usize, width: usize, center: (usize, usize)) -> usize {
    assert_eq!(mask.len(), height * width);
    let (cy, cx) = (center.0 as f64, center.1 as f64);
    let center_inside = mask[center.0 * width + center.1];
    let mut count = 0;
    for y in 0..height {
        for x in 0..width {
            if !mask[y * width + x] || (y, x) == center {
                continue;
            }
            if !center_inside {
                count += 1;
                continue;
            }
            let (dy, dx) = (cy - y as f64, cx - x as f64);
            let dist = dy.hypot(dx);
            let (sy, sx) = (dy / dist, dx / dist);
            let mut k = 1.0;
            while k < dist {
                let v = bilinear(mask, height, width, y as f64 + k * sy, x as f64 + k * sx);
                if v < 0.5 {
                    count += 1;
                    break;
                }
                k += 1.0;
            }
        }
    }
    count
}

/// Ray-check violations of one class in a label map.
pub fn star_check(labels: &LabelMap, object_class: usize, center: (usize, usize)) -> Result<usize> {
    if center.0 >= labels.height() || center.1 >= labels.width() {
        return Err(Error::InvalidConfig(format!(
            "center ({}, {}) outside {}x{} image",
            center.0,
            center.1,
            labels.height(),
            labels.width()
        )));
    }
    Ok(ray_violations(
        &labels.mask(object_class),
        labels.height(),
        labels.width(),
        center,
    ))
}

/// Ray-check violations of channel `class` thresholded at 1/2.
pub fn soft_star_violations(u: &SoftSegmentation, class: usize, center: (usize, usize)) -> usize {
    let r = u.raster();
    let mask: Vec<bool> = r.pixel_iter().map(|px| px[class] >= 0.5).collect();
    ray_violations(&mask, r.height(), r.width(), center)
}
