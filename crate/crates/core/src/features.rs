//! Model-based features: K-means class means, quadratic similarity scores and
//! synthetic test objects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FeatureMap, LabelMap, Raster};

/// Background and object intensities of synthetic instances.
pub const SYNTH_BACKGROUND: f64 = 0.25;
pub const SYNTH_OBJECT: f64 = 0.75;

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMeans {
    /// One mean vector per class, in ascending order of the first channel.
    pub means: Vec<Vec<f64>>,
}

impl ClassMeans {
    pub fn new(means: Vec<Vec<f64>>) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "at least 2 class means required, got {}",
                means.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::ShapeMismatch(
                "class means differ in dimension".into(),
            ));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("class means must be finite".into()));
        }
        Ok(Self { means })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// Mean intensity (channel average) of each class.
    pub fn intensities(&self) -> Vec<f64> {
        self.means
            .iter()
            .map(|m| m.iter().sum::<f64>() / m.len() as f64)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm seeded at evenly spaced intensity quantiles.
///
/// `seed` only decides exact distance ties between means.
pub fn kmeans_init(image: &Raster, classes: usize, seed: u64) -> Result<ClassMeans> {
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "at least 2 classes required, got {classes}"
        )));
    }
    let pixels: Vec<&[f64]> = image.pixel_iter().collect();
    let intensity = |px: &[f64]| px.iter().sum::<f64>() / px.len() as f64;

    // pixels sorted by intensity, then lexicographically for a total order
    let mut order: Vec<usize> = (0..pixels.len()).collect();
    order.sort_by(|&a, &b| {
        intensity(pixels[a])
            .total_cmp(&intensity(pixels[b]))
            .then_with(|| {
                pixels[a]
                    .iter()
                    .zip(pixels[b])
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    let mut distinct: Vec<usize> = Vec::new();
    for &i in &order {
        if distinct.last().is_none_or(|&j| pixels[j] != pixels[i]) {
            distinct.push(i);
        }
    }
    if distinct.len() < classes {
        return Err(Error::TooFewDistinct {
            distinct: distinct.len(),
            classes,
        });
    }

    // k-th mean starts at the (k + 1/2)/I quantile, moved forward to a new
    // distinct value if it repeats the previous one
    let n = order.len();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut rank_of = vec![0usize; n];
    let mut rank = 0;
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && pixels[order[pos - 1]] != pixels[i] {
            rank += 1;
        }
        rank_of[pos] = rank;
    }
    let mut last_rank: Option<usize> = None;
    for k in 0..classes {
        let pos = (((2 * k + 1) * n) / (2 * classes)).min(n - 1);
        let mut r = rank_of[pos];
        if let Some(prev) = last_rank {
            r = r.max(prev + 1);
        }
        // leave room for the remaining classes
        r = r.min(distinct.len() - (classes - k));
        last_rank = Some(r);
        means.push(pixels[distinct[r]].to_vec());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = image.channels();
    let mut assign = vec![usize::MAX; n];
    let mut tied = Vec::with_capacity(classes);
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (p, px) in pixels.iter().enumerate() {
            let dists: Vec<f64> = means.iter().map(|m| sq_dist(px, m)).collect();
            let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
            tied.clear();
            tied.extend((0..classes).filter(|&k| dists[k] == best));
            let choice = if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.gen_range(0..tied.len())]
            };
            if assign[p] != choice {
                assign[p] = choice;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (p, px) in pixels.iter().enumerate() {
            counts[assign[p]] += 1;
            for (s, v) in sums[assign[p]].iter_mut().zip(*px) {
                *s += v;
            }
        }
        for k in 0..classes {
            // an empty cluster keeps its previous mean
            if counts[k] > 0 {
                means[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
    }
    means.sort_by(|a, b| a[0].total_cmp(&b[0]));
    ClassMeans::new(means)
}

/// `o_i(x) = -|v(x) - mu_i|^2 / 2`.
pub fn quadratic_features(image: &Raster, means: &ClassMeans) -> Result<FeatureMap> {
    if means.means[0].len() != image.channels() {
        return Err(Error::ShapeMismatch(format!(
            "means of dimension {} for a {}-channel image",
            means.means[0].len(),
            image.channels()
        )));
    }
    let c = means.classes();
    let mut data = Vec::with_capacity(image.pixels() * c);
    for px in image.pixel_iter() {
        for m in &means.means {
            data.push(-0.5 * sq_dist(px, m));
        }
    }
    FeatureMap::new(Raster::new(image.height(), image.width(), c, data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Axis-aligned square, half the image side.
    Square,
    /// Five-pointed star.
    Star,
    /// Disk with a straight slot cut in from the right.
    Cshape,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(SynthKind::Square),
            "star" => Ok(SynthKind::Star),
            "cshape" => Ok(SynthKind::Cshape),
            other => Err(Error::InvalidConfig(format!(
                "unknown synthetic kind {other:?} (expected square, star or cshape)"
            ))),
        }
    }
}

impl std::fmt::Display for SynthKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SynthKind::Square => "square",
            SynthKind::Star => "star",
            SynthKind::Cshape => "cshape",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthInstance {
    /// Single-channel noisy image in `[0, 1]`.
    pub image: Raster,
    /// Ground truth: 1 on the object, 0 elsewhere.
    pub truth: LabelMap,
    /// Geometric center of the object, `(y, x)`, rounded to the nearest pixel.
    pub center: (usize, usize),
}

fn inside_star(y: f64, x: f64, cy: f64, cx: f64, outer: f64, inner: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    let r = dy.hypot(dx);
    if r == 0.0 {
        return true;
    }
    // boundary radius of a five-pointed star polygon at this angle
    let sector = std::f64::consts::PI / 5.0;
    let theta = dy.atan2(dx) + std::f64::consts::FRAC_PI_2;
    let local = theta.rem_euclid(2.0 * sector);
    let t = if local <= sector {
        local
    } else {
        2.0 * sector - local
    };
    // edge from the tip (angle 0, radius outer) to the notch (angle sector, radius inner)
    let (ax, ay) = (outer, 0.0);
    let (bx, by) = (inner * sector.cos(), inner * sector.sin());
    let (ux, uy) = (t.cos(), t.sin());
    // ray (ux, uy) * s meets segment a + v (b - a)
    let (ex, ey) = (bx - ax, by - ay);
    let det = ux * (-ey) - uy * (-ex);
    let s = (ax * (-ey) - ay * (-ex)) / det;
    r <= s
}

/// Noisy synthetic object on a square `size x size` image.
pub fn synth_instance(
    kind: SynthKind,
    size: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SynthInstance> {
    if size < 16 {
        return Err(Error::InvalidConfig(format!(
            "synthetic size must be at least 16, got {size}"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be nonnegative, got {noise_sigma}"
        )));
    }
    let n = size as f64;
    let mid = (n - 1.0) / 2.0;
    let object = |y: usize, x: usize| -> bool {
        let (fy, fx) = (y as f64, x as f64);
        match kind {
            SynthKind::Square => {
                let lo = size / 4;
                let hi = lo + size / 2;
                (lo..hi).contains(&y) && (lo..hi).contains(&x)
            }
            SynthKind::Star => inside_star(fy, fx, mid, mid, 0.42 * n, 0.25 * n),
            SynthKind::Cshape => {
                let r = 0.36 * n;
                let in_disk = (fy - mid).powi(2) + (fx - mid).powi(2) <= r * r;
                let half_width = (0.05 * n).max(1.0);
                let in_slot = (fy - mid).abs() <= half_width && fx >= mid + 0.08 * n;
                in_disk && !in_slot
            }
        }
    };
    let mut labels = Vec::with_capacity(size * size);
    let (mut sy, mut sx, mut count) = (0.0, 0.0, 0usize);
    for y in 0..size {
        for x in 0..size {
            let inside = object(y, x);
            labels.push(usize::from(inside));
            if inside {
                sy += y as f64;
                sx += x as f64;
                count += 1;
            }
        }
    }
    let center = (
        (sy / count as f64).round() as usize,
        (sx / count as f64).round() as usize,
    );
    let truth = LabelMap::new(size, size, 2, labels)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let data = truth
        .labels()
        .iter()
        .map(|&l| {
            let base = if l == 1 {
                SYNTH_OBJECT
            } else {
                SYNTH_BACKGROUND
            };
            if noise_sigma == 0.0 {
                base
            } else {
                (base + normal.sample(&mut rng)).clamp(0.0, 1.0)
            }
        })
        .collect();
    let image = Raster::new(size, size, 1, data)?;
    Ok(SynthInstance {
        image,
        truth,
        center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::softmax;
    use crate::metrics::star_check;
    use crate::raster::argmax_predict;

    #[test]
    fn two_value_image() {
        let img = Raster::from_fn(4, 4, 1, |y, _, _| if y < 2 { 1.0 } else { 0.0 });
        let m = kmeans_init(&img, 2, 0).unwrap();
        assert_eq!(m.means, vec![vec![0.0], vec![1.0]]);
    }

    #[test]
    fn constant_image_is_rejected() {
        let img = Raster::filled(4, 4, 1, 0.3);
        let err = kmeans_init(&img, 2, 0).unwrap_err();
        assert!(err
            .to_string()
            .starts_with("fewer distinct values than classes"));
    }

    #[test]
    fn recovers_phase_means() {
        let inst = synth_instance(SynthKind::Square, 64, 0.1, 7).unwrap();
        let m = kmeans_init(&inst.image, 2, 0).unwrap();
        assert!((m.means[0][0] - 0.25).abs() < 0.02, "{:?}", m.means);
        assert!((m.means[1][0] - 0.75).abs() < 0.02, "{:?}", m.means);
    }

    #[test]
    fn kmeans_is_deterministic_and_ordered() {
        let inst = synth_instance(SynthKind::Star, 32, 0.2, 3).unwrap();
        let a = kmeans_init(&inst.image, 3, 5).unwrap();
        let b = kmeans_init(&inst.image, 3, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.means.windows(2).all(|w| w[0][0] <= w[1][0]));
    }

    #[test]
    fn quadratic_feature_examples() {
        let means = ClassMeans::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let img = Raster::new(1, 2, 1, vec![0.0, 0.5]).unwrap();
        let o = quadratic_features(&img, &means).unwrap();
        assert_eq!(o.raster().pixel(0, 0), &[0.0, -0.5]);
        assert_eq!(o.raster().pixel(0, 1), &[-0.125, -0.125]);
        assert_eq!(softmax(&o, 1.0).raster().pixel(0, 1), &[0.5, 0.5]);
        let rgb = Raster::filled(1, 1, 3, 0.5);
        assert!(quadratic_features(&rgb, &means).is_err());
    }

    #[test]
    fn quadratic_features_pointwise() {
        let means = ClassMeans::new(vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.9, 0.9]]).unwrap();
        let img = Raster::from_fn(3, 3, 2, |y, x, c| ((y * 3 + x) * (c + 1)) as f64 / 20.0);
        let o = quadratic_features(&img, &means).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                for (i, m) in means.means.iter().enumerate() {
                    let d0 = img.get(y, x, 0) - m[0];
                    let d1 = img.get(y, x, 1) - m[1];
                    assert_eq!(o.raster().get(y, x, i), -0.5 * (d0 * d0 + d1 * d1));
                }
            }
        }
    }

    #[test]
    fn nearest_mean_equals_softmax_argmax() {
        let inst = synth_instance(SynthKind::Cshape, 32, 0.15, 1).unwrap();
        let means = kmeans_init(&inst.image, 2, 0).unwrap();
        let o = quadratic_features(&inst.image, &means).unwrap();
        let labels = argmax_predict(&softmax(&o, 1.0));
        for (p, px) in inst.image.pixel_iter().enumerate() {
            let d: Vec<f64> = means.means.iter().map(|m| sq_dist(px, m)).collect();
            let nearest = if d[1] < d[0] { 1 } else { 0 };
            assert_eq!(labels.labels()[p], nearest);
        }
    }

    #[test]
    fn noise_free_square_is_exact() {
        let inst = synth_instance(SynthKind::Square, 16, 0.0, 0).unwrap();
        for (v, &l) in inst.image.data().iter().zip(inst.truth.labels()) {
            assert_eq!(
                *v,
                if l == 1 {
                    SYNTH_OBJECT
                } else {
                    SYNTH_BACKGROUND
                }
            );
        }
        assert_eq!(inst.truth.labels().iter().sum::<usize>(), 64);
    }

    #[test]
    fn synth_is_deterministic() {
        for kind in [SynthKind::Square, SynthKind::Star, SynthKind::Cshape] {
            let a = synth_instance(kind, 40, 0.1, 9).unwrap();
            let b = synth_instance(kind, 40, 0.1, 9).unwrap();
            assert_eq!(a, b);
            assert!(a.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn noise_free_truth_is_recovered_by_nearest_mean() {
        for kind in [SynthKind::Square, SynthKind::Star, SynthKind::Cshape] {
            let inst = synth_instance(kind, 32, 0.0, 0).unwrap();
            let means = kmeans_init(&inst.image, 2, 0).unwrap();
            let o = quadratic_features(&inst.image, &means).unwrap();
            assert_eq!(argmax_predict(&softmax(&o, 1.0)), inst.truth);
        }
    }

    #[test]
    fn star_truth_is_star_shaped() {
        for size in [16, 32, 64] {
            let inst = synth_instance(SynthKind::Star, size, 0.1, 0).unwrap();
            assert_eq!(
                star_check(&inst.truth, 1, inst.center).unwrap(),
                0,
                "size {size}"
            );
        }
    }

    #[test]
    fn cshape_truth_is_not_star_shaped() {
        let inst = synth_instance(SynthKind::Cshape, 64, 0.1, 0).unwrap();
        assert!(star_check(&inst.truth, 1, inst.center).unwrap() > 0);
    }

    #[test]
    fn synth_rejects_small_sizes() {
        assert!(synth_instance(SynthKind::Square, 8, 0.1, 0).is_err());
    }
}
