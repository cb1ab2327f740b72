//! Dense row-major rasters and the segmentation field types built on them.
//!
//! Every field is stored as `height * width * channels` 64-bit reals with the
//! channel index varying fastest, which is also the on-disk layout of the
//! VSG1 tensor format.

use crate::error::{Error, Result};

/// Absolute tolerance on the per-pixel channel sum of a [`SoftSegmentation`].
pub const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    /// Builds a raster, checking the length and that every entry is finite.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::ZeroDimension(format!(
                "raster {height}x{width}x{channels}"
            )));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::DimensionOverflow(format!("{height}x{width}x{channels}")))?;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Constant-valued raster. Panics on a zero dimension.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "zero dimension");
        assert!(value.is_finite());
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a raster from `f(y, x, c)`. Panics if `f` returns a non-finite value.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "zero dimension");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(y, x, c);
                    assert!(v.is_finite(), "non-finite value at ({y}, {x}, {c})");
                    data.push(v);
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Internal constructor for results of arithmetic on already valid rasters.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of pixels, `height * width`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    /// Sets one entry. Panics on a non-finite value.
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        assert!(value.is_finite());
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// Channel vector of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Channel vectors of all pixels in row-major order.
    pub fn pixel_iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    /// Copies one channel out as a single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self.pixel_iter().map(|px| px[c]).collect();
        Raster::from_parts(self.height, self.width, 1, data)
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Raster, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Euclidean inner product of the flattened data.
    pub fn dot(&self, other: &Raster) -> f64 {
        assert!(self.same_shape(other), "dot of mismatched rasters");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Entry-wise map into a raster of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster::from_parts(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Entry-wise combination of two rasters of the same shape.
    pub fn zip_map(&self, other: &Raster, f: impl Fn(f64, f64) -> f64) -> Raster {
        assert!(self.same_shape(other), "zip_map of mismatched rasters");
        Raster::from_parts(
            self.height,
            self.width,
            self.channels,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &Raster) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff of mismatched rasters");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }
}

/// Per-pixel, per-class scores `o`. At least two classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap(Raster);

impl FeatureMap {
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.channels() < 2 {
            return Err(Error::InvalidConfig(format!(
                "feature map needs at least 2 classes, got {}",
                raster.channels()
            )));
        }
        Ok(Self(raster))
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }
}

impl AsRef<Raster> for FeatureMap {
    fn as_ref(&self) -> &Raster {
        &self.0
    }
}

/// Per-pixel class probabilities: every pixel lies on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftSegmentation(Raster);

impl SoftSegmentation {
    /// Checks entries in `[0, 1]` and per-pixel sums within [`SIMPLEX_TOL`] of 1.
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.channels() < 2 {
            return Err(Error::InvalidConfig(format!(
                "soft segmentation needs at least 2 classes, got {}",
                raster.channels()
            )));
        }
        for (p, px) in raster.pixel_iter().enumerate() {
            if let Some(v) = px.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::NotOnSimplex(format!(
                    "entry {v} outside [0, 1] at pixel {p}"
                )));
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::NotOnSimplex(format!(
                    "channel sum {sum} at pixel {p}"
                )));
            }
        }
        Ok(Self(raster))
    }

    /// Uniform `1/I` field.
    pub fn uniform(height: usize, width: usize, classes: usize) -> Self {
        assert!(classes >= 2);
        Self(Raster::filled(height, width, classes, 1.0 / classes as f64))
    }

    /// One-hot encoding of a label map.
    pub fn from_labels(labels: &LabelMap) -> Self {
        let (h, w, n) = (labels.height(), labels.width(), labels.classes());
        let mut data = vec![0.0; h * w * n];
        for (p, &l) in labels.labels().iter().enumerate() {
            data[p * n + l] = 1.0;
        }
        Self(Raster::from_parts(h, w, n, data))
    }

    pub(crate) fn from_raster_unchecked(raster: Raster) -> Self {
        Self(raster)
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }

    /// Largest deviation of a per-pixel channel sum from 1.
    pub fn simplex_residual(&self) -> f64 {
        self.0
            .pixel_iter()
            .map(|px| (px.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Total mass `sum_x u_i(x)` of each class.
    pub fn class_masses(&self) -> Vec<f64> {
        let mut masses = vec![0.0; self.classes()];
        for px in self.0.pixel_iter() {
            for (m, v) in masses.iter_mut().zip(px) {
                *m += v;
            }
        }
        masses
    }
}

impl AsRef<Raster> for SoftSegmentation {
    fn as_ref(&self) -> &Raster {
        &self.0
    }
}

/// Hard per-pixel class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ZeroDimension(format!("label map {height}x{width}")));
        }
        if labels.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::InvalidLabel {
                label,
                index,
                classes,
            });
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x]
    }

    /// Indicator of one class as a boolean mask in row-major order.
    pub fn mask(&self, class: usize) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }

    /// Number of 4-connected neighbour pairs carrying different labels.
    pub fn boundary_edges(&self) -> usize {
        let mut count = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.get(y, x);
                if x + 1 < self.width && self.get(y, x + 1) != l {
                    count += 1;
                }
                if y + 1 < self.height && self.get(y + 1, x) != l {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Hard prediction: per pixel, the smallest class index attaining the maximum.
pub fn argmax_predict(u: &SoftSegmentation) -> LabelMap {
    let r = u.raster();
    let labels = r
        .pixel_iter()
        .map(|px| {
            let mut best = 0;
            for (i, &v) in px.iter().enumerate().skip(1) {
                if v > px[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    LabelMap {
        height: r.height(),
        width: r.width(),
        classes: r.channels(),
        labels,
    }
}
