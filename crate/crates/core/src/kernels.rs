//! The frozen Gaussian kernel, depthwise convolution and the discrete
//! gradient/divergence pair.
//!
//! Convolution extends the field by half-sample symmetric reflection
//! (`... c b a | a b c | c b a ...`). With a 180°-symmetric kernel this makes the
//! operator self-adjoint and exactly preserves constant fields, for any kernel
//! radius relative to the image size.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Images with at least this many pixels are convolved in parallel over rows.
const PAR_MIN_PIXELS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl KernelSpec {
    /// Default regularizer kernel: 7x7, sigma = 5.
    pub fn default_gaussian() -> Self {
        make_gaussian(7, 5.0).expect("valid default kernel")
    }

    /// Wraps arbitrary weights (row-major, `size * size`).
    ///
    /// Weights must be nonnegative, 180°-symmetric and sum to 1 within 1e-12.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("size {size} is not odd")));
        }
        if weights.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidKernel(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let n = weights.len();
        if (0..n).any(|i| weights[i] != weights[n - 1 - i]) {
            return Err(Error::InvalidKernel(
                "weights are not 180-degree symmetric".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!("weights sum to {sum}")));
        }
        Ok(Self {
            size,
            sigma: f64::NAN,
            weights,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Standard deviation for Gaussian kernels; NaN for kernels built from raw weights.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }
}

/// Sampled Gaussian `exp(-((i-m)^2 + (j-m)^2) / (2 sigma^2))`, normalized to sum 1.
pub fn make_gaussian(size: usize, sigma: f64) -> Result<KernelSpec> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!(
            "size must be odd and positive, got {size}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidKernel(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let m = (size / 2) as f64;
    let denom = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - m, j as f64 - m);
            weights.push((-(di * di + dj * dj) / denom).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(KernelSpec {
        size,
        sigma,
        weights,
    })
}

/// Maps a possibly out-of-range coordinate onto `0..n` by half-sample
/// symmetric reflection (period `2n`).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period) as usize;
    if r < n {
        r
    } else {
        2 * n - 1 - r
    }
}

/// Convolves every channel independently with `kernel`.
///
/// Each output pixel is accumulated in a fixed kernel order, so the result is
/// bitwise independent of the number of worker threads.
pub fn depthwise_conv(field: &Raster, kernel: &KernelSpec) -> Raster {
    let (h, w, c) = field.shape();
    let size = kernel.size();
    let r = kernel.radius() as isize;
    // precomputed reflected indices for every output row/column and tap
    let rows: Vec<usize> = (0..h as isize)
        .flat_map(|y| (0..size as isize).map(move |k| reflect(y + k - r, h)))
        .collect();
    let cols: Vec<usize> = (0..w as isize)
        .flat_map(|x| (0..size as isize).map(move |k| reflect(x + k - r, w)))
        .collect();
    let src = field.data();
    let weights = kernel.weights();

    let row_len = w * c;
    let compute_row = |y: usize, out: &mut [f64]| {
        let row_taps = &rows[y * size..(y + 1) * size];
        for x in 0..w {
            let col_taps = &cols[x * size..(x + 1) * size];
            let dst = &mut out[x * c..(x + 1) * c];
            dst.fill(0.0);
            for (ki, &sy) in row_taps.iter().enumerate() {
                let krow = &weights[ki * size..(ki + 1) * size];
                let srow = &src[sy * row_len..(sy + 1) * row_len];
                for (&kw, &sx) in krow.iter().zip(col_taps) {
                    let s = &srow[sx * c..(sx + 1) * c];
                    for (d, v) in dst.iter_mut().zip(s) {
                        *d += kw * v;
                    }
                }
            }
        }
    };

    let mut out = vec![0.0; h * row_len];
    if h * w >= PAR_MIN_PIXELS {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| compute_row(y, row));
    } else {
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(y, row)| compute_row(y, row));
    }
    Raster::from_parts(h, w, c, out)
}

/// Pair of single-channel component fields `(y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub y: Raster,
    pub x: Raster,
}

impl VectorField {
    pub fn new(y: Raster, x: Raster) -> Result<Self> {
        if y.channels() != 1 || !y.same_shape(&x) {
            return Err(Error::ShapeMismatch(format!(
                "vector field components {:?} and {:?}",
                y.shape(),
                x.shape()
            )));
        }
        Ok(Self { y, x })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            y: Raster::zeros(height, width, 1),
            x: Raster::zeros(height, width, 1),
        }
    }

    pub fn height(&self) -> usize {
        self.y.height()
    }

    pub fn width(&self) -> usize {
        self.y.width()
    }

    /// Sum of component-wise products.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.y.dot(&other.y) + self.x.dot(&other.x)
    }

    /// Pointwise `<self(p), other(p)>` as a single-channel raster.
    pub fn pointwise_dot(&self, other: &VectorField) -> Raster {
        let y = self.y.zip_map(&other.y, |a, b| a * b);
        y.zip_map(&self.x.zip_map(&other.x, |a, b| a * b), |a, b| a + b)
    }

    /// Scales both components by a single-channel field.
    pub fn scaled_by(&self, s: &Raster) -> VectorField {
        VectorField {
            y: self.y.zip_map(s, |a, b| a * b),
            x: self.x.zip_map(s, |a, b| a * b),
        }
    }
}

/// Forward differences with a zero derivative in the last row/column.
pub fn grad(field: &Raster) -> VectorField {
    assert_eq!(field.channels(), 1, "grad expects a single-channel field");
    let (h, w, _) = field.shape();
    let mut gy = vec![0.0; h * w];
    let mut gx = vec![0.0; h * w];
    let u = field.data();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if y + 1 < h {
                gy[i] = u[i + w] - u[i];
            }
            if x + 1 < w {
                gx[i] = u[i + 1] - u[i];
            }
        }
    }
    VectorField {
        y: Raster::from_parts(h, w, 1, gy),
        x: Raster::from_parts(h, w, 1, gx),
    }
}

/// Backward differences forming the negative adjoint of [`grad`]:
/// `<grad u, v> = -<u, div v>`.
pub fn div(v: &VectorField) -> Raster {
    let (h, w) = (v.height(), v.width());
    let vy = v.y.data();
    let vx = v.x.data();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut d = 0.0;
            if y + 1 < h {
                d += vy[i];
            }
            if y > 0 {
                d -= vy[i - w];
            }
            if x + 1 < w {
                d += vx[i];
            }
            if x > 0 {
                d -= vx[i - 1];
            }
            out[i] = d;
        }
    }
    Raster::from_parts(h, w, 1, out)
}
