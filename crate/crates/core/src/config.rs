use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `sum(volumes) == height * width`.
pub const VOLUME_SUM_RTOL: f64 = 1e-9;

/// Parameters shared by the STD, VP-STD and SS-STD solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Entropy weight.
    pub epsilon: f64,
    /// Regularization weight.
    pub lambda: f64,
    /// Outer iteration budget.
    pub outer_iters: usize,
    /// Dual updates per outer iteration for the volume-preserving solver.
    pub inner_iters: usize,
    /// Convergence threshold on `max |u_new - u_old|`.
    pub tol: f64,
    /// Target mass of each class in pixels.
    pub volumes: Option<Vec<f64>>,
    /// Star-shape center as `(y, x)`.
    pub star_center: Option<(usize, usize)>,
    /// Class that must be star-shaped with respect to `star_center`.
    pub star_class: Option<usize>,
    /// Star-shape dual step; `None` means `epsilon`.
    pub tau_q: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            lambda: 1.0,
            outer_iters: 10,
            inner_iters: 1,
            tol: 1e-4,
            volumes: None,
            star_center: None,
            star_class: None,
            tau_q: None,
        }
    }
}

impl SolverConfig {
    pub fn new(epsilon: f64, lambda: f64) -> Self {
        Self {
            epsilon,
            lambda,
            ..Self::default()
        }
    }

    pub fn with_iters(mut self, outer_iters: usize) -> Self {
        self.outer_iters = outer_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_volumes(mut self, volumes: Vec<f64>, inner_iters: usize) -> Self {
        self.volumes = Some(volumes);
        self.inner_iters = inner_iters;
        self
    }

    /// Star-shape prior on `class` around `center`; also switches the outer
    /// budget to the 50 sublayers used for the star-shape block.
    pub fn with_star(mut self, center: (usize, usize), class: usize) -> Self {
        self.star_center = Some(center);
        self.star_class = Some(class);
        self.outer_iters = 50;
        self
    }

    pub fn tau_q(&self) -> f64 {
        self.tau_q.unwrap_or(self.epsilon)
    }

    /// Checks the scalar parameters and any optional volume/star fields
    /// against an image of the given size.
    pub fn validate(&self, height: usize, width: usize, classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "at least 2 classes required, got {classes}"
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidConfig("inner_iters must be positive".into()));
        }
        if let Some(tau) = self.tau_q {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "tau_q must be nonnegative, got {tau}"
                )));
            }
        }
        if let Some(volumes) = &self.volumes {
            validate_volumes(volumes, height * width, classes)?;
        }
        match (self.star_center, self.star_class) {
            (Some((cy, cx)), Some(class)) => {
                if cy >= height || cx >= width {
                    return Err(Error::InvalidConfig(format!(
                        "star center ({cy}, {cx}) outside {height}x{width} image"
                    )));
                }
                if class >= classes {
                    return Err(Error::InvalidConfig(format!(
                        "star class {class} out of range for {classes} classes"
                    )));
                }
            }
            (Some(_), None) => {
                return Err(Error::InvalidConfig(
                    "star center given without a star class".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidConfig(
                    "star class given without a star center".into(),
                ))
            }
            (None, None) => {}
        }
        Ok(())
    }
}

pub(crate) fn validate_volumes(volumes: &[f64], pixels: usize, classes: usize) -> Result<()> {
    if volumes.len() != classes {
        return Err(Error::InvalidConfig(format!(
            "{} volumes given for {classes} classes",
            volumes.len()
        )));
    }
    if let Some(v) = volumes.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "volumes must be positive, got {v}"
        )));
    }
    let total: f64 = volumes.iter().sum();
    let n = pixels as f64;
    if (total - n).abs() > VOLUME_SUM_RTOL * n {
        return Err(Error::InvalidConfig(format!(
            "volumes sum to {total}, expected {n}"
        )));
    }
    Ok(())
}

/// Converts class fractions into integer pixel counts summing to `pixels`.
///
/// Each fraction is rounded to the nearest count; any remainder is absorbed by
/// the largest class.
pub fn volumes_from_fractions(fractions: &[f64], pixels: usize) -> Result<Vec<f64>> {
    if fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::InvalidConfig(
            "volume fractions must be positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidConfig(format!(
            "volume fractions sum to {total}, expected 1"
        )));
    }
    let mut counts: Vec<i64> = fractions
        .iter()
        .map(|f| (f * pixels as f64).round() as i64)
        .collect();
    let largest = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let diff = pixels as i64 - counts.iter().sum::<i64>();
    counts[largest] += diff;
    if counts.iter().any(|&c| c <= 0) {
        return Err(Error::InvalidConfig(
            "volume fractions round to an empty class".into(),
        ));
    }
    Ok(counts.into_iter().map(|c| c as f64).collect())
}
