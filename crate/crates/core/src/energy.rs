//! Scalar energies of the soft threshold dynamics model and the softmax /
//! log-sum-exp pair they are built from.
//!
//! With features `o`, soft segmentation `u`, entropy weight `eps`, kernel `k`
//! and weight field `e`, the model energy is
//!
//! ```text
//! E(u) = <-o, u> + eps <u, ln u> + lambda <e u, k * (1 - u)>
//! ```
//!
//! All sums run over pixels with unit area.

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::kernels::{depthwise_conv, grad, KernelSpec};
use crate::raster::{FeatureMap, Raster, SoftSegmentation};

/// Floor applied before taking `ln u` in the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Weight field `e` of the regularizer.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Weight {
    /// `e = 1` everywhere.
    #[default]
    Uniform,
    /// Single-channel nonnegative field.
    Field(Raster),
}

impl Weight {
    pub fn field(e: Raster) -> Result<Self> {
        if e.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "weight field must be single-channel, got {} channels",
                e.channels()
            )));
        }
        if e.data().iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidConfig(
                "weight field must be nonnegative".into(),
            ));
        }
        Ok(Weight::Field(e))
    }

    pub(crate) fn check(&self, height: usize, width: usize) -> Result<()> {
        match self {
            Weight::Uniform => Ok(()),
            Weight::Field(e) if e.height() == height && e.width() == width => Ok(()),
            Weight::Field(e) => Err(Error::ShapeMismatch(format!(
                "weight field {}x{} vs image {height}x{width}",
                e.height(),
                e.width()
            ))),
        }
    }

    #[inline]
    fn at(&self, pixel: usize) -> f64 {
        match self {
            Weight::Uniform => 1.0,
            Weight::Field(e) => e.data()[pixel],
        }
    }
}

/// `eps * ln(sum_i exp(o_i / eps))`, shifted by the maximum for stability.
pub fn logsumexp(scores: &[f64], epsilon: f64) -> f64 {
    assert!(!scores.is_empty());
    let (imax, &max) = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let rest: f64 = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != imax)
        .map(|(_, &o)| ((o - max) / epsilon).exp())
        .sum();
    max + epsilon * rest.ln_1p()
}

/// Writes `softmax(scores / eps)` into `out`.
#[inline]
pub(crate) fn softmax_into(scores: &[f64], epsilon: f64, out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = ((s - max) / epsilon).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Per-pixel `softmax(arg / eps)` of an arbitrary multi-channel field.
pub(crate) fn softmax_field(arg: &Raster, epsilon: f64) -> SoftSegmentation {
    let c = arg.channels();
    let mut data = vec![0.0; arg.data().len()];
    for (out, px) in data.chunks_exact_mut(c).zip(arg.pixel_iter()) {
        softmax_into(px, epsilon, out);
    }
    SoftSegmentation::from_raster_unchecked(Raster::from_parts(arg.height(), arg.width(), c, data))
}

/// Per-pixel `u_i = exp(o_i / eps) / sum_j exp(o_j / eps)`.
pub fn softmax(scores: &FeatureMap, epsilon: f64) -> SoftSegmentation {
    softmax_field(scores.raster(), epsilon)
}

/// `<-o, u>`
pub fn data_term(u: &SoftSegmentation, o: &FeatureMap) -> f64 {
    -u.raster().dot(o.raster())
}

/// `eps * <u, ln u>` with `0 ln 0 = 0`.
pub fn entropy_term(u: &SoftSegmentation, epsilon: f64) -> f64 {
    let s: f64 = u
        .raster()
        .data()
        .iter()
        .map(|&v| {
            if v == 0.0 {
                0.0
            } else {
                v * v.max(ENTROPY_FLOOR).ln()
            }
        })
        .sum();
    epsilon * s
}

/// `<-o, u> + eps <u, ln u>`
pub fn fidelity(u: &SoftSegmentation, o: &FeatureMap, epsilon: f64) -> f64 {
    data_term(u, o) + entropy_term(u, epsilon)
}

fn check_shapes(u: &SoftSegmentation, o: &FeatureMap) -> Result<()> {
    u.raster()
        .check_same_shape(o.raster(), "segmentation vs features")
}

/// `lambda * sum_i sum_x e(x) u_i(x) (k * (1 - u_i))(x)`
pub fn regularizer(u: &SoftSegmentation, kernel: &KernelSpec, e: &Weight, lambda: f64) -> f64 {
    let r = u.raster();
    if lambda == 0.0 {
        return 0.0;
    }
    let smoothed = depthwise_conv(&r.map(|v| 1.0 - v), kernel);
    let mut s = 0.0;
    for (p, (px, kpx)) in r.pixel_iter().zip(smoothed.pixel_iter()).enumerate() {
        let w = e.at(p);
        let local: f64 = px.iter().zip(kpx).map(|(a, b)| a * b).sum();
        s += w * local;
    }
    lambda * s
}

/// Gradient of the regularizer: `p = lambda ((k * (1 - u)) e - k * (e u))`.
///
/// For `e = 1` this is `lambda k * (1 - 2u)`.
pub fn subgradient_p(u: &SoftSegmentation, kernel: &KernelSpec, e: &Weight, lambda: f64) -> Raster {
    let r = u.raster();
    match e {
        Weight::Uniform => {
            let mut p = depthwise_conv(&r.map(|v| 1.0 - 2.0 * v), kernel);
            p.data_mut().iter_mut().for_each(|v| *v *= lambda);
            p
        }
        Weight::Field(w) => {
            let c = r.channels();
            let smooth_comp = depthwise_conv(&r.map(|v| 1.0 - v), kernel);
            let mut weighted = r.clone();
            for (p, px) in weighted.data_mut().chunks_exact_mut(c).enumerate() {
                let wp = w.data()[p];
                px.iter_mut().for_each(|v| *v *= wp);
            }
            let smooth_weighted = depthwise_conv(&weighted, kernel);
            let mut out = smooth_comp;
            for (p, (px, sw)) in out
                .data_mut()
                .chunks_exact_mut(c)
                .zip(smooth_weighted.pixel_iter())
                .enumerate()
            {
                let wp = w.data()[p];
                for (v, s) in px.iter_mut().zip(sw) {
                    *v = lambda * (*v * wp - s);
                }
            }
            out
        }
    }
}

/// Energy split into its parts; `total` is their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParts {
    /// `<-o, u>`
    pub fidelity: f64,
    /// `eps <u, ln u>`
    pub entropy: f64,
    pub regularizer: f64,
    pub total: f64,
}

pub fn total_energy(
    u: &SoftSegmentation,
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
) -> Result<EnergyParts> {
    check_shapes(u, o)?;
    e.check(u.raster().height(), u.raster().width())?;
    let fidelity = data_term(u, o);
    let entropy = entropy_term(u, config.epsilon);
    let regularizer = regularizer(u, kernel, e, config.lambda);
    Ok(EnergyParts {
        fidelity,
        entropy,
        regularizer,
        total: fidelity + entropy + regularizer,
    })
}

/// Dual objective of the volume-constrained linearized subproblem:
/// `sum_i q_i V_i - sum_x M_eps(o(x) - p(x) + q) - N eps`.
///
/// The constant `-N eps` matches the entropy written as `eps <u, ln u - 1>`;
/// against [`vp_primal_objective`], which uses `eps <u, ln u>`, strong duality
/// therefore holds up to exactly `N eps` (see [`vp_duality_gap`]).
pub fn vp_dual_objective(
    q: &[f64],
    o: &FeatureMap,
    p: &Raster,
    volumes: &[f64],
    epsilon: f64,
) -> f64 {
    let r = o.raster();
    let c = r.channels();
    assert_eq!(q.len(), c);
    assert_eq!(volumes.len(), c);
    assert!(p.same_shape(r));
    let mut arg = vec![0.0; c];
    let mut conj = 0.0;
    for (ox, px) in r.pixel_iter().zip(p.pixel_iter()) {
        for i in 0..c {
            arg[i] = ox[i] - px[i] + q[i];
        }
        conj += logsumexp(&arg, epsilon);
    }
    let linear: f64 = q.iter().zip(volumes).map(|(a, b)| a * b).sum();
    linear - conj - r.pixels() as f64 * epsilon
}

/// Primal objective of the linearized subproblem: `F(u; o) + <u, p>`.
pub fn vp_primal_objective(u: &SoftSegmentation, o: &FeatureMap, p: &Raster, epsilon: f64) -> f64 {
    fidelity(u, o, epsilon) + u.raster().dot(p)
}

/// Primal minus dual, with the primal entropy taken as `eps <u, ln u - 1>`
/// (that is, [`vp_primal_objective`] minus `eps * sum(u)`), which is the
/// convention [`vp_dual_objective`] is exact for. Nonnegative for feasible
/// `u`, zero at the optimum.
pub fn vp_duality_gap(
    u: &SoftSegmentation,
    q: &[f64],
    o: &FeatureMap,
    p: &Raster,
    volumes: &[f64],
    epsilon: f64,
) -> f64 {
    let mass: f64 = u.raster().data().iter().sum();
    vp_primal_objective(u, o, p, epsilon)
        - epsilon * mass
        - vp_dual_objective(q, o, p, volumes, epsilon)
}

/// Edge indicator `e(x) = 1 / (1 + |grad v(x)|)`, channel gradients combined
/// in the Euclidean norm.
pub fn edge_weight(image: &Raster) -> Raster {
    let (h, w, c) = image.shape();
    let mut sq = vec![0.0; h * w];
    for ch in 0..c {
        let g = grad(&image.channel(ch));
        for (s, (gy, gx)) in sq.iter_mut().zip(g.y.data().iter().zip(g.x.data())) {
            *s += gy * gy + gx * gx;
        }
    }
    Raster::from_parts(
        h,
        w,
        1,
        sq.into_iter().map(|s| 1.0 / (1.0 + s.sqrt())).collect(),
    )
}
