//! Reverse-mode derivative of the unrolled STD solver with respect to the
//! input features, and a central finite-difference oracle.
//!
//! The forward map runs a fixed number `T` of STD steps from `u0 = S(o)`:
//!
//! ```text
//! u_{t+1} = S((o - p(u_t)) / eps),   p(u) = lambda ((k * (1 - u)) e - k * (e u))
//! ```
//!
//! `p` is affine in `u` and the symmetric kernel makes convolution
//! self-adjoint, so the backward pass through each step is
//!
//! ```text
//! z_bar  = (1/eps) J_S(u_{t+1})^T u_bar_{t+1}      (accumulated into o_bar)
//! u_bar_t = lambda (k * (e z_bar) + e (k * z_bar))
//! ```
//!
//! followed by the unit-temperature softmax Jacobian for `u0`.

use crate::config::SolverConfig;
use crate::energy::{softmax, Weight};
use crate::error::{Error, Result};
use crate::kernels::{depthwise_conv, KernelSpec};
use crate::raster::{FeatureMap, Raster, SoftSegmentation};
use crate::solvers::std_step;

/// Intermediate iterates of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Tape {
    /// `u0 ... u_{T-1}`, the inputs of each unrolled step.
    pub iterates: Vec<SoftSegmentation>,
    output: SoftSegmentation,
    epsilon: f64,
    lambda: f64,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn output(&self) -> &SoftSegmentation {
        &self.output
    }
}

/// Runs exactly `config.outer_iters` STD steps, recording every iterate.
pub fn std_forward_taped(
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
) -> Result<(SoftSegmentation, Tape)> {
    let r = o.raster();
    config.validate(r.height(), r.width(), r.channels())?;
    e.check(r.height(), r.width())?;
    let mut u = softmax(o, 1.0);
    let mut iterates = Vec::with_capacity(config.outer_iters);
    for _ in 0..config.outer_iters {
        let next = std_step(&u, o, kernel, e, config)?;
        iterates.push(std::mem::replace(&mut u, next));
    }
    let tape = Tape {
        iterates,
        output: u.clone(),
        epsilon: config.epsilon,
        lambda: config.lambda,
    };
    Ok((u, tape))
}

/// Per-pixel `J_S(u)^T g / eps` where `J_S = diag(u) - u u^T`.
fn softmax_vjp(u: &SoftSegmentation, g: &Raster, epsilon: f64) -> Raster {
    let ur = u.raster();
    let c = ur.channels();
    let mut out = vec![0.0; ur.data().len()];
    for ((dst, up), gp) in out
        .chunks_exact_mut(c)
        .zip(ur.pixel_iter())
        .zip(g.pixel_iter())
    {
        let inner: f64 = up.iter().zip(gp).map(|(a, b)| a * b).sum();
        for ((d, &ui), &gi) in dst.iter_mut().zip(up).zip(gp) {
            *d = ui * (gi - inner) / epsilon;
        }
    }
    Raster::from_parts(ur.height(), ur.width(), c, out)
}

/// `-(dp/du)^T w = lambda (k * (e w) + e (k * w))`.
fn neg_p_adjoint(w: &Raster, kernel: &KernelSpec, e: &Weight, lambda: f64) -> Raster {
    match e {
        Weight::Uniform => depthwise_conv(w, kernel).map(|v| 2.0 * lambda * v),
        Weight::Field(ef) => {
            let c = w.channels();
            let scale = |r: &Raster| {
                let mut out = r.clone();
                for (px, &ev) in out.data_mut().chunks_exact_mut(c).zip(ef.data()) {
                    px.iter_mut().for_each(|v| *v *= ev);
                }
                out
            };
            let a = depthwise_conv(&scale(w), kernel);
            let b = scale(&depthwise_conv(w, kernel));
            a.zip_map(&b, |x, y| lambda * (x + y))
        }
    }
}

/// Vector-Jacobian product `(du/do)^T cotangent` of the unrolled solver.
pub fn std_vjp(
    tape: &Tape,
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
    cotangent: &Raster,
) -> Result<Raster> {
    let r = o.raster();
    if tape.len() != config.outer_iters {
        return Err(Error::TapeMismatch(format!(
            "tape has {} steps, config asks for {}",
            tape.len(),
            config.outer_iters
        )));
    }
    if tape.epsilon != config.epsilon || tape.lambda != config.lambda {
        return Err(Error::TapeMismatch(
            "tape was recorded with a different epsilon or lambda".into(),
        ));
    }
    if !tape.output.raster().same_shape(r) {
        return Err(Error::TapeMismatch(format!(
            "tape shape {:?} vs features {:?}",
            tape.output.raster().shape(),
            r.shape()
        )));
    }
    cotangent.check_same_shape(r, "cotangent vs features")?;
    e.check(r.height(), r.width())?;

    let mut o_bar = Raster::zeros(r.height(), r.width(), r.channels());
    let mut u_bar = cotangent.clone();
    for t in (0..tape.len()).rev() {
        let u_next = if t + 1 < tape.len() {
            &tape.iterates[t + 1]
        } else {
            &tape.output
        };
        let z_bar = softmax_vjp(u_next, &u_bar, config.epsilon);
        o_bar = o_bar.zip_map(&z_bar, |a, b| a + b);
        u_bar = neg_p_adjoint(&z_bar, kernel, e, config.lambda);
    }
    let u0 = tape.iterates.first().unwrap_or(&tape.output);
    let init = softmax_vjp(u0, &u_bar, 1.0);
    Ok(o_bar.zip_map(&init, |a, b| a + b))
}

/// Central-difference gradient of a scalar function of the features.
pub fn fd_gradient(probe: impl Fn(&FeatureMap) -> f64, o: &FeatureMap, tau: f64) -> Raster {
    assert!(tau > 0.0, "step must be positive");
    let base = o.raster();
    let mut grad = Vec::with_capacity(base.data().len());
    for i in 0..base.data().len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus.data_mut()[i] += tau;
        minus.data_mut()[i] -= tau;
        let fp = probe(&FeatureMap::new(plus).expect("same channel count"));
        let fm = probe(&FeatureMap::new(minus).expect("same channel count"));
        grad.push((fp - fm) / (2.0 * tau));
    }
    Raster::from_parts(base.height(), base.width(), base.channels(), grad)
}

/// Agreement between [`std_vjp`] and [`fd_gradient`] on one instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_abs_err: f64,
    /// `max |vjp - fd| / max |fd|`, the largest entrywise error relative to
    /// the scale of the gradient.
    pub max_rel_err: f64,
}

/// Compares the reverse pass against central differences of the probe
/// `o -> <cotangent, u(o)>`.
pub fn gradcheck(
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
    cotangent: &Raster,
    tau: f64,
) -> Result<GradCheck> {
    let (_, tape) = std_forward_taped(o, kernel, e, config)?;
    let analytic = std_vjp(&tape, o, kernel, e, config, cotangent)?;
    let probe = |f: &FeatureMap| {
        let (u, _) = std_forward_taped(f, kernel, e, config).expect("validated above");
        u.raster().dot(cotangent)
    };
    let numeric = fd_gradient(probe, o, tau);
    let max_abs_err = analytic.max_abs_diff(&numeric);
    let scale = numeric.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let max_rel_err = if scale > 0.0 {
        max_abs_err / scale
    } else {
        max_abs_err
    };
    Ok(GradCheck {
        max_abs_err,
        max_rel_err,
    })
}
