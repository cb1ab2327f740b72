//! Iterative soft threshold dynamics solvers.
//!
//! All three solvers start from the classical softmax `u0 = S(o)` (unit
//! temperature) and then alternate a linearization of the regularizer around
//! the current iterate with a closed-form softmax update:
//!
//! * [`std_solve`]: plain STD, `u <- S((o - p(u)) / eps)`.
//! * [`vp_solve`]: volume-preserving STD, with per-class multipliers `q`
//!   updated by logarithmic Sinkhorn-type ascent steps.
//! * [`ss_solve`]: star-shape STD, with a nonnegative multiplier field on
//!   the constraint `<grad u_i, s> >= 0`.

mod ss;
mod std_td;
mod vp;

pub use ss::{ss_q_update, ss_solve, star_field};
pub use std_td::{std_solve, std_step};
pub use vp::{vp_q_update, vp_solve};

use crate::config::SolverConfig;
use crate::energy::{total_energy, Weight};
use crate::error::Result;
use crate::kernels::KernelSpec;
use crate::raster::{FeatureMap, Raster, SoftSegmentation};
use crate::trace::{EnergyTrace, TraceRecord};

/// Dual variables carried by the constrained solvers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualState {
    /// Per-class volume multipliers.
    pub q_vp: Option<Vec<f64>>,
    /// Star-shape multiplier field, nonnegative.
    pub q_ss: Option<Raster>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub u: SoftSegmentation,
    /// One record per iterate, starting with `u0`.
    pub trace: EnergyTrace,
    pub converged: bool,
    pub iterations_used: usize,
    pub duals: DualState,
}

pub(crate) fn max_delta(a: &SoftSegmentation, b: &SoftSegmentation) -> f64 {
    a.raster().max_abs_diff(b.raster())
}

pub(crate) fn energy_record(
    iter: usize,
    u: &SoftSegmentation,
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
    max_delta_u: f64,
) -> Result<TraceRecord> {
    let parts = total_energy(u, o, kernel, e, config)?;
    Ok(TraceRecord {
        iter,
        fidelity: parts.fidelity,
        entropy: parts.entropy,
        regularizer: parts.regularizer,
        total: parts.total,
        max_delta_u,
        volume_err: None,
        ss_violations: None,
    })
}

pub(crate) fn check_inputs(o: &FeatureMap, e: &Weight, config: &SolverConfig) -> Result<()> {
    let r = o.raster();
    config.validate(r.height(), r.width(), r.channels())?;
    e.check(r.height(), r.width())
}
