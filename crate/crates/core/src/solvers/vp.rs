use crate::config::{validate_volumes, SolverConfig};
use crate::energy::{softmax, softmax_field, subgradient_p, Weight};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::raster::{FeatureMap, Raster, SoftSegmentation};
use crate::trace::EnergyTrace;

use super::std_td::shifted_scores;
use super::{check_inputs, energy_record, max_delta, DualState, SolveResult};

/// `S((o - p + q) / eps)` with one scalar multiplier per class.
fn volume_softmax(o: &FeatureMap, p: &Raster, q: &[f64], epsilon: f64) -> SoftSegmentation {
    let mut arg = shifted_scores(o, p);
    let c = arg.channels();
    for px in arg.data_mut().chunks_exact_mut(c) {
        for (v, qi) in px.iter_mut().zip(q) {
            *v += qi;
        }
    }
    softmax_field(&arg, epsilon)
}

fn volume_error(u: &SoftSegmentation, volumes: &[f64]) -> f64 {
    u.class_masses()
        .iter()
        .zip(volumes)
        .map(|(m, v)| (m - v).abs() / v)
        .fold(0.0, f64::max)
}

/// One ascent step on the volume multipliers:
/// `q_i += eps (ln V_i - ln sum_x S((o - p + q) / eps)_i(x))`.
pub fn vp_q_update(
    q: &[f64],
    o: &FeatureMap,
    p: &Raster,
    volumes: &[f64],
    epsilon: f64,
) -> Result<Vec<f64>> {
    let r = o.raster();
    p.check_same_shape(r, "subgradient vs features")?;
    if q.len() != r.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{} multipliers for {} classes",
            q.len(),
            r.channels()
        )));
    }
    validate_volumes(volumes, r.pixels(), r.channels())?;
    let masses = volume_softmax(o, p, q, epsilon).class_masses();
    if let Some(class) = masses.iter().position(|&m| m.is_nan() || m <= 0.0) {
        return Err(Error::ZeroMass { class });
    }
    Ok(q.iter()
        .zip(volumes.iter().zip(&masses))
        .map(|(qi, (v, m))| qi + epsilon * (v.ln() - m.ln()))
        .collect())
}

/// Volume-preserving STD. The multipliers start at zero and are carried
/// across outer iterations.
pub fn vp_solve(
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
) -> Result<SolveResult> {
    check_inputs(o, e, config)?;
    let volumes = config
        .volumes
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("volume-preserving solver needs volumes".into()))?;
    let eps = config.epsilon;

    let mut u = softmax(o, 1.0);
    let mut q = vec![0.0; o.classes()];
    let mut trace = EnergyTrace::default();
    let mut rec = energy_record(0, &u, o, kernel, e, config, 0.0)?;
    rec.volume_err = Some(volume_error(&u, volumes));
    trace.push(rec);

    let mut converged = false;
    let mut iterations_used = 0;
    for t in 1..=config.outer_iters {
        let p = subgradient_p(&u, kernel, e, config.lambda);
        for _ in 0..config.inner_iters {
            q = vp_q_update(&q, o, &p, volumes, eps)?;
        }
        let next = volume_softmax(o, &p, &q, eps);
        let delta = max_delta(&next, &u);
        u = next;
        iterations_used = t;
        let mut rec = energy_record(t, &u, o, kernel, e, config, delta)?;
        rec.volume_err = Some(volume_error(&u, volumes));
        trace.push(rec);
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        u,
        trace,
        converged,
        iterations_used,
        duals: DualState {
            q_vp: Some(q),
            q_ss: None,
        },
    })
}
