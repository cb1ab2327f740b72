use crate::config::SolverConfig;
use crate::energy::{softmax, softmax_field, subgradient_p, Weight};
use crate::error::{Error, Result};
use crate::kernels::{div, grad, KernelSpec, VectorField};
use crate::metrics::soft_star_violations;
use crate::raster::{FeatureMap, Raster};
use crate::trace::EnergyTrace;

use super::std_td::shifted_scores;
use super::{check_inputs, energy_record, max_delta, DualState, SolveResult};

/// Unit field pointing from each pixel toward `center`; zero at the center.
pub fn star_field(center: (usize, usize), height: usize, width: usize) -> Result<VectorField> {
    if center.0 >= height || center.1 >= width {
        return Err(Error::InvalidConfig(format!(
            "center ({}, {}) outside {height}x{width} image",
            center.0, center.1
        )));
    }
    let (cy, cx) = (center.0 as f64, center.1 as f64);
    let mut sy = Raster::zeros(height, width, 1);
    let mut sx = Raster::zeros(height, width, 1);
    for y in 0..height {
        for x in 0..width {
            let (dy, dx) = (cy - y as f64, cx - x as f64);
            let n = dy.hypot(dx);
            if n > 0.0 {
                sy.set(y, x, 0, dy / n);
                sx.set(y, x, 0, dx / n);
            }
        }
    }
    VectorField::new(sy, sx)
}

/// Projected ascent on the star-shape multiplier:
/// `q <- max(q - tau_q <s, grad u_i>, 0)`.
pub fn ss_q_update(q: &Raster, u_i: &Raster, s: &VectorField, tau_q: f64) -> Result<Raster> {
    q.check_same_shape(u_i, "multiplier vs segmentation channel")?;
    q.check_same_shape(&s.y, "multiplier vs star field")?;
    let directional = s.pointwise_dot(&grad(u_i));
    Ok(q.zip_map(&directional, |qv, d| (qv - tau_q * d).max(0.0)))
}

/// Star-shape STD on class `config.star_class` around `config.star_center`.
///
/// Each outer iteration updates the multiplier field from the current
/// iterate, then solves the linearized problem with the penalty
/// `div(q s)` subtracted from the star class's scores.
pub fn ss_solve(
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
) -> Result<SolveResult> {
    check_inputs(o, e, config)?;
    let (center, class) = match (config.star_center, config.star_class) {
        (Some(c), Some(i)) => (c, i),
        _ => {
            return Err(Error::InvalidConfig(
                "star-shape solver needs a center and a star class".into(),
            ))
        }
    };
    let r = o.raster();
    let (h, w, c) = r.shape();
    let s = star_field(center, h, w)?;
    let tau = config.tau_q();

    let mut u = softmax(o, 1.0);
    let mut q = Raster::zeros(h, w, 1);
    let mut trace = EnergyTrace::default();
    let mut rec = energy_record(0, &u, o, kernel, e, config, 0.0)?;
    rec.ss_violations = Some(soft_star_violations(&u, class, center));
    trace.push(rec);

    let mut converged = false;
    let mut iterations_used = 0;
    for t in 1..=config.outer_iters {
        q = ss_q_update(&q, &u.raster().channel(class), &s, tau)?;
        let penalty = div(&s.scaled_by(&q));
        let p = subgradient_p(&u, kernel, e, config.lambda);
        let mut arg = shifted_scores(o, &p);
        for (px, d) in arg.data_mut().chunks_exact_mut(c).zip(penalty.data()) {
            px[class] -= d;
        }
        let next = softmax_field(&arg, config.epsilon);
        let delta = max_delta(&next, &u);
        u = next;
        iterations_used = t;
        let mut rec = energy_record(t, &u, o, kernel, e, config, delta)?;
        rec.ss_violations = Some(soft_star_violations(&u, class, center));
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
            q_vp: None,
            q_ss: Some(q),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_field_examples() {
        let s = star_field((3, 4), 6, 6).unwrap();
        assert_eq!(s.y.get(3, 4, 0), 0.0);
        assert_eq!(s.x.get(3, 4, 0), 0.0);
        assert!((s.y.get(0, 0, 0) - 0.6).abs() < 1e-15);
        assert!((s.x.get(0, 0, 0) - 0.8).abs() < 1e-15);
        for y in 0..6 {
            for x in 0..6 {
                if (y, x) != (3, 4) {
                    let n = s.y.get(y, x, 0).hypot(s.x.get(y, x, 0));
                    assert!((n - 1.0).abs() < 1e-15);
                }
            }
        }
        assert!(star_field((6, 0), 6, 6).is_err());
    }

    #[test]
    fn q_update_constant_field() {
        let s = star_field((2, 2), 5, 5).unwrap();
        let q = Raster::from_fn(5, 5, 1, |y, x, _| (y * x) as f64 * 0.1);
        let next = ss_q_update(&q, &Raster::filled(5, 5, 1, 0.7), &s, 0.3).unwrap();
        assert_eq!(next, q);
    }

    #[test]
    fn q_update_feasible_point() {
        // cone peaked at the center: u grows toward c along every ray
        let s = star_field((4, 4), 9, 9).unwrap();
        let u = Raster::from_fn(9, 9, 1, |y, x, _| {
            let d = (y as f64 - 4.0).abs().max((x as f64 - 4.0).abs());
            1.0 - d / 8.0
        });
        let directional = s.pointwise_dot(&grad(&u));
        let q = ss_q_update(&Raster::zeros(9, 9, 1), &u, &s, 0.1).unwrap();
        for (d, qv) in directional.data().iter().zip(q.data()) {
            if *d >= 0.0 {
                assert_eq!(*qv, 0.0);
            }
        }
    }

    #[test]
    fn q_update_single_violation() {
        // center at the right edge: s points along +x in row 0
        let s = star_field((0, 2), 1, 3).unwrap();
        let u = Raster::new(1, 3, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let q = ss_q_update(&Raster::zeros(1, 3, 1), &u, &s, 0.1).unwrap();
        // pixel 0 has s.grad u = +1, pixel 1 has -1, pixel 2 is the center
        assert_eq!(q.data(), &[0.0, 0.1, 0.0]);
    }

    #[test]
    fn requires_center_and_class() {
        let o = FeatureMap::new(Raster::zeros(4, 4, 2)).unwrap();
        let k = KernelSpec::default_gaussian();
        assert!(ss_solve(&o, &k, &Weight::Uniform, &SolverConfig::default()).is_err());
    }
}
