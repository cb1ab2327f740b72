use crate::config::SolverConfig;
use crate::energy::{softmax, softmax_field, subgradient_p, Weight};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::raster::{FeatureMap, Raster, SoftSegmentation};

use super::{check_inputs, energy_record, max_delta, DualState, SolveResult};

/// `o - p` channel by channel.
pub(crate) fn shifted_scores(o: &FeatureMap, p: &Raster) -> Raster {
    o.raster().zip_map(p, |a, b| a - b)
}

/// One linearize-and-softmax update: `S((o - p(u_prev)) / eps)`.
pub fn std_step(
    u_prev: &SoftSegmentation,
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
) -> Result<SoftSegmentation> {
    u_prev
        .raster()
        .check_same_shape(o.raster(), "segmentation vs features")?;
    e.check(o.raster().height(), o.raster().width())?;
    let p = subgradient_p(u_prev, kernel, e, config.lambda);
    Ok(softmax_field(&shifted_scores(o, &p), config.epsilon))
}

/// Runs STD from `u0 = S(o)` until `max |u_t - u_{t-1}| < tol` or the outer
/// budget is spent.
pub fn std_solve(
    o: &FeatureMap,
    kernel: &KernelSpec,
    e: &Weight,
    config: &SolverConfig,
) -> Result<SolveResult> {
    check_inputs(o, e, config)?;
    if config.volumes.is_some() || config.star_center.is_some() {
        return Err(Error::InvalidConfig(
            "std_solve takes no volume or star-shape constraints".into(),
        ));
    }
    let mut u = softmax(o, 1.0);
    let mut trace = crate::trace::EnergyTrace::default();
    trace.push(energy_record(0, &u, o, kernel, e, config, 0.0)?);
    let mut converged = false;
    let mut iterations_used = 0;
    for t in 1..=config.outer_iters {
        let next = std_step(&u, o, kernel, e, config)?;
        let delta = max_delta(&next, &u);
        u = next;
        iterations_used = t;
        trace.push(energy_record(t, &u, o, kernel, e, config, delta)?);
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
        duals: DualState::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::total_energy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut impl Rng, h: usize, w: usize, c: usize, scale: f64) -> FeatureMap {
        FeatureMap::new(Raster::from_fn(h, w, c, |_, _, _| {
            rng.gen_range(-scale..scale)
        }))
        .unwrap()
    }

    #[test]
    fn zero_lambda_step_is_plain_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = random_features(&mut rng, 5, 4, 3, 2.0);
        let prev = softmax(&random_features(&mut rng, 5, 4, 3, 2.0), 1.0);
        let cfg = SolverConfig::new(0.4, 0.0);
        let k = KernelSpec::default_gaussian();
        let u = std_step(&prev, &o, &k, &Weight::Uniform, &cfg).unwrap();
        assert_eq!(u, softmax(&o, 0.4));
    }

    #[test]
    fn balanced_previous_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random_features(&mut rng, 4, 4, 2, 1.0);
        let cfg = SolverConfig::new(0.2, 1.0);
        let k = KernelSpec::default_gaussian();
        let u = std_step(
            &SoftSegmentation::uniform(4, 4, 2),
            &o,
            &k,
            &Weight::Uniform,
            &cfg,
        )
        .unwrap();
        assert!(u.raster().max_abs_diff(softmax(&o, 0.2).raster()) < 1e-12);
    }

    #[test]
    fn step_decreases_energy() {
        let k = KernelSpec::default_gaussian();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let o = random_features(&mut rng, 6, 6, 2, 1.0);
            let cfg = SolverConfig::new(rng.gen_range(0.1..1.0), rng.gen_range(0.0..1.25));
            let u = softmax(&random_features(&mut rng, 6, 6, 2, 2.0), 1.0);
            let before = total_energy(&u, &o, &k, &Weight::Uniform, &cfg)
                .unwrap()
                .total;
            let next = std_step(&u, &o, &k, &Weight::Uniform, &cfg).unwrap();
            let after = total_energy(&next, &o, &k, &Weight::Uniform, &cfg)
                .unwrap()
                .total;
            assert!(
                after <= before + 1e-10 * before.abs(),
                "seed {seed}: {after} > {before}"
            );
        }
    }

    #[test]
    fn zero_features_converge_immediately() {
        let o = FeatureMap::new(Raster::zeros(5, 5, 3)).unwrap();
        let res = std_solve(
            &o,
            &KernelSpec::default_gaussian(),
            &Weight::Uniform,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations_used, 1);
        assert_eq!(res.trace.len(), 2);
        assert!(res
            .u
            .raster()
            .data()
            .iter()
            .all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn rejects_constraints_and_shape_errors() {
        let o = FeatureMap::new(Raster::zeros(4, 4, 2)).unwrap();
        let k = KernelSpec::default_gaussian();
        let cfg = SolverConfig::default().with_volumes(vec![8.0, 8.0], 1);
        assert!(std_solve(&o, &k, &Weight::Uniform, &cfg).is_err());
        let e = Weight::field(Raster::filled(3, 4, 1, 1.0)).unwrap();
        assert!(std_solve(&o, &k, &e, &SolverConfig::default()).is_err());
    }
}
