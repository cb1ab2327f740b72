//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion and exits nonzero if any of them fails.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use stdseg::autodiff::gradcheck;
use stdseg::energy::{logsumexp, regularizer, softmax, subgradient_p, vp_duality_gap, Weight};
use stdseg::features::{kmeans_init, quadratic_features, synth_instance, ClassMeans, SynthKind};
use stdseg::kernels::{depthwise_conv, div, grad, make_gaussian, KernelSpec, VectorField};
use stdseg::metrics::{iou, star_check};
use stdseg::solvers::{ss_solve, std_solve, vp_solve};
use stdseg::toy::run_toy;
use stdseg::{argmax_predict, FeatureMap, Raster, SoftSegmentation, SolverConfig};

use common::{descent_instance, random_features, random_simplex, rng, uniform};

const DESCENT_INSTANCES: u64 = 500;
const DESCENT_SLACK: f64 = 1e-10;
const SOFTMAX_TOL: f64 = 1e-12;
const FENCHEL_TOL: f64 = 1e-10;
const FENCHEL_PROBES: usize = 1000;
const SUBGRADIENT_TOL: f64 = 1e-6;
const SUBGRADIENT_STEP: f64 = 1e-4;
const VOLUME_REL_TOL: f64 = 0.005;
const DUALITY_GAP_TOL: f64 = 1e-4;
const STAR_IOU_POINTS: f64 = 2.0;
const VJP_REL_TOL: f64 = 1e-5;
const VJP_STEP: f64 = 1e-5;
const CONV_ADJOINT_TOL: f64 = 1e-10;
const GRAD_DIV_TOL: f64 = 1e-12;
const KERNEL_SUM_TOL: f64 = 1e-15;
const SIMPLEX_TOL: f64 = 1e-12;
const CONVERGENCE_BAR: f64 = 0.75;
const CONVERGENCE_TARGET: f64 = 0.90;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn energy_descent() -> Outcome {
    let kernel = KernelSpec::default_gaussian();
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    let mut checked = 0;
    for seed in 0..DESCENT_INSTANCES {
        let inst = descent_instance(seed);
        let config = SolverConfig::new(inst.epsilon, inst.lambda).with_iters(50);
        let res = std_solve(&inst.o, &kernel, &inst.e, &config).unwrap();
        let totals: Vec<f64> = res.trace.totals().collect();
        let mut bad = false;
        for pair in totals.windows(2) {
            let excess = (pair[1] - pair[0]) / pair[0].abs().max(1.0);
            worst = worst.max(excess);
            checked += 1;
            bad |= excess > DESCENT_SLACK;
        }
        failures += usize::from(bad);
    }
    outcome(
        failures == 0,
        format!(
            "{failures}/{DESCENT_INSTANCES} instances with an energy increase, {checked} steps, worst relative change {worst:.3e}"
        ),
    )
}

fn softmax_reduction() -> Outcome {
    let kernel = KernelSpec::default_gaussian();
    let mut r = rng(2);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let (h, w, c) = (r.gen_range(2..10), r.gen_range(2..10), r.gen_range(2..5));
        let o = random_features(&mut r, h, w, c);
        let eps = r.gen_range(0.05..3.0);
        let res = std_solve(&o, &kernel, &Weight::Uniform, &SolverConfig::new(eps, 0.0)).unwrap();
        worst = worst.max(res.u.raster().max_abs_diff(softmax(&o, eps).raster()));
    }
    let mut bitwise = true;
    for _ in 0..20 {
        let o = random_features(&mut r, 6, 7, 3);
        let res = std_solve(&o, &kernel, &Weight::Uniform, &SolverConfig::new(1.0, 0.0)).unwrap();
        bitwise &= res.u == softmax(&o, 1.0);
    }
    outcome(
        worst <= SOFTMAX_TOL && bitwise,
        format!("max |u - softmax(o/eps)| = {worst:.3e}, unit-temperature path bitwise: {bitwise}"),
    )
}

fn fenchel_pair() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0_f64;
    let mut dominated = true;
    for _ in 0..100 {
        let c = r.gen_range(2..7);
        let o: Vec<f64> = (0..c).map(|_| r.gen_range(-3.0..3.0)).collect();
        let eps = r.gen_range(0.05..3.0);
        let m = logsumexp(&o, eps);
        let u = softmax(
            &FeatureMap::new(Raster::new(1, 1, c, o.clone()).unwrap()).unwrap(),
            eps,
        );
        let value = |u: &[f64]| -> f64 {
            u.iter()
                .zip(&o)
                .map(|(ui, oi)| oi * ui - if *ui > 0.0 { eps * ui * ui.ln() } else { 0.0 })
                .sum()
        };
        worst = worst.max((m - value(u.raster().data())).abs());
        for _ in 0..FENCHEL_PROBES {
            let mut v: Vec<f64> = (0..c)
                .map(|_| -r.gen_range(f64::MIN_POSITIVE..1.0).ln())
                .collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            dominated &= value(&v) <= m + FENCHEL_TOL;
        }
    }
    outcome(
        worst <= FENCHEL_TOL && dominated,
        format!(
            "max |M - <o,u*> + eps<u*,ln u*>| = {worst:.3e}, dominates all probes: {dominated}"
        ),
    )
}

/// Removes the per-pixel mean so that `u + t v` stays on the simplex.
fn tangent(v: Raster) -> Raster {
    let c = v.channels();
    let data = v
        .pixel_iter()
        .flat_map(|px| {
            let mean = px.iter().sum::<f64>() / c as f64;
            px.iter().map(move |x| x - mean)
        })
        .collect();
    Raster::new(v.height(), v.width(), c, data).unwrap()
}

fn subgradient() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0_f64;
    for k in 0..50 {
        let (h, w, c) = (r.gen_range(3..12), r.gen_range(3..12), r.gen_range(2..5));
        let kernel = make_gaussian(2 * r.gen_range(1..4) + 1, r.gen_range(0.5..5.0)).unwrap();
        let e = if k % 2 == 0 {
            Weight::Uniform
        } else {
            Weight::field(uniform(&mut r, h, w, 1, 0.1, 1.0)).unwrap()
        };
        let lambda = r.gen_range(0.1..2.0);
        let u = random_simplex(&mut r, h, w, c);
        let v = tangent(uniform(&mut r, h, w, c, -1.0, 1.0));
        let p = subgradient_p(&u, &kernel, &e, lambda);
        let shifted = |s: f64| {
            let moved = u.raster().zip_map(&v, |a, b| a + s * b);
            regularizer(&SoftSegmentation::new(moved).unwrap(), &kernel, &e, lambda)
        };
        let fd =
            (shifted(SUBGRADIENT_STEP) - shifted(-SUBGRADIENT_STEP)) / (2.0 * SUBGRADIENT_STEP);
        worst = worst.max((fd - v.dot(&p)).abs());
    }
    outcome(
        worst <= SUBGRADIENT_TOL,
        format!("max |FD - <v,p>| = {worst:.3e} over 50 instances"),
    )
}

fn volume_instance(seed: u64) -> (FeatureMap, Vec<f64>) {
    let mut r = rng(500 + seed);
    let n = r.gen_range(8..=16);
    let (y0, x0) = (r.gen_range(0..n / 2), r.gen_range(0..n / 2));
    let (y1, x1) = (r.gen_range(y0 + 3..=n), r.gen_range(x0 + 3..=n));
    let truth: Vec<usize> = (0..n * n)
        .map(|i| usize::from((y0..y1).contains(&(i / n)) && (x0..x1).contains(&(i % n))))
        .collect();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let image = Raster::new(
        n,
        n,
        1,
        truth
            .iter()
            .map(|&l| (if l == 1 { 0.75_f64 } else { 0.25 } + noise.sample(&mut r)).clamp(0.0, 1.0))
            .collect(),
    )
    .unwrap();
    let means = ClassMeans::new(vec![vec![0.25], vec![0.75]]).unwrap();
    let o = quadratic_features(&image, &means).unwrap();
    let ones = truth.iter().sum::<usize>() as f64;
    (o, vec![(n * n) as f64 - ones, ones])
}

fn volume_preservation() -> Outcome {
    let kernel = KernelSpec::default_gaussian();
    let mut worst_mass = 0.0_f64;
    let mut unconverged = 0;
    for seed in 0..20 {
        let (o, volumes) = volume_instance(seed);
        let config = SolverConfig::new(0.1, 1.0)
            .with_volumes(volumes.clone(), 5)
            .with_iters(2000)
            .with_tol(1e-6);
        let res = vp_solve(&o, &kernel, &Weight::Uniform, &config).unwrap();
        unconverged += usize::from(!res.converged);
        let err = res.trace.last().unwrap().volume_err.unwrap();
        worst_mass = worst_mass.max(err);
    }
    let mut worst_gap = 0.0_f64;
    for seed in 0..10 {
        let mut r = rng(600 + seed);
        let o = random_features(&mut r, 4, 4, 2);
        let a = r.gen_range(4..=12) as f64;
        let volumes = vec![a, 16.0 - a];
        let config = SolverConfig::new(0.1, 1.0)
            .with_volumes(volumes.clone(), 5)
            .with_iters(100_000)
            .with_tol(1e-10);
        let res = vp_solve(&o, &kernel, &Weight::Uniform, &config).unwrap();
        unconverged += usize::from(!res.converged);
        let p = subgradient_p(&res.u, &kernel, &Weight::Uniform, 1.0);
        let q = res.duals.q_vp.as_ref().unwrap();
        worst_gap = worst_gap.max(vp_duality_gap(&res.u, q, &o, &p, &volumes, 0.1).abs());
    }
    outcome(
        worst_mass <= VOLUME_REL_TOL && worst_gap <= DUALITY_GAP_TOL && unconverged == 0,
        format!(
            "max relative mass error {worst_mass:.3e}, max |duality gap| {worst_gap:.3e}, {unconverged} runs not converged"
        ),
    )
}

fn star_shape() -> Outcome {
    let inst = synth_instance(SynthKind::Cshape, 64, 0.1, 0).unwrap();
    let means = kmeans_init(&inst.image, 2, 0).unwrap();
    let o = quadratic_features(&inst.image, &means).unwrap();
    let kernel = KernelSpec::default_gaussian();
    let config = SolverConfig::new(0.1, 0.5);
    let std = argmax_predict(&std_solve(&o, &kernel, &Weight::Uniform, &config).unwrap().u);
    let ss_config = config.with_star(inst.center, 1);
    let ss = argmax_predict(
        &ss_solve(&o, &kernel, &Weight::Uniform, &ss_config)
            .unwrap()
            .u,
    );
    let std_violations = star_check(&std, 1, inst.center).unwrap();
    let ss_violations = star_check(&ss, 1, inst.center).unwrap();
    let std_iou = iou(&std, &inst.truth, 2).unwrap().miou;
    let ss_iou = iou(&ss, &inst.truth, 2).unwrap().miou;
    let gap = 100.0 * (ss_iou - std_iou).abs();
    outcome(
        ss_violations == 0 && std_violations >= 1 && gap <= STAR_IOU_POINTS,
        format!(
            "violations SS-STD {ss_violations} / STD {std_violations}, mIoU SS-STD {ss_iou:.4} vs STD {std_iou:.4} ({gap:.2} points)"
        ),
    )
}

fn gradient_certification() -> Outcome {
    let kernel = KernelSpec::default_gaussian();
    let mut worst = 0.0_f64;
    let mut r = rng(7);
    for k in 0..20 {
        let size = 3 + k % 4;
        let classes = 2 + k % 2;
        let eps = [0.1, 1.0][(k / 2) % 2];
        let lambda = [0.0, 0.5, 1.0][k % 3];
        let iters = [1, 3, 10][(k / 3) % 3];
        let o = random_features(&mut r, size, size, classes);
        let cotangent = uniform(&mut r, size, size, classes, -1.0, 1.0);
        let config = SolverConfig::new(eps, lambda).with_iters(iters);
        let check =
            gradcheck(&o, &kernel, &Weight::Uniform, &config, &cotangent, VJP_STEP).unwrap();
        worst = worst.max(check.max_rel_err);
    }
    outcome(
        worst <= VJP_REL_TOL,
        format!("max relative error {worst:.3e} over 20 instances"),
    )
}

fn operator_algebra() -> Outcome {
    let mut r = rng(8);
    let mut conv = 0.0_f64;
    for _ in 0..30 {
        let (h, w, c) = (r.gen_range(1..20), r.gen_range(1..20), r.gen_range(1..4));
        let kernel = make_gaussian(2 * r.gen_range(0..6) + 1, r.gen_range(0.3..6.0)).unwrap();
        let a = uniform(&mut r, h, w, c, -1.0, 1.0);
        let b = uniform(&mut r, h, w, c, -1.0, 1.0);
        let lhs = depthwise_conv(&a, &kernel).dot(&b);
        let rhs = a.dot(&depthwise_conv(&b, &kernel));
        conv = conv.max((lhs - rhs).abs());
    }
    let mut adjoint = 0.0_f64;
    for h in 1..=16 {
        for w in [1, h, 17 - h] {
            let u = uniform(&mut r, h, w, 1, -1.0, 1.0);
            let v = VectorField::new(
                uniform(&mut r, h, w, 1, -1.0, 1.0),
                uniform(&mut r, h, w, 1, -1.0, 1.0),
            )
            .unwrap();
            adjoint = adjoint.max((grad(&u).dot(&v) + u.dot(&div(&v))).abs());
        }
    }
    let mut sum_err = 0.0_f64;
    let mut kernels = vec![KernelSpec::default_gaussian()];
    for size in [1, 3, 5, 7, 9, 15] {
        for sigma in [0.5, 1.0, 2.0, 5.0, 10.0] {
            kernels.push(make_gaussian(size, sigma).unwrap());
        }
    }
    for k in &kernels {
        sum_err = sum_err.max((k.weights().iter().sum::<f64>() - 1.0).abs());
    }
    let kernel = KernelSpec::default_gaussian();
    let mut simplex = 0.0_f64;
    for seed in 0..10 {
        let mut r = rng(800 + seed);
        let o = random_features(&mut r, 9, 8, 3);
        let u = std_solve(&o, &kernel, &Weight::Uniform, &SolverConfig::default())
            .unwrap()
            .u;
        simplex = simplex.max(u.simplex_residual());
        let config = SolverConfig::default().with_volumes(vec![30.0, 24.0, 18.0], 3);
        let u = vp_solve(&o, &kernel, &Weight::Uniform, &config).unwrap().u;
        simplex = simplex.max(u.simplex_residual());
        let config = SolverConfig::default().with_star((4, 4), seed as usize % 3);
        let u = ss_solve(&o, &kernel, &Weight::Uniform, &config).unwrap().u;
        simplex = simplex.max(u.simplex_residual());
        simplex = simplex.max(softmax(&o, 0.1).simplex_residual());
    }
    outcome(
        conv <= CONV_ADJOINT_TOL && adjoint <= GRAD_DIV_TOL && sum_err <= KERNEL_SUM_TOL && simplex <= SIMPLEX_TOL,
        format!(
            "conv adjoint {conv:.3e}, grad/div adjoint {adjoint:.3e}, kernel sum {sum_err:.3e}, simplex {simplex:.3e}"
        ),
    )
}

fn toy_regeneration() -> Outcome {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let report = run_toy(first.path(), 0).unwrap();
    run_toy(second.path(), 0).unwrap();
    let mut identical = true;
    for entry in std::fs::read_dir(first.path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(first.path().join(&name)).unwrap();
        let b = std::fs::read(second.path().join(&name)).unwrap_or_default();
        identical &= a == b;
    }
    let soft = report.panel("softmax").unwrap();
    let std = report.panel("std").unwrap();
    outcome(
        identical && std.miou >= soft.miou && std.boundary_edges < soft.boundary_edges,
        format!(
            "mIoU STD {:.4} vs softmax {:.4}, boundary edges {} vs {}, byte-identical reruns: {identical}",
            std.miou, soft.miou, std.boundary_edges, soft.boundary_edges
        ),
    )
}

fn convergence_speed() -> Outcome {
    let kernel = KernelSpec::default_gaussian();
    let mut fast = 0;
    for seed in 0..DESCENT_INSTANCES {
        let inst = descent_instance(seed);
        let config = SolverConfig::new(0.1, 1.0);
        let res = std_solve(&inst.o, &kernel, &inst.e, &config).unwrap();
        fast += usize::from(res.converged);
    }
    let rate = fast as f64 / DESCENT_INSTANCES as f64;
    outcome(
        rate >= CONVERGENCE_BAR,
        format!(
            "{fast}/{DESCENT_INSTANCES} = {:.1}% converged within 10 iterations (bar {:.0}%, target {:.0}%)",
            100.0 * rate,
            100.0 * CONVERGENCE_BAR,
            100.0 * CONVERGENCE_TARGET
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("energy descent", Duration::from_secs(30), energy_descent),
        (
            "softmax reduction",
            Duration::from_secs(1),
            softmax_reduction,
        ),
        ("conjugate pair", Duration::from_secs(5), fenchel_pair),
        ("subgradient", Duration::from_secs(10), subgradient),
        (
            "volume preservation",
            Duration::from_secs(30),
            volume_preservation,
        ),
        ("star shape", Duration::from_secs(20), star_shape),
        (
            "gradient certification",
            Duration::from_secs(60),
            gradient_certification,
        ),
        (
            "operator algebra",
            Duration::from_secs(10),
            operator_algebra,
        ),
        (
            "toy regeneration",
            Duration::from_secs(20),
            toy_regeneration,
        ),
        (
            "convergence speed",
            Duration::from_secs(30),
            convergence_speed,
        ),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let pass = result.pass && elapsed <= *limit;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.2}s, limit {}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
