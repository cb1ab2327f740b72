#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stdseg::energy::{edge_weight, softmax, Weight};
use stdseg::{FeatureMap, Raster, SoftSegmentation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> Raster {
    Raster::from_fn(h, w, c, |_, _, _| rng.gen_range(lo..hi))
}

pub fn random_features(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(uniform(rng, h, w, c, -1.0, 1.0)).unwrap()
}

pub fn random_simplex(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> SoftSegmentation {
    softmax(
        &FeatureMap::new(uniform(rng, h, w, c, -3.0, 3.0)).unwrap(),
        1.0,
    )
}

/// One draw from the randomized family used for the descent and
/// convergence-speed checks.
pub struct DescentInstance {
    pub o: FeatureMap,
    pub e: Weight,
    pub epsilon: f64,
    pub lambda: f64,
}

pub fn descent_instance(seed: u64) -> DescentInstance {
    let mut rng = rng(seed);
    let h = rng.gen_range(4..=16);
    let w = rng.gen_range(4..=16);
    let c = [2, 3, 4][rng.gen_range(0..3)];
    let epsilon = [0.1, 1.0, 3.0][rng.gen_range(0..3)];
    let lambda = [0.0, 0.5, 1.25][rng.gen_range(0..3)];
    let o = random_features(&mut rng, h, w, c);
    let e = if rng.gen_bool(0.5) {
        Weight::Uniform
    } else {
        let image = uniform(&mut rng, h, w, 1, 0.0, 1.0);
        Weight::field(edge_weight(&image)).unwrap()
    };
    DescentInstance {
        o,
        e,
        epsilon,
        lambda,
    }
}
