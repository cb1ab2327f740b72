//! Soft threshold dynamics (STD) segmentation operators.
//!
//! A per-pixel feature map `o` is turned into a soft segmentation `u` on the
//! probability simplex by minimizing
//!
//! ```text
//! <-o, u> + eps <u, ln u> + lambda <e u, k * (1 - u)>
//! ```
//!
//! The entropy term makes every update a softmax, and the kernel term is a
//! threshold-dynamics approximation of boundary length. Three solvers are
//! provided: plain STD, a volume-preserving variant with per-class mass
//! constraints, and a star-shape variant that keeps one class star-shaped
//! around a given center. The plain solver is differentiable with respect to
//! `o` through [`autodiff::std_vjp`].
//!
//! ```
//! use stdseg::{energy::Weight, features, kernels::KernelSpec, solvers, SolverConfig};
//!
//! let inst = features::synth_instance(features::SynthKind::Square, 32, 0.1, 0).unwrap();
//! let means = features::kmeans_init(&inst.image, 2, 0).unwrap();
//! let o = features::quadratic_features(&inst.image, &means).unwrap();
//! let res = solvers::std_solve(&o, &KernelSpec::default_gaussian(), &Weight::Uniform, &SolverConfig::default())
//!     .unwrap();
//! let labels = stdseg::argmax_predict(&res.u);
//! assert_eq!(labels.height(), 32);
//! ```

pub mod autodiff;
pub mod config;
pub mod energy;
pub mod error;
pub mod features;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod raster;
pub mod solvers;
pub mod toy;
pub mod trace;

pub use config::SolverConfig;
pub use error::{Error, Result};
pub use raster::{argmax_predict, FeatureMap, LabelMap, Raster, SoftSegmentation};
pub use trace::{EnergyTrace, TraceRecord};
