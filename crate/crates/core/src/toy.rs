//! Desk-scale toy experiment: one noisy synthetic object segmented by plain
//! softmax, STD and star-shape STD at two centers.

use std::path::Path;

use serde::Serialize;

use crate::config::SolverConfig;
use crate::energy::{softmax, Weight};
use crate::error::{Error, Result};
use crate::features::{kmeans_init, quadratic_features, synth_instance, SynthKind};
use crate::io::{save_label_png, save_png, write_atomic};
use crate::kernels::KernelSpec;
use crate::metrics::{iou, star_check};
use crate::raster::{argmax_predict, LabelMap};
use crate::solvers::{ss_solve, std_solve};

pub const TOY_SIZE: usize = 64;
pub const TOY_NOISE: f64 = 0.2;
/// Lighter than the solver default so the slot survives the 10-step STD run.
pub const TOY_LAMBDA: f64 = 0.5;
pub const TOY_REPORT: &str = "report.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyPanel {
    pub method: String,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<[usize; 2]>,
    pub boundary_edges: usize,
    /// Ray-check violations of the object w.r.t. the geometric center, or
    /// the panel's own center for the star-shape runs.
    pub ss_violations: usize,
    pub miou: f64,
    pub object_iou: f64,
    pub iterations_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToyReport {
    pub kind: SynthKind,
    pub size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub lambda: f64,
    pub center: [usize; 2],
    pub panels: Vec<ToyPanel>,
}

impl ToyReport {
    pub fn panel(&self, method: &str) -> Option<&ToyPanel> {
        self.panels.iter().find(|p| p.method == method)
    }
}

fn object_class(intensities: &[f64]) -> usize {
    // the object is brighter than the background
    usize::from(intensities[1] > intensities[0])
}

struct Scoring<'a> {
    truth: &'a LabelMap,
    object: usize,
    center: (usize, usize),
}

impl Scoring<'_> {
    fn panel(
        &self,
        method: &str,
        file: &str,
        labels: &LabelMap,
        own_center: Option<(usize, usize)>,
        iterations_used: usize,
    ) -> Result<ToyPanel> {
        let relabelled = if self.object == 1 {
            labels.clone()
        } else {
            let flipped = labels.labels().iter().map(|&l| 1 - l).collect();
            LabelMap::new(labels.height(), labels.width(), 2, flipped)?
        };
        let report = iou(&relabelled, self.truth, 2)?;
        let center = own_center.unwrap_or(self.center);
        Ok(ToyPanel {
            method: method.into(),
            file: file.into(),
            center: own_center.map(|(y, x)| [y, x]),
            boundary_edges: labels.boundary_edges(),
            ss_violations: star_check(labels, self.object, center)?,
            miou: report.miou,
            object_iou: report.per_class[1].unwrap_or(0.0),
            iterations_used,
        })
    }
}

/// Runs the experiment and writes the input image, one label image per
/// method and `report.json` into `outdir`.
pub fn run_toy(outdir: impl AsRef<Path>, seed: u64) -> Result<ToyReport> {
    let outdir = outdir.as_ref();
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;

    let inst = synth_instance(SynthKind::Cshape, TOY_SIZE, TOY_NOISE, seed)?;
    let means = kmeans_init(&inst.image, 2, seed)?;
    let o = quadratic_features(&inst.image, &means)?;
    let object = object_class(&means.intensities());
    let kernel = KernelSpec::default_gaussian();
    let config = SolverConfig::new(0.1, TOY_LAMBDA);
    let c = inst.center;
    // second center: left half of the body, a quarter radius from the first
    let alt = (c.0, c.1.saturating_sub(TOY_SIZE / 8));

    let scoring = Scoring {
        truth: &inst.truth,
        object,
        center: c,
    };

    save_png(&inst.image, outdir.join("input.png"))?;
    let mut panels = Vec::new();

    let soft = argmax_predict(&softmax(&o, 1.0));
    save_label_png(&soft, outdir.join("softmax.png"))?;
    panels.push(scoring.panel("softmax", "softmax.png", &soft, None, 0)?);

    let std = std_solve(&o, &kernel, &Weight::Uniform, &config)?;
    let std_labels = argmax_predict(&std.u);
    save_label_png(&std_labels, outdir.join("std.png"))?;
    panels.push(scoring.panel("std", "std.png", &std_labels, None, std.iterations_used)?);

    for (name, center) in [("ss-std-a", c), ("ss-std-b", alt)] {
        let res = ss_solve(
            &o,
            &kernel,
            &Weight::Uniform,
            &config.clone().with_star(center, object),
        )?;
        let labels = argmax_predict(&res.u);
        let file = format!("{name}.png");
        save_label_png(&labels, outdir.join(&file))?;
        panels.push(scoring.panel(name, &file, &labels, Some(center), res.iterations_used)?);
    }

    let report = ToyReport {
        kind: SynthKind::Cshape,
        size: TOY_SIZE,
        noise_sigma: TOY_NOISE,
        seed,
        epsilon: config.epsilon,
        lambda: config.lambda,
        center: [c.0, c.1],
        panels,
    };
    let json = serde_json::to_vec_pretty(&report).map_err(|e| Error::Decode(e.to_string()))?;
    write_atomic(&outdir.join(TOY_REPORT), &json)?;
    Ok(report)
}
