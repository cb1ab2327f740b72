use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use stdseg::autodiff::gradcheck;
use stdseg::config::volumes_from_fractions;
use stdseg::energy::{softmax, total_energy, Weight};
use stdseg::features::{kmeans_init, quadratic_features, synth_instance, SynthKind};
use stdseg::io::{
    labels_from_raster, labels_to_raster, load_image, read_tensor, save_label_png, save_png,
    write_atomic, write_tensor,
};
use stdseg::kernels::make_gaussian;
use stdseg::metrics::{iou, star_check};
use stdseg::solvers::{ss_solve, std_solve, vp_solve, SolveResult};
use stdseg::toy::run_toy;
use stdseg::{
    argmax_predict, EnergyTrace, FeatureMap, LabelMap, Raster, SoftSegmentation, SolverConfig,
};

const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "stdseg",
    version,
    about = "Soft threshold dynamics segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment an image (or a feature tensor) and write labels, probabilities,
    /// the energy trace and a JSON summary.
    Segment(SegmentArgs),
    /// Write a noisy synthetic object, its ground truth and a JSON sidecar.
    Synth(SynthArgs),
    /// Compare the reverse pass of the unrolled solver with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the toy experiment (softmax, STD and star-shape STD on one object).
    Toy(ToyArgs),
    /// IoU and star-shape check of a predicted labelling against a reference.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Softmax,
    Std,
    VpStd,
    SsStd,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Softmax => "softmax",
            Method::Std => "std",
            Method::VpStd => "vp-std",
            Method::SsStd => "ss-std",
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    /// Input image (PNG or binary PGM), then the output directory.
    paths: Vec<PathBuf>,
    /// Output directory (instead of the last positional argument).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "std")]
    method: Method,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Outer iterations [default: 10, or 50 for ss-std].
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 1)]
    inner_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 7)]
    kernel_size: usize,
    #[arg(long, default_value_t = 5.0)]
    kernel_sigma: f64,
    /// Number of classes for K-means features (ignored with --features).
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Class volumes as fractions of the image, e.g. 0.75,0.25.
    #[arg(long, value_delimiter = ',', conflicts_with = "volumes_px")]
    volumes: Option<Vec<f64>>,
    /// Class volumes as pixel counts, e.g. 48,16.
    #[arg(long, value_delimiter = ',')]
    volumes_px: Option<Vec<f64>>,
    /// Star center as Y,X.
    #[arg(long, value_parser = parse_point)]
    center: Option<(usize, usize)>,
    #[arg(long)]
    star_class: Option<usize>,
    #[arg(long)]
    tau_q: Option<f64>,
    /// Feature tensor (VSG1, height x width x classes) used instead of
    /// K-means features of the input image.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Ground-truth labels (VSG1, one channel) for the mIoU in the summary.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print the energy trace CSV to stdout.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "square")]
    kind: SynthKind,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for image.png, truth.vsg1 and meta.json.
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    size: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 3)]
    iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tau: f64,
    #[arg(long, default_value_t = 7)]
    kernel_size: usize,
    #[arg(long, default_value_t = 5.0)]
    kernel_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted labels: a one-channel VSG1 label tensor or a VSG1
    /// probability tensor (labelled by argmax).
    pred: PathBuf,
    /// Reference labels in the same formats.
    truth: PathBuf,
    /// Number of classes [default: inferred from the tensors].
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, value_parser = parse_point, requires = "star_class")]
    center: Option<(usize, usize)>,
    #[arg(long, requires = "center")]
    star_class: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<stdseg::Error> for Failure {
    fn from(e: stdseg::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_point(s: &str) -> Result<(usize, usize), String> {
    let (y, x) = s
        .split_once(',')
        .ok_or_else(|| format!("expected Y,X, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad coordinate {v:?}: {e}"))
    };
    Ok((parse(y)?, parse(x)?))
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("STDSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        usage(format!(
            "STDSEG_THREADS must be a positive integer, got {value:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Loads a label map from a one-channel label tensor or a probability tensor.
fn read_labels(path: &Path, classes: Option<usize>) -> Result<LabelMap, Failure> {
    let r = read_tensor(path)?;
    if r.channels() == 1 {
        let max = r.data().iter().fold(0.0_f64, |m, &v| m.max(v));
        let classes = classes.unwrap_or(max as usize + 1).max(2);
        Ok(labels_from_raster(&r, classes)?)
    } else {
        let u = SoftSegmentation::new(r)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        Ok(argmax_predict(&u))
    }
}

fn segment(args: SegmentArgs) -> Result<(), Failure> {
    let mut paths = args.paths.clone();
    if paths.len() > 2 {
        return Err(usage(
            "segment takes at most an input image and an output directory",
        ));
    }
    let outdir = match &args.out {
        Some(o) => o.clone(),
        None => paths
            .pop()
            .ok_or_else(|| usage("missing output directory (positional or --out)"))?,
    };
    let input = paths.pop();

    match args.method {
        Method::VpStd if args.volumes.is_none() && args.volumes_px.is_none() => {
            return Err(usage("--method vp-std requires --volumes or --volumes-px"))
        }
        Method::SsStd if args.center.is_none() => {
            return Err(usage("--method ss-std requires --center"))
        }
        Method::SsStd if args.star_class.is_none() => {
            return Err(usage("--method ss-std requires --star-class"))
        }
        _ => {}
    }
    if args.method != Method::VpStd && (args.volumes.is_some() || args.volumes_px.is_some()) {
        return Err(usage(
            "--volumes/--volumes-px only apply to --method vp-std",
        ));
    }
    if args.method != Method::SsStd
        && (args.center.is_some() || args.star_class.is_some() || args.tau_q.is_some())
    {
        return Err(usage(
            "--center/--star-class/--tau-q only apply to --method ss-std",
        ));
    }

    let o = match (&args.features, &input) {
        (Some(path), _) => FeatureMap::new(read_tensor(path)?)?,
        (None, Some(path)) => {
            let image = load_image(path)?;
            let means = kmeans_init(&image, args.classes, args.seed)?;
            quadratic_features(&image, &means)?
        }
        (None, None) => return Err(usage("missing input image (or --features)")),
    };
    let (h, w, classes) = o.raster().shape();

    let mut config = SolverConfig::new(args.epsilon, args.lambda).with_tol(args.tol);
    config.inner_iters = args.inner_iters;
    if let Some(fractions) = &args.volumes {
        config.volumes =
            Some(volumes_from_fractions(fractions, h * w).map_err(|e| usage(e.to_string()))?);
    }
    if let Some(px) = &args.volumes_px {
        config.volumes = Some(px.clone());
    }
    if let (Some(c), Some(i)) = (args.center, args.star_class) {
        config = config.with_star(c, i);
    }
    config.tau_q = args.tau_q;
    if let Some(n) = args.iters {
        config.outer_iters = n;
    }
    config
        .validate(h, w, classes)
        .map_err(|e| usage(e.to_string()))?;
    let kernel =
        make_gaussian(args.kernel_size, args.kernel_sigma).map_err(|e| usage(e.to_string()))?;
    let e = Weight::Uniform;

    let res = match args.method {
        Method::Softmax => {
            let u = softmax(&o, config.epsilon);
            let flat = SolverConfig::new(config.epsilon, 0.0);
            let parts = total_energy(&u, &o, &kernel, &e, &flat)?;
            let mut trace = EnergyTrace::default();
            trace.push(stdseg::TraceRecord {
                iter: 0,
                fidelity: parts.fidelity,
                entropy: parts.entropy,
                regularizer: parts.regularizer,
                total: parts.total,
                max_delta_u: 0.0,
                volume_err: None,
                ss_violations: None,
            });
            SolveResult {
                u,
                trace,
                converged: true,
                iterations_used: 0,
                duals: Default::default(),
            }
        }
        Method::Std => std_solve(&o, &kernel, &e, &config)?,
        Method::VpStd => vp_solve(&o, &kernel, &e, &config)?,
        Method::SsStd => ss_solve(&o, &kernel, &e, &config)?,
    };

    let labels = argmax_predict(&res.u);
    let mut params = Map::new();
    params.insert("epsilon".into(), json!(config.epsilon));
    params.insert(
        "lambda".into(),
        json!(if args.method == Method::Softmax {
            0.0
        } else {
            config.lambda
        }),
    );
    params.insert("outer_iters".into(), json!(config.outer_iters));
    params.insert("inner_iters".into(), json!(config.inner_iters));
    params.insert("tol".into(), json!(config.tol));
    params.insert("kernel_size".into(), json!(args.kernel_size));
    params.insert("kernel_sigma".into(), json!(args.kernel_sigma));
    params.insert("classes".into(), json!(classes));
    params.insert("seed".into(), json!(args.seed));
    if let Some(v) = &config.volumes {
        params.insert("volumes".into(), json!(v));
    }
    if let Some((y, x)) = config.star_center {
        params.insert("center".into(), json!([y, x]));
    }
    if let Some(i) = config.star_class {
        params.insert("star_class".into(), json!(i));
        params.insert("tau_q".into(), json!(config.tau_q()));
    }

    let mut summary = Map::new();
    summary.insert("method".into(), json!(args.method.name()));
    summary.insert("params".into(), Value::Object(params));
    summary.insert("iterations_used".into(), json!(res.iterations_used));
    summary.insert("converged".into(), json!(res.converged));
    let last = res
        .trace
        .last()
        .expect("trace has the initialization record");
    summary.insert("final_energy".into(), json!(last.total));
    if let Some(v) = last.volume_err {
        summary.insert("volume_err".into(), json!(v));
    }
    if let (Some(c), Some(i)) = (config.star_center, config.star_class) {
        summary.insert("ss_violations".into(), json!(star_check(&labels, i, c)?));
    }
    if let Some(path) = &args.truth {
        let truth = labels_from_raster(&read_tensor(path)?, classes)?;
        summary.insert("miou".into(), json!(iou(&labels, &truth, classes)?.miou));
    }

    create_dir(&outdir)?;
    save_label_png(&labels, outdir.join("labels.png"))?;
    write_tensor(res.u.raster(), outdir.join("probs.vsg1"))?;
    let csv = res.trace.to_csv();
    write_atomic(&outdir.join("trace.csv"), csv.as_bytes())?;
    write_json(&outdir.join("summary.json"), &Value::Object(summary))?;
    if args.trace {
        print!("{csv}");
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let inst = synth_instance(args.kind, args.size, args.noise, args.seed)
        .map_err(|e| usage(e.to_string()))?;
    create_dir(&args.out)?;
    save_png(&inst.image, args.out.join("image.png"))?;
    write_tensor(&labels_to_raster(&inst.truth), args.out.join("truth.vsg1"))?;
    let meta = json!({
        "center": [inst.center.0, inst.center.1],
        "kind": args.kind,
        "seed": args.seed,
        "noise_sigma": args.noise,
    });
    write_json(&args.out.join("meta.json"), &meta)
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<bool, Failure> {
    let kernel =
        make_gaussian(args.kernel_size, args.kernel_sigma).map_err(|e| usage(e.to_string()))?;
    let config = SolverConfig::new(args.epsilon, args.lambda).with_iters(args.iters);
    config
        .validate(args.size, args.size, args.classes)
        .map_err(|e| usage(e.to_string()))?;
    if args.tau.is_nan() || args.tau <= 0.0 {
        return Err(usage("--tau must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut random = || {
        Raster::from_fn(args.size, args.size, args.classes, |_, _, _| {
            rng.gen_range(-1.0..1.0)
        })
    };
    let o = FeatureMap::new(random())?;
    let cotangent = random();
    let check = gradcheck(&o, &kernel, &Weight::Uniform, &config, &cotangent, args.tau)?;
    let pass = check.max_rel_err <= GRADCHECK_TOL;
    println!(
        "max_abs_err {:e} max_rel_err {:e} {}",
        check.max_abs_err,
        check.max_rel_err,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(pass)
}

fn toy(args: ToyArgs) -> Result<(), Failure> {
    let report = run_toy(&args.out, args.seed)?;
    for p in &report.panels {
        println!(
            "{:<9} miou {:.4} boundary_edges {:>5} ss_violations {:>5}",
            p.method, p.miou, p.boundary_edges, p.ss_violations
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let pred = read_labels(&args.pred, args.classes)?;
    let truth = read_labels(&args.truth, args.classes)?;
    let classes = args
        .classes
        .unwrap_or_else(|| pred.classes().max(truth.classes()));
    let report = iou(&pred, &truth, classes)?;
    let mut out = json!({ "per_class": report.per_class, "miou": report.miou });
    if let (Some(c), Some(i)) = (args.center, args.star_class) {
        if i >= classes {
            return Err(usage(format!(
                "--star-class {i} out of range for {classes} classes"
            )));
        }
        out["star_violations"] = json!(star_check(&pred, i, c).map_err(|e| usage(e.to_string()))?);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&out).map_err(|e| Failure::Runtime(e.to_string()))?
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Segment(a) => segment(a).map(|_| true),
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Toy(a) => toy(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
