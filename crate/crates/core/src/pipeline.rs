//! The `segrefine` command line: score maps in, refined label maps and
//! metrics out.
//!
//! Exit status is 0 on success, 2 for invalid arguments or incompatible
//! inputs and 3 for unreadable, unwritable or malformed files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aspp::{aspp_forward, multiscale_max_fuse, AsppSpec};
use crate::atrous::{resize_bilinear, upsample_bilinear};
use crate::densecrf::{
    grid_search, run_inference, run_inference_timed, Backend, InferenceTimes, PairwiseParams,
    ParamRange, SearchRanges, UnaryField, ValidationCase, DEFAULT_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::eval::{confusion, mean_iou, trimap_miou};
use crate::format::{read_pgm, read_ppm, read_tensor, write_pgm, write_ppm, write_tensor};
use crate::synth::{corrupt_unary, render_scene, SceneSpec};
use crate::types::{FeatureMap, RgbImage};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_FILE: i32 = 3;

/// Default ratio between image and score-map resolution.
pub const DEFAULT_FACTOR: usize = 8;

#[derive(Parser, Debug)]
#[command(
    name = "segrefine",
    version,
    about = "Dense CRF refinement of segmentation score maps"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Upsample a unary map and refine it with the dense CRF.
    Refine(RefineArgs),
    /// Score a label map against ground truth.
    Eval(EvalArgs),
    /// Search CRF parameters on a validation manifest.
    Tune(TuneArgs),
    /// Render a synthetic scene with ground truth and a noisy unary.
    Synth(SynthArgs),
    /// Time lattice inference on a random instance.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CrfArgs {
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iters: usize,
    #[arg(long, default_value_t = 4.0)]
    pub w1: f64,
    #[arg(long, default_value_t = 3.0)]
    pub w2: f64,
    #[arg(long, default_value_t = 60.0)]
    pub sigma_alpha: f64,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_beta: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_gamma: f64,
    #[arg(long, value_enum, default_value_t = BackendArg::Lattice)]
    pub backend: BackendArg,
}

impl CrfArgs {
    pub fn params(&self) -> PairwiseParams {
        PairwiseParams {
            w1: self.w1,
            w2: self.w2,
            sigma_alpha: self.sigma_alpha,
            sigma_beta: self.sigma_beta,
            sigma_gamma: self.sigma_gamma,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendArg {
    Exact,
    Lattice,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Exact => Backend::Exact,
            BackendArg::Lattice => Backend::Lattice,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    #[default]
    None,
    /// Elementwise max over several score maps, each resized to the image.
    MultiscaleMax,
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    /// Unary costs (-log P) as a DLT1 tensor; repeat with multiscale fusion.
    #[arg(long, required_unless_present = "features")]
    pub unary: Vec<PathBuf>,
    /// Feature tensor to score with an ASPP head instead of reading unaries.
    #[arg(long, requires = "aspp", conflicts_with = "unary")]
    pub features: Option<PathBuf>,
    /// ASPP head description (key = value file).
    #[arg(long)]
    pub aspp: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    /// Refined label map (PGM).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the final beliefs as a DLT1 tensor.
    #[arg(long)]
    pub q_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    #[arg(long, value_enum, default_value_t)]
    pub fusion: Fusion,
    #[command(flatten)]
    pub crf: CrfArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predicted labels (PGM).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels (PGM); 255 is ignored.
    #[arg(long)]
    pub gt: PathBuf,
    /// Number of classes; defaults to one more than the largest label seen.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Also report mean IOU inside a boundary band of this width.
    #[arg(long)]
    pub trimap: Vec<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// Lines of `unary image gt` paths, relative to the manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Range `start:step:end`, `start:end` or a single value.
    #[arg(long, default_value = "3:1:6")]
    pub w1: String,
    #[arg(long, default_value = "30:10:100")]
    pub sigma_alpha: String,
    #[arg(long, default_value = "3:1:6")]
    pub sigma_beta: String,
    #[arg(long, default_value_t = 3.0)]
    pub w2: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sigma_gamma: f64,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    pub iters: usize,
    #[arg(long, default_value_t = DEFAULT_FACTOR)]
    pub factor: usize,
    #[arg(long, value_enum, default_value_t = BackendArg::Lattice)]
    pub backend: BackendArg,
    /// CSV destination for the full grid; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene description (key = value file).
    #[arg(long)]
    pub spec: PathBuf,
    /// Rendered image (PPM).
    #[arg(long)]
    pub image: PathBuf,
    /// Ground-truth labels (PGM).
    #[arg(long)]
    pub gt: PathBuf,
    /// Corrupted unary costs (DLT1).
    #[arg(long)]
    pub unary: PathBuf,
    /// Write the unary at 1/factor resolution; the scene size must divide.
    #[arg(long, default_value_t = 1)]
    pub factor: usize,
    /// Overrides the seed in the scene file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 375)]
    pub height: usize,
    #[arg(long, default_value_t = 500)]
    pub width: usize,
    #[arg(long, default_value_t = 21)]
    pub labels: usize,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub crf: CrfArgs,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_file_error() {
        EXIT_FILE
    } else {
        EXIT_VALIDATION
    }
}

/// Runs a parsed command, inside a dedicated thread pool when `--threads`
/// is given.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Validation(format!("cannot start {n} threads: {e}")))?
            .install(|| dispatch(cli.command)),
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Refine(a) => cmd_refine(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Brings a unary map to `height × width` by integer bilinear upsampling.
pub fn upsample_unary(
    theta: &FeatureMap,
    factor: usize,
    height: usize,
    width: usize,
) -> Result<UnaryField> {
    let up = upsample_bilinear(theta, factor)?;
    if (up.height(), up.width()) != (height, width) {
        return Err(Error::Shape(format!(
            "unary {}x{} upsampled by {factor} is {}x{}, image is {height}x{width}",
            theta.height(),
            theta.width(),
            up.height(),
            up.width()
        )));
    }
    UnaryField::from_theta(up)
}

fn negate(map: &FeatureMap) -> FeatureMap {
    let (h, w, c) = map.shape();
    FeatureMap::new(h, w, c, map.as_slice().iter().map(|v| -v).collect()).expect("same shape")
}

fn refine_unary(a: &RefineArgs, image: &RgbImage) -> Result<UnaryField> {
    let (h, w) = (image.height(), image.width());
    if let Some(features) = &a.features {
        let head = AsppSpec::read(a.aspp.as_ref().expect("clap enforces --aspp"))?.build()?;
        let scores = aspp_forward(&read_tensor(features)?, &head)?;
        return upsample_unary(&negate(&scores), a.factor, h, w);
    }
    match a.fusion {
        Fusion::None => {
            if a.unary.len() != 1 {
                return Err(Error::Arity(
                    "several --unary inputs need --fusion multiscale-max".into(),
                ));
            }
            upsample_unary(&read_tensor(&a.unary[0])?, a.factor, h, w)
        }
        Fusion::MultiscaleMax => {
            let scores = a
                .unary
                .iter()
                .map(|p| resize_bilinear(&negate(&read_tensor(p)?), h, w))
                .collect::<Result<Vec<_>>>()?;
            UnaryField::from_theta(negate(&multiscale_max_fuse(&scores)?))
        }
    }
}

pub fn cmd_refine(a: &RefineArgs) -> Result<()> {
    let image = read_ppm(&a.image)?;
    let unary = refine_unary(a, &image)?;
    let (state, labels) = run_inference(
        &unary,
        &image,
        &a.crf.params(),
        a.crf.iters,
        a.crf.backend.into(),
    )?;
    write_pgm(&labels, &a.out)?;
    if let Some(q) = &a.q_out {
        write_tensor(state.q(), q)?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let pred = read_pgm(&a.pred)?;
    let gt = read_pgm(&a.gt)?;
    let classes = a
        .classes
        .unwrap_or_else(|| pred.class_bound().max(gt.class_bound()).max(1));
    let cm = confusion(&pred, &gt, classes, None)?;
    let mut csv = String::from("metric,class,value\n");
    for (c, iou) in cm.class_ious().iter().enumerate() {
        if let Some(iou) = iou {
            writeln!(csv, "iou,{c},{iou}").unwrap();
        }
    }
    writeln!(csv, "mean_iou,,{}", mean_iou(&cm)?).unwrap();
    for &width in &a.trimap {
        writeln!(
            csv,
            "trimap_miou,{width},{}",
            trimap_miou(&pred, &gt, classes, width)?
        )
        .unwrap();
    }
    emit(&csv, a.out.as_deref())
}

/// Reads `unary image gt` triples, one per line, paths relative to the
/// manifest's directory. `#` starts a comment.
pub fn read_manifest(path: &Path, factor: usize) -> Result<Vec<ValidationCase>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cases = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [unary, image, gt] = parts[..] else {
            return Err(Error::Validation(format!(
                "{}:{}: expected `unary image gt`",
                path.display(),
                n + 1
            )));
        };
        let image = read_ppm(base.join(image))?;
        let gt = read_pgm(base.join(gt))?;
        let unary = upsample_unary(
            &read_tensor(base.join(unary))?,
            factor,
            image.height(),
            image.width(),
        )?;
        gt.check_classes(unary.labels(), true)?;
        cases.push(ValidationCase { unary, image, gt });
    }
    Ok(cases)
}

pub fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let ranges = SearchRanges {
        w1: ParamRange::parse(&a.w1)?,
        sigma_alpha: ParamRange::parse(&a.sigma_alpha)?,
        sigma_beta: ParamRange::parse(&a.sigma_beta)?,
        w2: a.w2,
        sigma_gamma: a.sigma_gamma,
    };
    let cases = read_manifest(&a.manifest, a.factor)?;
    if cases.is_empty() {
        return Err(Error::Arity(format!(
            "{} lists no cases",
            a.manifest.display()
        )));
    }
    let report = grid_search(&cases, &ranges, a.iters, a.backend.into())?;
    let mut csv = String::from("w1,sigma_alpha,sigma_beta,mean_miou\n");
    for p in &report.points {
        writeln!(
            csv,
            "{},{},{},{}",
            p.w1, p.sigma_alpha, p.sigma_beta, p.mean_miou
        )
        .unwrap();
    }
    emit(&csv, a.out.as_deref())?;
    let b = report.best;
    eprintln!(
        "best w1={} sigma_alpha={} sigma_beta={} w2={} sigma_gamma={} mean_miou={}",
        b.w1, b.sigma_alpha, b.sigma_beta, a.w2, a.sigma_gamma, b.mean_miou
    );
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = SceneSpec::read(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if a.factor == 0 || spec.height % a.factor != 0 || spec.width % a.factor != 0 {
        return Err(Error::Validation(format!(
            "factor {} must divide the scene size {}x{}",
            a.factor, spec.height, spec.width
        )));
    }
    let (image, gt) = render_scene(&spec)?;
    let unary = corrupt_unary(&gt, spec.labels, spec.blur, spec.noise, spec.seed)?;
    let theta = if a.factor == 1 {
        unary.theta().clone()
    } else {
        resize_bilinear(unary.theta(), spec.height / a.factor, spec.width / a.factor)?
    };
    write_ppm(&image, &a.image)?;
    write_pgm(&gt, &a.gt)?;
    write_tensor(&theta, &a.unary)
}

/// A random image of smooth colour blobs and a unary with random costs.
pub fn bench_instance(
    height: usize,
    width: usize,
    labels: usize,
    seed: u64,
) -> Result<(RgbImage, UnaryField)> {
    if labels < 2 {
        return Err(Error::Validation("need at least 2 labels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tint: Vec<[u8; 3]> = (0..labels)
        .map(|_| [rng.random(), rng.random(), rng.random()])
        .collect();
    let cell = 24;
    let image = RgbImage::from_fn(height, width, |y, x| {
        let k = ((y / cell) * 7 + (x / cell) * 13) % labels;
        tint[k]
    });
    let theta: Vec<f32> = (0..height * width * labels)
        .map(|_| rng.random_range(0.0..3.0))
        .collect();
    let unary = UnaryField::from_theta(FeatureMap::new(height, width, labels, theta)?)?;
    Ok((image, unary))
}

pub fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let (image, unary) = bench_instance(a.height, a.width, a.labels, a.seed)?;
    let threads = rayon::current_num_threads();
    let mut csv = String::from(
        "height,width,labels,iters,threads,build_s,splat_s,blur_s,slice_s,exact_s,update_s,total_s,wall_s\n",
    );
    for _ in 0..a.repeat.max(1) {
        let mut t = InferenceTimes::default();
        let start = Instant::now();
        run_inference_timed(
            &unary,
            &image,
            &a.crf.params(),
            a.crf.iters,
            a.crf.backend.into(),
            &mut t,
        )?;
        let wall = start.elapsed();
        writeln!(
            csv,
            "{},{},{},{},{threads},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            a.height,
            a.width,
            a.labels,
            a.crf.iters,
            t.build.as_secs_f64(),
            t.filter.splat.as_secs_f64(),
            t.filter.blur.as_secs_f64(),
            t.filter.slice.as_secs_f64(),
            t.exact.as_secs_f64(),
            t.update.as_secs_f64(),
            t.total().as_secs_f64(),
            wall.as_secs_f64()
        )
        .unwrap();
    }
    emit(&csv, a.out.as_deref())
}
