use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gave::alignment::gradcheck;
use gave::cloud::PointCloud;
use gave::config::PipelineConfig;
use gave::extract::{init_weights, GaveModel};
use gave::frame::RgbdFrame;
use gave::io;
use gave::metrics::{feature_match_recall, pair_errors, EvalSummary, FmrPair, FMR_TAU1, FMR_TAU2};
use gave::pipeline::{register_pair, FeatureSource, Registration};
use gave::render::render_points;
use gave::synth::{gen_scene, SceneParams};
use gave::Error;

const PURPLE: [f32; 3] = [0.5, 0.0, 0.5];
const YELLOW: [f32; 3] = [1.0, 0.85, 0.0];

#[derive(Parser)]
#[command(name = "gave", version, about = "Geometry-aware RGB-D registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the pose mapping the reference camera onto the target camera.
    Register(RegisterArgs),
    /// Score estimated poses against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic frame pair with its ground-truth pose.
    Synth(SynthArgs),
    /// Compare the alignment derivative with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(Args)]
struct ModelArgs {
    /// Trained weights in LLTW format.
    #[arg(long, conflicts_with = "seed")]
    weights: Option<PathBuf>,
    /// Use deterministically initialized weights instead of a weight file.
    #[arg(long)]
    seed: Option<u64>,
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (`key=value`), applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    ref_rgb: PathBuf,
    #[arg(long)]
    ref_depth: PathBuf,
    #[arg(long)]
    tgt_rgb: PathBuf,
    #[arg(long)]
    tgt_depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_pose: PathBuf,
    /// Target cloud (yellow) merged with the registered reference cloud (purple).
    #[arg(long)]
    out_ply: Option<PathBuf>,
    /// Correspondence triples `ref_index tgt_index weight`.
    #[arg(long)]
    dump_correspondences: Option<PathBuf>,
    /// Reference cloud rendered into the target view: writes PREFIX_rgb.png and PREFIX_depth.png.
    #[arg(long, value_name = "PREFIX")]
    dump_render: Option<PathBuf>,
    /// Ground-truth pose file; descriptors come from world coordinates instead of the network.
    #[arg(long, value_name = "GT_POSE")]
    oracle_features: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// One pair per line: `ref_rgb ref_depth tgt_rgb tgt_depth intrinsics [est_pose]`.
    #[arg(long)]
    pairs: PathBuf,
    /// One ground-truth pose path per line, in manifest order.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Derive descriptors from the ground-truth poses.
    #[arg(long, conflicts_with_all = ["weights", "seed"])]
    oracle_features: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    /// Comma-separated `key=value` scene parameters.
    #[arg(long, default_value = "")]
    params: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: 1, msg: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(m: &ModelArgs) -> CliResult<PipelineConfig> {
    let mut cfg = match &m.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for a in &m.set {
        cfg.apply_assignment(a)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(m: &ModelArgs, cfg: &PipelineConfig) -> CliResult<Option<GaveModel>> {
    let weights = match (&m.weights, m.seed) {
        (Some(path), _) => io::load_model_weights(path, &cfg.llt).map_err(|e| match e {
            Error::Io { .. } => Failure { code: 2, msg: format!("cannot read weights: {e}") },
            other => other.into(),
        })?,
        (None, Some(seed)) => init_weights(seed, &cfg.llt)?,
        (None, None) => return Ok(None),
    };
    Ok(Some(GaveModel::new(&weights, &cfg.llt)?))
}

fn merged_cloud(reg: &Registration) -> PointCloud {
    let mut positions = reg.target.positions.clone();
    positions.extend(reg.pose.transform(&reg.reference.positions));
    let mut colors = vec![YELLOW; reg.target.len()];
    colors.resize(positions.len(), PURPLE);
    PointCloud::from_positions(positions).with_colors(colors)
}

fn register(a: &RegisterArgs) -> CliResult<()> {
    let cfg = load_config(&a.model)?;
    let k = io::load_intrinsics(&a.intrinsics)?;
    let fr = io::load_rgbd(&a.ref_rgb, &a.ref_depth, &k)?;
    let ft = io::load_rgbd(&a.tgt_rgb, &a.tgt_depth, &k)?;
    let model;
    let source = match &a.oracle_features {
        Some(gt) => FeatureSource::oracle_from_gt(&io::load_pose(gt)?),
        None => {
            model = load_model(&a.model, &cfg)?
                .ok_or_else(|| Failure { code: 1, msg: "one of --weights, --seed or --oracle-features is required".into() })?;
            FeatureSource::Model(&model)
        }
    };
    let reg = register_pair(&fr, &ft, source, &cfg)?;
    io::save_pose(&reg.pose, &a.out_pose)?;
    if let Some(p) = &a.out_ply {
        io::save_ply(&merged_cloud(&reg), p)?;
    }
    if let Some(p) = &a.dump_correspondences {
        io::save_correspondences(&reg.correspondences, p)?;
    }
    if let Some(prefix) = &a.dump_render {
        let r = render_points(&fr.unproject(), &reg.pose, &k)?;
        io::save_rgb_png(r.width, r.height, &r.rgb, &suffixed(prefix, "_rgb.png"))?;
        io::save_depth_png(r.width, r.height, &r.depth, &suffixed(prefix, "_depth.png"))?;
    }
    print!("{}", io::format_pose(&reg.pose));
    Ok(())
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct ManifestEntry {
    line: usize,
    ref_rgb: PathBuf,
    ref_depth: PathBuf,
    tgt_rgb: PathBuf,
    tgt_depth: PathBuf,
    intrinsics: PathBuf,
    estimate: Option<PathBuf>,
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", path.display()) })
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn parse_manifest(path: &Path) -> CliResult<Vec<ManifestEntry>> {
    let text = read_text(path)?;
    let dir = base_dir(path);
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<PathBuf> = l.split_whitespace().map(|s| dir.join(s)).collect();
        if f.len() != 5 && f.len() != 6 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("expected 5 or 6 fields (ref_rgb ref_depth tgt_rgb tgt_depth intrinsics [est_pose]), found {}", f.len()),
            }
            .into());
        }
        let mut f = f.into_iter();
        let mut next = || f.next();
        out.push(ManifestEntry {
            line,
            ref_rgb: next().unwrap(),
            ref_depth: next().unwrap(),
            tgt_rgb: next().unwrap(),
            tgt_depth: next().unwrap(),
            intrinsics: next().unwrap(),
            estimate: next(),
        });
    }
    if out.is_empty() {
        return Err(Error::Parse { path: path.to_path_buf(), line: 0, msg: "manifest lists no pairs".into() }.into());
    }
    Ok(out)
}

fn parse_gt_list(path: &Path, expected: usize) -> CliResult<Vec<PathBuf>> {
    let text = read_text(path)?;
    let dir = base_dir(path);
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        if l.split_whitespace().count() != 1 {
            return Err(Error::Parse { path: path.to_path_buf(), line, msg: "expected a single pose path".into() }.into());
        }
        out.push(dir.join(l));
    }
    if out.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: text.lines().count(),
            msg: format!("{} ground-truth poses for {} manifest pairs", out.len(), expected),
        }
        .into());
    }
    Ok(out)
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let cfg = load_config(&a.model)?;
    let entries = parse_manifest(&a.pairs)?;
    let gts = parse_gt_list(&a.gt, entries.len())?;
    let model = if a.oracle_features { None } else { load_model(&a.model, &cfg)? };
    let with_features = a.oracle_features || model.is_some();

    let mut errors = Vec::with_capacity(entries.len());
    let mut regs = Vec::new();
    let mut gt_poses = Vec::new();
    for (e, gt_path) in entries.iter().zip(&gts) {
        let at_line = |err: Error| Failure { code: 1, msg: format!("{}:{}: {err}", a.pairs.display(), e.line) };
        let gt = io::load_pose(gt_path).map_err(at_line)?;
        let k = io::load_intrinsics(&e.intrinsics).map_err(at_line)?;
        let fr = io::load_rgbd(&e.ref_rgb, &e.ref_depth, &k).map_err(at_line)?;
        let reg = if with_features {
            let ft = io::load_rgbd(&e.tgt_rgb, &e.tgt_depth, &k).map_err(at_line)?;
            let source = match &model {
                Some(m) => FeatureSource::Model(m),
                None => FeatureSource::oracle_from_gt(&gt),
            };
            Some(register_pair(&fr, &ft, source, &cfg).map_err(at_line)?)
        } else {
            None
        };
        let est = match (&e.estimate, &reg) {
            (Some(p), _) => io::load_pose(p).map_err(at_line)?,
            (None, Some(r)) => r.pose,
            (None, None) => {
                return Err(Failure {
                    code: 1,
                    msg: format!(
                        "{}:{}: no estimated pose; add one to the line or pass --weights, --seed or --oracle-features",
                        a.pairs.display(),
                        e.line
                    ),
                })
            }
        };
        errors.push(pair_errors(&est, &gt, &fr.unproject())?);
        if let Some(r) = reg {
            regs.push(r);
            gt_poses.push(gt);
        }
    }
    let fmr = if with_features {
        let pairs: Vec<FmrPair<'_>> = regs
            .iter()
            .zip(&gt_poses)
            .map(|(r, gt)| FmrPair { correspondences: &r.correspondences, reference: &r.reference, target: &r.target, gt_pose: gt })
            .collect();
        Some(feature_match_recall(&pairs, FMR_TAU1, FMR_TAU2)?.recall)
    } else {
        None
    };
    let report = EvalSummary::new(&errors, fmr)?.to_report();
    fs::write(&a.out, &report).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", a.out.display()) })?;
    print!("{report}");
    Ok(())
}

fn save_frame(frame: &RgbdFrame, dir: &Path, name: &str) -> gave::Result<()> {
    io::save_rgbd(frame, &dir.join(format!("{name}_rgb.png")), &dir.join(format!("{name}_depth.png")))
}

fn synth(a: &SynthArgs) -> CliResult<()> {
    let params = SceneParams::parse(&a.params)?;
    let pair = gen_scene(a.seed, &params)?;
    fs::create_dir_all(&a.out).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", a.out.display()) })?;
    save_frame(&pair.frame_r, &a.out, "ref")?;
    save_frame(&pair.frame_t, &a.out, "tgt")?;
    io::save_intrinsics(pair.frame_r.intrinsics(), &a.out.join("intrinsics.txt"))?;
    io::save_pose(&pair.pose_gt, &a.out.join("gt_pose.txt"))?;
    let write = |name: &str, text: &str| {
        let p = a.out.join(name);
        fs::write(&p, text).map_err(|e| Failure { code: 1, msg: format!("{}: {e}", p.display()) })
    };
    write("pairs.txt", "ref_rgb.png ref_depth.png tgt_rgb.png tgt_depth.png intrinsics.txt\n")?;
    write("gt.txt", "gt_pose.txt\n")?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let r = gradcheck(a.seed, a.trials)?;
    println!("trials={}", r.trials);
    println!("points_per_trial={}", r.points_per_trial);
    println!("max_relative_error={:e}", r.max_relative_error);
    if r.max_relative_error < 1e-4 {
        Ok(())
    } else {
        Err(Failure { code: 1, msg: format!("max relative error {:e} exceeds 1e-4", r.max_relative_error) })
    }
}

fn selftest() -> CliResult<()> {
    let results = gave::selftest::run_all();
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        if r.passed {
            println!("PASS {}", r.name);
        } else {
            println!("FAIL {}: {}", r.name, r.detail);
        }
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure { code: 1, msg: format!("{failed} of {} checks failed", results.len()) })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Register(a) => register(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("gave: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
