//! `pano360`: geometry tools, dataset builder, training, inference and
//! evaluation for four-view panorama synthesis.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! precondition error, 3 runtime abort (non-finite training loss).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pano360::checkpoint::StageCheckpoint;
use pano360::dataset::{build_dataset, normalize, BuildOptions, DatasetManifest, Split};
use pano360::demo::{seam_demo, SeamDemoOptions};
use pano360::geometry::{
    cubemap_to_equirect, embed_view_with_fov, equirect_to_cubemap, render_view, CubeMapFaces, EquirectPanorama,
    FaceKey, FovScaleLaw, ValueRange, ViewSet,
};
use pano360::image::Image;
use pano360::metrics::{evaluate, EvalFov, EvalOptions};
use pano360::synthetic::{natural_panorama, write_corpus};
use pano360::training::{train_stage, Pipeline, TrainConfig, TrainOptions};
use pano360::{Error, Stage};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ABORT: u8 = 3;
const CACHE_ENV: &str = "PANO360_CACHE";

#[derive(Parser, Debug)]
#[command(name = "pano360", version, about = "Panorama synthesis from four compass-rose views")]
struct Cli {
    /// Seed for every random choice made by the command (overrides the
    /// training config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Projection and view-embedding utilities.
    #[command(subcommand)]
    Geom(Geom),
    /// Build training/test samples from a directory of panoramas.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Field-of-view classifier.
    #[command(subcommand)]
    Fov(FovCmd),
    /// Train one stage. Medium and large need the previous stage's checkpoint.
    Train(TrainArgs),
    /// Synthesize a panorama from four views (north, west, south, east).
    Infer(InferArgs),
    /// Score a checkpoint on a manifest split (SSIM, PSNR, histograms).
    Eval(EvalArgs),
    /// Write procedural outdoor panoramas for experiments and tests.
    Synth(SynthArgs),
    /// Compare cube-map and equirect output formats on a tiny model.
    DemoSeams(DemoArgs),
}

#[derive(Subcommand, Debug)]
enum Geom {
    /// Equirect panorama → six cube faces `face_<name>.png`.
    E2c {
        #[arg(long)]
        face_size: usize,
        input: PathBuf,
        out_dir: PathBuf,
    },
    /// Six cube faces `face_<name>.png` → equirect panorama (width = 2·height).
    C2e {
        #[arg(long)]
        height: usize,
        in_dir: PathBuf,
        output: PathBuf,
    },
    /// Render a square perspective view of a panorama.
    View {
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        pitch: f64,
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
        /// Output side length in pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Place a view at the center of a cube face according to its FOV.
    Embed {
        #[arg(long)]
        fov: f64,
        #[arg(long)]
        face_size: usize,
        /// Fill for the border, in [-1, 1] (0 is mid-gray, -1 black).
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        fill: f32,
        /// `tangent` or `linear`.
        #[arg(long, default_value = "tangent")]
        law: FovScaleLaw,
        input: PathBuf,
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    /// Render views and ground-truth pyramids; writes `<out>/manifest.jsonl`.
    Build {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of records in the training split.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value_t = 45.0)]
        fov_min: f64,
        #[arg(long, default_value_t = 75.0)]
        fov_max: f64,
        #[arg(long, default_value_t = 256)]
        view_size: usize,
        #[arg(long, default_value = "tangent")]
        fov_law: FovScaleLaw,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        fill: f32,
    },
}

#[derive(Subcommand, Debug)]
enum FovCmd {
    /// Print the predicted class, degrees and logits.
    Predict {
        /// Four views in north, west, south, east order.
        #[arg(long, num_args = 4, required = true)]
        views: Vec<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    stage: Stage,
    /// Manifest file or dataset directory.
    #[arg(long)]
    manifest: PathBuf,
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Previous-stage checkpoint (unify) or same-stage checkpoint (resume).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Final checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV (default: `<out>.losses.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    /// Four views in north, west, south, east order.
    #[arg(long, num_args = 4, required = true)]
    views: Vec<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output scale; defaults to the checkpoint's stage.
    #[arg(long)]
    stage: Option<Stage>,
    /// Use this FOV instead of the classifier's prediction.
    #[arg(long)]
    fov: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Report CSV; histogram CSVs are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// Scale to evaluate at (default large).
    #[arg(long, default_value = "large")]
    stage: Stage,
    /// Use the manifest's FOV instead of the classifier's prediction.
    #[arg(long)]
    recorded_fov: bool,
    /// Also write PNG bar charts of the histograms.
    #[arg(long)]
    plots: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Directory of panoramas; procedural ones are used when omitted.
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    steps: u64,
    #[arg(long, default_value_t = 32)]
    face_size: usize,
    #[arg(long, default_value_t = 75.0)]
    fov: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => EXIT_USAGE,
        Error::NonFinite { .. } => EXIT_ABORT,
        _ => EXIT_DATA,
    }
}

fn load_panorama(path: &Path) -> Result<EquirectPanorama, Error> {
    EquirectPanorama::new(Image::load(path)?, ValueRange::Unit8)
}

fn load_views(paths: &[PathBuf]) -> Result<ViewSet, Error> {
    let v = paths
        .iter()
        .map(|p| Image::load(p).map(|i| normalize(&i)))
        .collect::<Result<Vec<_>, _>>()?;
    let [n, w, s, e]: [Image; 4] = v
        .try_into()
        .map_err(|_| Error::InvalidArgument("expected four views".into()))?;
    ViewSet::new([n, w, s, e], None)
}

fn face_path(dir: &Path, key: FaceKey) -> PathBuf {
    dir.join(format!("face_{}.png", key.name()))
}

fn run_geom(cmd: Geom) -> Result<(), Error> {
    match cmd {
        Geom::E2c {
            face_size,
            input,
            out_dir,
        } => {
            let faces = equirect_to_cubemap(&load_panorama(&input)?, face_size)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
            for key in FaceKey::ALL {
                faces.face(key).save(face_path(&out_dir, key))?;
            }
            println!("wrote 6 faces of {face_size}x{face_size} to {}", out_dir.display());
        }
        Geom::C2e { height, in_dir, output } => {
            let faces = FaceKey::ALL
                .iter()
                .map(|k| Image::load(face_path(&in_dir, *k)))
                .collect::<Result<Vec<_>, _>>()?;
            let p = cubemap_to_equirect(&CubeMapFaces::new(faces, ValueRange::Unit8)?, height)?;
            p.image().save(&output)?;
            println!("wrote {}x{} panorama to {}", p.width(), p.height(), output.display());
        }
        Geom::View {
            yaw,
            pitch,
            fov,
            size,
            input,
            output,
        } => {
            render_view(&load_panorama(&input)?, yaw, pitch, fov, size)?.save(&output)?;
        }
        Geom::Embed {
            fov,
            face_size,
            fill,
            law,
            input,
            output,
        } => {
            let view = normalize(&Image::load(&input)?);
            let e = embed_view_with_fov(&view, fov, face_size, fill, law)?;
            pano360::dataset::denormalize(&e.face).save(&output)?;
            println!("block {} px, {} fill pixels", e.block, e.fill_count());
        }
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn cache_dir(out: &Path) -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| {
            out.parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
        })
}

fn run_train(args: TrainArgs, seed: Option<u64>) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let init = args.init.as_ref().map(StageCheckpoint::load).transpose()?;
    let log = args.log.unwrap_or_else(|| {
        let mut name = args.out.file_name().unwrap_or_default().to_os_string();
        name.push(".losses.csv");
        args.out.with_file_name(name)
    });
    let opts = TrainOptions {
        stage: args.stage,
        manifest: args.manifest,
        config,
        init,
        cache_dir: cache_dir(&args.out),
        out: args.out,
        log: Some(log.clone()),
    };
    let outcome = train_stage(&opts)?;
    match outcome.losses.last() {
        Some(l) => println!(
            "{} stage: {} steps, final pix {:.5}, d_loss {:.5}; checkpoint {}, log {}",
            opts.stage,
            outcome.checkpoint.step,
            l.pix,
            l.d_loss,
            opts.out.display(),
            log.display()
        ),
        None => println!(
            "{} stage already complete; checkpoint {}",
            opts.stage,
            opts.out.display()
        ),
    }
    Ok(())
}

fn run_infer(args: InferArgs) -> Result<(), Error> {
    let ckpt = StageCheckpoint::load(&args.ckpt)?;
    let stage = args.stage.unwrap_or(ckpt.stage);
    if stage > ckpt.stage {
        return Err(Error::Precondition(format!(
            "the checkpoint covers scales up to {}, not {stage}",
            ckpt.stage
        )));
    }
    let views = load_views(&args.views)?;
    let out = Pipeline::from_checkpoint(&ckpt, stage)?.run(&views, args.fov)?;
    out.panorama.image().save(&args.out)?;
    println!(
        "predicted fov {} (class {}), synthesized with {}; wrote {}x{} panorama to {}",
        out.prediction.predicted_fov,
        out.prediction.predicted_class,
        out.fov_deg,
        out.panorama.width(),
        out.panorama.height(),
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), Error> {
    let ckpt = StageCheckpoint::load(&args.ckpt)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let opts = EvalOptions {
        split: args.split,
        stage: args.stage,
        fov: if args.recorded_fov {
            EvalFov::Recorded
        } else {
            EvalFov::Predicted
        },
    };
    let report = evaluate(&ckpt, &manifest, opts)?;
    let written = report.write(&args.out, args.plots)?;
    println!(
        "{} records: mean SSIM {:.4}, mean PSNR {:.4} dB, mean L1 {:.5}",
        report.records.len(),
        report.mean_ssim,
        report.mean_psnr,
        report.mean_l1
    );
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn run_demo(args: DemoArgs, seed: u64) -> Result<(), Error> {
    let panos = match &args.src {
        Some(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| io_err(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            files.iter().map(|p| load_panorama(p)).collect::<Result<Vec<_>, _>>()?
        }
        None => (0..2)
            .map(|i| natural_panorama(4 * args.face_size, seed + i))
            .collect::<Result<_, _>>()?,
    };
    let opts = SeamDemoOptions {
        face_size: args.face_size,
        fov_deg: args.fov,
        steps: args.steps,
        seed,
        ..SeamDemoOptions::default()
    };
    let d = seam_demo(&panos, &opts)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    d.truth.save(args.out.join("truth.png"))?;
    d.cubemap_warped.save(args.out.join("cubemap_warped.png"))?;
    d.equirect.save(args.out.join("equirect.png"))?;
    d.montage().save(args.out.join("montage.png"))?;
    println!(
        "seam score (boundary / interior neighbour difference): truth {:.3}, cube-map model {:.3}, equirect model {:.3}",
        d.truth_seam, d.cubemap_seam, d.equirect_seam
    );
    println!(
        "wrote truth.png, cubemap_warped.png, equirect.png, montage.png to {}",
        args.out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let seed = cli.seed;
    match cli.command {
        Command::Geom(g) => run_geom(g),
        Command::Dataset(DatasetCmd::Build {
            src,
            out,
            split,
            fov_min,
            fov_max,
            view_size,
            fov_law,
            fill,
        }) => {
            let opts = BuildOptions {
                split_ratio: split,
                fov_min,
                fov_max,
                seed: seed.unwrap_or(0),
                view_size,
                fov_law,
                fill_value: fill,
                ..BuildOptions::new(src, out)
            };
            let m = build_dataset(&opts)?;
            println!(
                "{} records ({} train, {} test, {} skipped) in {}",
                m.records.len(),
                m.split(Split::Train).len(),
                m.split(Split::Test).len(),
                m.header.skipped.len(),
                opts.out.display()
            );
            Ok(())
        }
        Command::Fov(FovCmd::Predict { views, ckpt }) => {
            let ckpt = StageCheckpoint::load(&ckpt)?;
            let pred = Pipeline::from_checkpoint(&ckpt, Stage::Small)?.predict_fov(&load_views(&views)?);
            println!("class {}", pred.predicted_class);
            println!("fov_deg {}", pred.predicted_fov);
            let logits: Vec<String> = pred.logits.iter().map(|v| format!("{v}")).collect();
            println!("logits {}", logits.join(" "));
            Ok(())
        }
        Command::Train(a) => run_train(a, seed),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Synth(a) => {
            let files = write_corpus(&a.out, a.count, a.height, seed.unwrap_or(0))?;
            println!("wrote {} panoramas to {}", files.len(), a.out.display());
            Ok(())
        }
        Command::DemoSeams(a) => run_demo(a, seed.unwrap_or(0)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
