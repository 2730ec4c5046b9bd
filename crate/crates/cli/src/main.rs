use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use semsplat::camera::Camera;
use semsplat::gaussian::Scene;
use semsplat::image::Image;
use semsplat::io;
use semsplat::metrics::{bench_render, evaluate};
use semsplat::rasterizer::{rasterize_with_mode, RenderMode};
use semsplat::sac::{decode, Decoder};
use semsplat::synth::{generate, read_bundle, write_bundle, SceneSpec};
use semsplat::train::{Dataset, Phase, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "semsplat", version, about = "Semantic Gaussian splatting: data generation, training, rendering and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view bundle.
    Gen {
        /// Scene spec as `key = value` lines over the reference scene; the reference scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a scene and decoder on a bundle and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config as `key = value` lines; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Supervise every pixel with its own feature instead of region-pooled labels.
        #[arg(long)]
        no_sac: bool,
        #[arg(long = "no-3dcr2d")]
        no_3dcr_2d: bool,
        #[arg(long = "no-3dcr3d")]
        no_3dcr_3d: bool,
        #[arg(long)]
        no_pdr: bool,
        /// Weight of the 3D consistency term.
        #[arg(long)]
        w3d: Option<f64>,
        /// Print a progress line every N iterations (0 disables).
        #[arg(long, default_value_t = 1000)]
        progress: usize,
    },
    /// Render one view of a checkpoint to a PPM image.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        /// Index into the checkpoint cameras, or a CAM1 file whose first camera is used.
        #[arg(long)]
        camera: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the decoded class map, one color per class, background black.
        #[arg(long)]
        semantic: Option<PathBuf>,
    },
    /// Score a checkpoint on the held-out views of a bundle.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time color-only and color+semantic rendering.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        camera: usize,
    },
}

struct Checkpoint {
    scene: Scene,
    decoder: Decoder,
    cameras: Vec<Camera>,
    classes: Vec<String>,
}

fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let mut scene = io::scene_from_str(&io::read_text(&dir.join("scene.sgs1"))?)?;
    let decoder = io::decoder_from_str(&io::read_text(&dir.join("decoder.dec1"))?)?;
    let (cameras, background) = io::cameras_from_str(&io::read_text(&dir.join("cameras.txt"))?)?;
    scene.background = background;
    let classes = io::read_text(&dir.join("classes.txt"))?.lines().map(str::to_string).collect();
    Ok(Checkpoint { scene, decoder, cameras, classes })
}

fn write_report(lines: &[(&str, String)], path: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for (k, v) in lines {
        writeln!(text, "{k} {v}").unwrap();
    }
    print!("{text}");
    if let Some(p) = path {
        io::write_file(p, &text)?;
    }
    Ok(())
}

fn gen(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => {
            let mut text = SceneSpec::reference().to_text();
            text.push_str(&io::read_text(p)?);
            SceneSpec::from_text(&text).with_context(|| format!("reading {}", p.display()))?
        }
        None => SceneSpec::reference(),
    };
    let bundle = generate(&spec)?;
    write_bundle(&bundle, out)?;
    write_report(
        &[
            ("train_views", bundle.train.len().to_string()),
            ("test_views", bundle.test.len().to_string()),
            ("objects", spec.object_count.to_string()),
            ("classes", bundle.bank.len().to_string()),
            ("initial_gaussians", bundle.initial.len().to_string()),
        ],
        None,
    )
}

#[allow(clippy::too_many_arguments)]
fn train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    no_sac: bool,
    no_2d: bool,
    no_3d: bool,
    no_pdr: bool,
    w3d: Option<f64>,
    progress: usize,
) -> Result<()> {
    let bundle = read_bundle(data)?;
    let mut cfg = TrainConfig::default();
    if let Some(p) = config {
        cfg.apply_text(&io::read_text(p)?).with_context(|| format!("reading {}", p.display()))?;
    }
    cfg.enable_sac &= !no_sac;
    cfg.enable_3dcr_2d &= !no_2d;
    cfg.enable_3dcr_3d &= !no_3d;
    cfg.enable_pdr &= !no_pdr;
    if let Some(w) = w3d {
        cfg.weight_3d = w;
    }
    cfg.validate()?;

    let dataset = Dataset::load(&bundle, &bundle.bank, cfg.supervision())?;
    let mut trainer = Trainer::new(bundle.initial.clone(), &dataset, cfg.clone())?;
    let mut log = String::from("iteration phase view loss_rgb loss_sem loss_2d loss_3d total gaussians\n");
    while !trainer.is_done() {
        let l = trainer.step()?;
        let phase = match l.phase {
            Phase::Reconstruction => 1,
            Phase::Consistency => 2,
        };
        writeln!(
            log,
            "{} {phase} {} {} {} {} {} {} {}",
            l.iteration, l.view, l.loss_rgb, l.loss_sem, l.loss_2d, l.loss_3d, l.total, l.gaussian_count
        )
        .unwrap();
        if progress > 0 && l.iteration % progress == 0 {
            eprintln!("iteration {} phase {phase} total {:.5} gaussians {}", l.iteration, l.total, l.gaussian_count);
        }
    }
    let result = trainer.finish()?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::write_file(&out.join("scene.sgs1"), io::scene_to_string(&result.scene))?;
    io::write_file(&out.join("decoder.dec1"), io::decoder_to_string(&result.decoder))?;
    let cams: Vec<Camera> = bundle.views().map(|v| v.camera.clone()).collect();
    io::write_file(&out.join("cameras.txt"), io::cameras_to_string(&cams, result.scene.background))?;
    io::write_file(&out.join("classes.txt"), bundle.bank.labels.join("\n") + "\n")?;
    io::write_file(&out.join("config.txt"), cfg.to_text())?;
    io::write_file(&out.join("log.txt"), log)?;
    let last = result.log.last();
    write_report(
        &[
            ("iterations", result.log.len().to_string()),
            ("gaussian_count", result.scene.len().to_string()),
            ("final_loss", last.map_or(0.0, |l| l.total).to_string()),
        ],
        None,
    )
}

/// Evenly spaced hues, fixed per class index.
fn class_color(c: usize) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 10] = [
        [0.90, 0.10, 0.10],
        [0.10, 0.70, 0.20],
        [0.15, 0.35, 0.95],
        [0.95, 0.80, 0.10],
        [0.70, 0.20, 0.80],
        [0.10, 0.80, 0.85],
        [0.95, 0.50, 0.10],
        [0.55, 0.35, 0.15],
        [0.95, 0.55, 0.75],
        [0.60, 0.60, 0.60],
    ];
    PALETTE[c % PALETTE.len()]
}

fn render(ckpt: &Path, camera: &str, out: &Path, semantic: Option<&Path>) -> Result<()> {
    let ck = read_checkpoint(ckpt)?;
    let cam = match camera.parse::<usize>() {
        Ok(i) => ck.cameras.get(i).cloned().with_context(|| format!("checkpoint has {} cameras", ck.cameras.len()))?,
        Err(_) => {
            let (cams, _) = io::cameras_from_str(&io::read_text(Path::new(camera))?)?;
            cams.into_iter().next().context("pose file holds no camera")?
        }
    };
    let mode = if semantic.is_some() { RenderMode::ColorAndSemantic } else { RenderMode::ColorOnly };
    let output = rasterize_with_mode(&ck.scene, &cam, mode);
    let image = Image::new(output.width, output.height, output.color.clone())?;
    io::write_file(out, io::ppm_to_bytes(&image))?;
    if let Some(path) = semantic {
        let labels = decode(&output.feature, output.width, output.height, &ck.decoder)?.argmax();
        let mut data = Vec::with_capacity(labels.data.len() * 3);
        for (&l, &t) in labels.data.iter().zip(&output.final_transmittance) {
            data.extend(if t > 0.5 { [0.0; 3] } else { class_color(l as usize) });
        }
        io::write_file(path, io::ppm_to_bytes(&Image::new(output.width, output.height, data)?))?;
        for (c, name) in ck.classes.iter().enumerate() {
            let [r, g, b] = class_color(c).map(|v| (v * 255.0).round() as u8);
            println!("class {c} {name} {r} {g} {b}");
        }
    }
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, report: Option<&Path>) -> Result<()> {
    let ck = read_checkpoint(ckpt)?;
    let bundle = read_bundle(data)?;
    if bundle.test.is_empty() {
        bail!("bundle {} has no held-out views", data.display());
    }
    let r = evaluate(&ck.scene, &ck.decoder, &bundle.eval_views())?;
    println!("# per-view means over held-out views; classes absent from a view's ground truth are excluded");
    write_report(
        &[
            ("miou", r.miou.to_string()),
            ("macc", r.macc.to_string()),
            ("psnr", r.psnr.to_string()),
            ("ssim", r.ssim.to_string()),
            ("views", r.views.to_string()),
            ("gaussian_count", ck.scene.len().to_string()),
        ],
        report,
    )
}

fn bench(ckpt: &Path, iters: usize, warmup: usize, camera: usize) -> Result<()> {
    let ck = read_checkpoint(ckpt)?;
    let cam = ck.cameras.get(camera).with_context(|| format!("checkpoint has {} cameras", ck.cameras.len()))?;
    let r = bench_render(&ck.scene, cam, warmup, iters)?;
    write_report(
        &[
            ("gaussian_count", r.gaussian_count.to_string()),
            ("width", r.width.to_string()),
            ("height", r.height.to_string()),
            ("semantic_dim", r.semantic_dim.to_string()),
            ("fps_color", r.color.median.to_string()),
            ("fps_color_p5", r.color.p5.to_string()),
            ("fps_color_p95", r.color.p95.to_string()),
            ("fps_semantic", r.semantic.median.to_string()),
            ("fps_semantic_p5", r.semantic.p5.to_string()),
            ("fps_semantic_p95", r.semantic.p95.to_string()),
            ("semantic_ratio", r.semantic_ratio().to_string()),
        ],
        None,
    )
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen { spec, out } => gen(spec.as_deref(), &out),
        Command::Train { data, config, out, no_sac, no_3dcr_2d, no_3dcr_3d, no_pdr, w3d, progress } => {
            train(&data, config.as_deref(), &out, no_sac, no_3dcr_2d, no_3dcr_3d, no_pdr, w3d, progress)
        }
        Command::Render { ckpt, camera, out, semantic } => render(&ckpt, &camera, &out, semantic.as_deref()),
        Command::Eval { ckpt, data, report } => eval(&ckpt, &data, report.as_deref()),
        Command::Bench { ckpt, iters, warmup, camera } => bench(&ckpt, iters, warmup, camera),
    }
}
