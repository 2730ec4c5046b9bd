//! Segmentation and image-quality metrics, and render throughput timing.

use std::time::Instant;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::Scene;
use crate::image::{Image, LabelMap, UNLABELED};
use crate::loss::ssim;
use crate::rasterizer::{rasterize_with_mode, RenderMode};
use crate::sac::{decode, Decoder};

pub const PSNR_CAP: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SegMetrics {
    pub classes: usize,
    /// `confusion[t * C + p]` counts pixels of true class `t` predicted as `p`.
    pub confusion: Vec<u64>,
    /// `None` for classes absent from the truth; only present classes enter the means.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
}

/// Per-class IoU and recall over the classes present in `truth`. Pixels
/// unlabeled in `truth` are ignored; an unlabeled prediction counts as a miss
/// for the true class. Predicting an absent class still costs the true class.
pub fn segmentation_metrics(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<SegMetrics> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let mut confusion = vec![0u64; classes * classes];
    let mut missed = vec![0u64; classes];
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        if t == UNLABELED {
            continue;
        }
        let t = t as usize;
        if t >= classes {
            return Err(Error::invalid(format!("truth label {t} outside {classes} classes")));
        }
        match p {
            UNLABELED => missed[t] += 1,
            p if (p as usize) < classes => confusion[t * classes + p as usize] += 1,
            p => return Err(Error::invalid(format!("predicted label {p} outside {classes} classes"))),
        }
    }
    let mut iou = vec![None; classes];
    let (mut iou_sum, mut acc_sum, mut n) = (0.0, 0.0, 0usize);
    for c in 0..classes {
        let tp = confusion[c * classes + c];
        let truth_total: u64 = confusion[c * classes..(c + 1) * classes].iter().sum::<u64>() + missed[c];
        let pred_total: u64 = (0..classes).map(|t| confusion[t * classes + c]).sum();
        if truth_total == 0 {
            continue;
        }
        let v = tp as f64 / (truth_total + pred_total - tp) as f64;
        iou[c] = Some(v);
        iou_sum += v;
        acc_sum += tp as f64 / truth_total as f64;
        n += 1;
    }
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(SegMetrics { classes, confusion, iou, miou: mean(iou_sum), macc: mean(acc_sum) })
}

pub fn psnr(pred: &Image, truth: &Image) -> Result<f64> {
    pred.same_shape(truth)?;
    let mse = pred.data.iter().zip(&truth.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// A held-out view with its ground truth.
#[derive(Clone, Copy, Debug)]
pub struct EvalView<'a> {
    pub camera: &'a Camera,
    pub target: &'a Image,
    pub truth: &'a LabelMap,
}

/// Per-view metrics averaged over views.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub miou: f64,
    pub macc: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub views: usize,
}

/// Renders every view, labels each pixel with the decoder's argmax class and scores it.
pub fn evaluate(scene: &Scene, decoder: &Decoder, views: &[EvalView]) -> Result<EvalReport> {
    let mut sum = [0.0; 4];
    for v in views {
        let out = rasterize_with_mode(scene, v.camera, RenderMode::ColorAndSemantic);
        let img = Image::new(out.width, out.height, out.color.clone())?;
        let pred = decode(&out.feature, out.width, out.height, decoder)?.argmax();
        let seg = segmentation_metrics(&pred, v.truth, decoder.classes)?;
        sum[0] += seg.miou;
        sum[1] += seg.macc;
        sum[2] += psnr(&img, v.target)?;
        sum[3] += ssim(&img, v.target)?;
    }
    let n = views.len().max(1) as f64;
    Ok(EvalReport { miou: sum[0] / n, macc: sum[1] / n, psnr: sum[2] / n, ssim: sum[3] / n, views: views.len() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpsStats {
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

impl FpsStats {
    fn from_seconds(mut secs: Vec<f64>) -> Self {
        let fps = |s: f64| 1.0 / s.max(1e-9);
        secs.sort_by(f64::total_cmp);
        let at = |q: f64| secs[((secs.len() - 1) as f64 * q).round() as usize];
        // slow frames are the low-FPS percentile
        Self { median: fps(at(0.5)), p5: fps(at(0.95)), p95: fps(at(0.05)) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub gaussian_count: usize,
    pub width: usize,
    pub height: usize,
    pub semantic_dim: usize,
    pub color: FpsStats,
    pub semantic: FpsStats,
}

impl BenchReport {
    pub fn semantic_ratio(&self) -> f64 {
        self.semantic.median / self.color.median
    }
}

/// Times repeated forward renders, alternating modes per iteration so both see the same machine conditions.
pub fn bench_render(scene: &Scene, camera: &Camera, warmup: usize, iters: usize) -> Result<BenchReport> {
    if iters < 10 {
        return Err(Error::invalid(format!("need at least 10 timed iterations, got {iters}")));
    }
    for _ in 0..warmup {
        rasterize_with_mode(scene, camera, RenderMode::ColorOnly);
        rasterize_with_mode(scene, camera, RenderMode::ColorAndSemantic);
    }
    let mut color = Vec::with_capacity(iters);
    let mut semantic = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(rasterize_with_mode(scene, camera, RenderMode::ColorOnly));
        color.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        std::hint::black_box(rasterize_with_mode(scene, camera, RenderMode::ColorAndSemantic));
        semantic.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        gaussian_count: scene.len(),
        width: camera.width,
        height: camera.height,
        semantic_dim: scene.semantic_dim,
        color: FpsStats::from_seconds(color),
        semantic: FpsStats::from_seconds(semantic),
    })
}
