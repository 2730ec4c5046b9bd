//! Adaptive density control: clone small Gaussians and split large ones where
//! the screen-space positional gradient is high, and drop transparent ones.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::gaussian::{rotation_matrix, Scene};
use crate::rasterizer::RenderGradients;

/// Scale divisor applied to both children of a split.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Screen-space gradient magnitudes accumulated between densify events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self { grad_sum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn accumulate(&mut self, grads: &RenderGradients) {
        for i in 0..self.grad_sum.len().min(grads.len()) {
            if grads.hit_count[i] > 0 {
                self.grad_sum[i] += grads.mean2d_grad_norm[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    pub opacity_prune: f64,
    pub percent_dense: f64,
    pub extent: f64,
}

/// Indices selected for densification: `(clone, split)`.
pub fn densify_candidates(scene: &Scene, stats: &DensifyStats, multiplier: f64, params: &DensifyParams) -> (Vec<usize>, Vec<usize>) {
    let threshold = params.grad_threshold * multiplier;
    let limit = params.percent_dense * params.extent;
    let mut clone = Vec::new();
    let mut split = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        if stats.mean(i) <= threshold {
            continue;
        }
        let max_scale = g.scale().into_iter().fold(0.0, f64::max);
        if max_scale <= limit {
            clone.push(i);
        } else {
            split.push(i);
        }
    }
    (clone, split)
}

/// Mutates `scene` and returns the report plus, per surviving Gaussian, the
/// index it was carried over from (`None` for newly created ones).
pub fn densify_and_prune(
    scene: &mut Scene,
    stats: &DensifyStats,
    multiplier: f64,
    params: &DensifyParams,
    rng: &mut impl Rng,
) -> (DensifyReport, Vec<Option<usize>>) {
    let (clone, split) = densify_candidates(scene, stats, multiplier, params);
    let mut report = DensifyReport { cloned: clone.len(), split: split.len(), pruned: 0 };
    let mut is_split = vec![false; scene.len()];
    split.iter().for_each(|&i| is_split[i] = true);

    let mut candidates: Vec<(Option<usize>, crate::gaussian::Gaussian)> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_split[*i])
        .map(|(i, g)| (Some(i), g.clone()))
        .collect();
    candidates.extend(clone.iter().map(|&i| (None, scene.gaussians[i].clone())));
    for &i in &split {
        let parent = &scene.gaussians[i];
        let scale = parent.scale();
        let r = rotation_matrix(parent.rotation);
        for _ in 0..2 {
            let z = Vector3::from_fn(|k, _| scale[k] * rng.sample::<f64, _>(StandardNormal));
            let offset = r * z;
            let mut child = parent.clone();
            for k in 0..3 {
                child.position[k] += offset[k];
                child.log_scale[k] = (scale[k] / SPLIT_SCALE_DIVISOR).ln();
            }
            candidates.push((None, child));
        }
    }

    let mut origin = Vec::with_capacity(candidates.len());
    scene.gaussians.clear();
    for (o, g) in candidates {
        if g.opacity() < params.opacity_prune {
            report.pruned += 1;
            continue;
        }
        origin.push(o);
        scene.gaussians.push(g);
    }
    (report, origin)
}
