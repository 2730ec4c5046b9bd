//! Two-phase optimization of a scene and its semantic decoder.
//!
//! Phase one (iterations `1..=phase_switch`) minimizes reconstruction plus
//! semantic cross-entropy against per-view index maps. Phase two, when any
//! consistency term is enabled, replaces the semantic term with the
//! majority-vote cross-entropy and the KL attraction of matched Gaussians,
//! evaluated for one training view per iteration.

pub mod adam;
pub mod config;
pub mod dataset;
pub mod densify;
pub mod schedule;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coherence::{consistency_loss_2d, consistency_loss_3d, match_gaussians, pseudo_labels, MatchView, VoteView};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::Scene;
use crate::image::{Image, LabelMap};
use crate::loss::reconstruction_loss;
use crate::rasterizer::{rasterize_backward_with, rasterize_with_mode, RenderGradients, RenderMode, RenderOutput};
use crate::sac::{decode, decode_backward, semantic_loss, Decoder, Logits, RegionMaskSet};

pub use adam::Adam;
pub use config::TrainConfig;
pub use dataset::{Dataset, Supervision, TrainView, ViewProvider};
pub use densify::{densify_and_prune, DensifyParams, DensifyReport, DensifyStats};
pub use schedule::{pdr_schedule, PdrState};

/// Parameters per Gaussian ahead of the semantic vector: position, log-scale, rotation, opacity, color.
pub const GEOMETRY_PARAMS: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Reconstruction,
    Consistency,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub phase: Phase,
    pub view: usize,
    pub loss_rgb: f64,
    pub loss_sem: f64,
    pub loss_2d: f64,
    pub loss_3d: f64,
    pub total: f64,
    pub gaussian_count: usize,
    pub densify: Option<DensifyReport>,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub scene: Scene,
    pub decoder: Decoder,
    pub log: Vec<IterationLog>,
}

/// Uniform in `±1/√d` for weights, zero bias.
pub fn init_decoder(classes: usize, dim: usize, rng: &mut impl Rng) -> Decoder {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut dec = Decoder::zeros(classes, dim);
    dec.weight.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
    dec
}

fn pack_scene(scene: &Scene) -> Vec<f64> {
    let mut out = Vec::with_capacity(scene.len() * (GEOMETRY_PARAMS + scene.semantic_dim));
    for g in &scene.gaussians {
        out.extend_from_slice(&g.position);
        out.extend_from_slice(&g.log_scale);
        out.extend_from_slice(&g.rotation);
        out.push(g.opacity_logit);
        out.extend_from_slice(&g.color);
        out.extend_from_slice(&g.semantic);
    }
    out
}

fn unpack_scene(scene: &mut Scene, flat: &[f64]) {
    let stride = GEOMETRY_PARAMS + scene.semantic_dim;
    for (g, row) in scene.gaussians.iter_mut().zip(flat.chunks_exact(stride)) {
        g.position.copy_from_slice(&row[0..3]);
        g.log_scale.copy_from_slice(&row[3..6]);
        g.rotation.copy_from_slice(&row[6..10]);
        g.opacity_logit = row[10];
        g.color.copy_from_slice(&row[11..14]);
        g.semantic.copy_from_slice(&row[14..]);
    }
}

fn pack_gradients(grads: &RenderGradients) -> Vec<f64> {
    let d = grads.semantic_dim;
    let mut out = Vec::with_capacity(grads.len() * (GEOMETRY_PARAMS + d));
    for i in 0..grads.len() {
        out.extend_from_slice(&grads.position[i]);
        out.extend_from_slice(&grads.log_scale[i]);
        out.extend_from_slice(&grads.rotation[i]);
        out.push(grads.opacity_logit[i]);
        out.extend_from_slice(&grads.color[i]);
        out.extend_from_slice(grads.semantic_of(i));
    }
    out
}

fn pack_decoder(dec: &Decoder) -> Vec<f64> {
    dec.weight.iter().chain(&dec.bias).copied().collect()
}

fn unpack_decoder(dec: &mut Decoder, flat: &[f64]) {
    let n = dec.weight.len();
    dec.weight.copy_from_slice(&flat[..n]);
    dec.bias.copy_from_slice(&flat[n..]);
}

/// A training view resampled to the current training resolution.
#[derive(Clone, Debug)]
struct ScaledView {
    camera: Camera,
    target: Image,
    masks: RegionMaskSet,
    labels: LabelMap,
}

/// Rendered and decoded output of one view.
struct ViewPass {
    output: RenderOutput,
    logits: Logits,
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a Dataset,
    scene: Scene,
    decoder: Decoder,
    scene_adam: Adam,
    decoder_adam: Adam,
    stats: DensifyStats,
    rng: ChaCha8Rng,
    extent: f64,
    cache: Vec<Option<ScaledView>>,
    last_densify: usize,
    iteration: usize,
    log: Vec<IterationLog>,
}

impl<'a> Trainer<'a> {
    pub fn new(scene: Scene, dataset: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        if scene.class_count != dataset.classes {
            return Err(Error::invalid(format!(
                "scene has {} classes, dataset {}",
                scene.class_count, dataset.classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let decoder = init_decoder(scene.class_count, scene.semantic_dim, &mut rng);
        let stride = GEOMETRY_PARAMS + scene.semantic_dim;
        Ok(Self {
            scene_adam: Adam::new(stride, scene.len()),
            decoder_adam: Adam::new(decoder.weight.len() + decoder.bias.len(), 1),
            stats: DensifyStats::new(scene.len()),
            extent: dataset.extent(),
            cache: vec![None; dataset.views.len()],
            last_densify: cfg.densify_from,
            iteration: 0,
            log: Vec::with_capacity(cfg.total_iterations),
            rng,
            decoder,
            scene,
            dataset,
            cfg,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn log(&self) -> &[IterationLog] {
        &self.log
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.total_iterations
    }

    pub fn pdr_state(&self, iteration: usize) -> PdrState {
        if self.cfg.enable_pdr {
            pdr_schedule(&self.cfg, iteration)
        } else {
            PdrState::standard(&self.cfg)
        }
    }

    pub fn phase(&self, iteration: usize) -> Phase {
        if iteration > self.cfg.phase_switch && self.cfg.consistency_enabled() {
            Phase::Consistency
        } else {
            Phase::Reconstruction
        }
    }

    fn position_lr(&self, iteration: usize) -> f64 {
        let t = (iteration as f64 / self.cfg.total_iterations as f64).clamp(0.0, 1.0);
        let lr = (self.cfg.lr_position.ln() * (1.0 - t) + self.cfg.lr_position_final.ln() * t).exp();
        lr * self.extent
    }

    fn prepare_view(&mut self, k: usize, scale: f64) {
        let view = &self.dataset.views[k];
        let camera = view.camera.scaled(scale);
        if let Some(c) = &self.cache[k] {
            if c.camera == camera {
                return;
            }
        }
        let (w, h) = (camera.width, camera.height);
        self.cache[k] = Some(ScaledView {
            target: view.target.resize_area(w, h),
            masks: view.masks.resize_nearest(w, h),
            labels: view.labels.resize_nearest(w, h),
            camera,
        });
    }

    fn render(&self, k: usize) -> Result<ViewPass> {
        let sv = self.cache[k].as_ref().expect("view prepared");
        let output = rasterize_with_mode(&self.scene, &sv.camera, RenderMode::ColorAndSemantic);
        let logits = decode(&output.feature, output.width, output.height, &self.decoder)?;
        Ok(ViewPass { output, logits })
    }

    /// Runs one iteration and returns its log entry.
    pub fn step(&mut self) -> Result<&IterationLog> {
        let it = self.iteration + 1;
        let pdr = self.pdr_state(it);
        let n = self.dataset.views.len();
        let k = (it - 1) % n;
        let phase = self.phase(it);
        let d = self.scene.semantic_dim;

        self.prepare_view(k, pdr.resolution_scale);
        let current = self.render(k).map_err(|e| e.for_view(k))?;
        let sv = self.cache[k].as_ref().unwrap();
        let (w, h) = (sv.camera.width, sv.camera.height);
        let rendered = Image::new(w, h, current.output.color.clone())?;
        let (loss_rgb, grad_color) = reconstruction_loss(&rendered, &sv.target, self.cfg.lambda)?;

        let (mut loss_sem, mut loss_2d, mut loss_3d) = (0.0, 0.0, 0.0);
        let mut grad_logits = None;
        let mut semantic_extra: Vec<(usize, Vec<f64>)> = Vec::new();
        match phase {
            Phase::Reconstruction => match semantic_loss(&current.logits, &sv.labels) {
                Ok((l, g)) => {
                    loss_sem = l;
                    grad_logits = Some(g);
                }
                Err(Error::EmptySupervision) => {}
                Err(e) => return Err(e.for_view(k)),
            },
            Phase::Consistency => {
                let neighbors: Vec<usize> = [k.checked_sub(1), Some(k + 1).filter(|&j| j < n)].into_iter().flatten().collect();
                for &j in &neighbors {
                    self.prepare_view(j, pdr.resolution_scale);
                }
                let mut passes = Vec::with_capacity(3);
                for &j in &neighbors {
                    passes.push((j, self.render(j).map_err(|e| e.for_view(j))?));
                }
                let sv = self.cache[k].as_ref().unwrap();
                let mut order: Vec<(usize, &ViewPass)> = passes.iter().map(|(j, p)| (*j, p)).collect();
                order.push((k, &current));
                order.sort_by_key(|(j, _)| *j);
                let cur_pos = order.iter().position(|(j, _)| *j == k).unwrap();
                let masks_of = |j: usize| &self.cache[j].as_ref().unwrap().masks;

                if self.cfg.enable_3dcr_2d {
                    let votes: Vec<VoteView> =
                        order.iter().map(|(j, p)| VoteView { logits: &p.logits, masks: masks_of(*j) }).collect();
                    let (pseudo, _) = pseudo_labels(&votes, cur_pos).map_err(|e| e.for_view(k))?;
                    match consistency_loss_2d(&current.logits, &pseudo) {
                        Ok((l, g)) => {
                            loss_2d = l;
                            grad_logits = Some(g);
                        }
                        Err(Error::EmptySupervision) => {}
                        Err(e) => return Err(e.for_view(k)),
                    }
                }
                if self.cfg.enable_3dcr_3d {
                    let matches: Vec<MatchView> =
                        order.iter().map(|(j, p)| MatchView { output: &p.output, masks: masks_of(*j) }).collect();
                    let sets: Vec<_> = sv
                        .masks
                        .regions
                        .iter()
                        .map(|r| match_gaussians(&matches, r.track_id, &self.scene))
                        .filter(|m| !m.is_empty())
                        .collect();
                    if !sets.is_empty() {
                        let scale = self.cfg.weight_3d / sets.len() as f64;
                        for set in &sets {
                            let (l, grads) = consistency_loss_3d(set, &self.scene);
                            loss_3d += l / sets.len() as f64;
                            for (i, mut g) in grads {
                                g.iter_mut().for_each(|v| *v *= scale);
                                semantic_extra.push((i, g));
                            }
                        }
                    }
                }
            }
        }

        let (grad_feature, decoder_grad) = match &grad_logits {
            Some(g) => {
                let (gf, gw, gb) = decode_backward(&current.output.feature, g, &self.decoder);
                (gf, Some(gw.into_iter().chain(gb).collect::<Vec<f64>>()))
            }
            None => (Vec::new(), None),
        };
        let sv = self.cache[k].as_ref().unwrap();
        let grads = rasterize_backward_with(
            &self.scene,
            &sv.camera,
            &current.output,
            &grad_color,
            &grad_feature,
            self.cfg.semantic_moves_geometry,
        )?;
        let mut flat_grads = pack_gradients(&grads);
        let stride = GEOMETRY_PARAMS + d;
        for (i, g) in &semantic_extra {
            for (t, v) in flat_grads[i * stride + GEOMETRY_PARAMS..(i + 1) * stride].iter_mut().zip(g) {
                *t += v;
            }
        }

        let mut lrs = vec![self.position_lr(it); 3];
        lrs.extend([self.cfg.lr_scale; 3]);
        lrs.extend([self.cfg.lr_rotation; 4]);
        lrs.push(self.cfg.lr_opacity);
        lrs.extend([self.cfg.lr_color; 3]);
        lrs.extend(std::iter::repeat_n(self.cfg.lr_semantic, d));
        let mut params = pack_scene(&self.scene);
        self.scene_adam.step(&mut params, &flat_grads, &lrs);
        unpack_scene(&mut self.scene, &params);
        if let Some(g) = decoder_grad {
            let mut p = pack_decoder(&self.decoder);
            let lr = vec![self.cfg.lr_decoder; p.len()];
            self.decoder_adam.step(&mut p, &g, &lr);
            unpack_decoder(&mut self.decoder, &p);
        }

        let mut densify = None;
        if it < self.cfg.densify_until {
            self.stats.accumulate(&grads);
            if it > self.cfg.densify_from && it - self.last_densify >= pdr.densify_interval {
                let params = DensifyParams {
                    grad_threshold: self.cfg.grad_threshold,
                    opacity_prune: self.cfg.opacity_prune,
                    percent_dense: self.cfg.percent_dense,
                    extent: self.extent,
                };
                let (report, origin) =
                    densify_and_prune(&mut self.scene, &self.stats, pdr.threshold_multiplier, &params, &mut self.rng);
                self.scene_adam.remap(&origin);
                self.stats = DensifyStats::new(self.scene.len());
                self.last_densify = it;
                self.scene.validate()?;
                densify = Some(report);
            }
        }

        self.iteration = it;
        self.log.push(IterationLog {
            iteration: it,
            phase,
            view: self.dataset.views[k].view_id,
            loss_rgb,
            loss_sem,
            loss_2d,
            loss_3d,
            total: loss_rgb + loss_sem + loss_2d + self.cfg.weight_3d * loss_3d,
            gaussian_count: self.scene.len(),
            densify,
        });
        Ok(self.log.last().unwrap())
    }

    pub fn run(mut self) -> Result<TrainResult> {
        while !self.is_done() {
            self.step()?;
        }
        self.finish()
    }

    pub fn finish(self) -> Result<TrainResult> {
        self.scene.validate()?;
        Ok(TrainResult { scene: self.scene, decoder: self.decoder, log: self.log })
    }
}

pub fn train(scene: Scene, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    Trainer::new(scene, dataset, cfg.clone())?.run()
}
