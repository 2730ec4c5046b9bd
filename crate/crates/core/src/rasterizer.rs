//! Tiled front-to-back alpha blending of color and semantic features, with the
//! exact adjoint pass.
//!
//! Splats are depth-sorted once per camera (ties broken by Gaussian index) and
//! binned into 16×16 pixel tiles. Each pixel walks its tile list front to back:
//!
//! ```text
//! α_i = min(0.99, σ(o_i) · K(dᵀ Q_i d))
//! T_i = Π_{j<i} (1 − α_j)
//! C   = Σ T_i α_i c_i + T_final · background
//! F   = Σ T_i α_i f_i
//! ```
//!
//! and stops before the splat that would push `T` below `1e-4`.
//!
//! `K` is the Gaussian `exp(-s/2)` for Mahalanobis distance² `s ≤ 4` and is
//! tapered with a cubic smoothstep to exactly zero at `s = 9`, the 3σ support
//! ellipse. The taper keeps the image C¹ in every parameter, and since the
//! support ellipse lies inside the 3σ tile bounds, the tiled result equals a
//! direct per-pixel evaluation of every splat.

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{sigmoid, Scene};
use crate::project::{project, project_backward, Splat2D, RADIUS_SIGMAS};

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Mahalanobis distance² where the kernel taper begins.
pub const TAPER_START: f64 = 4.0;
/// Mahalanobis distance² of the support boundary.
pub const SUPPORT_SQ: f64 = RADIUS_SIGMAS * RADIUS_SIGMAS;
pub const NO_CONTRIBUTOR: u32 = u32::MAX;

/// Splat footprint as a function of Mahalanobis distance².
#[inline]
pub fn kernel(s: f64) -> f64 {
    kernel_with_derivative(s).0
}

/// `(K(s), dK/ds)`.
#[inline]
pub fn kernel_with_derivative(s: f64) -> (f64, f64) {
    if s >= SUPPORT_SQ {
        return (0.0, 0.0);
    }
    let g = (-0.5 * s).exp();
    if s <= TAPER_START {
        return (g, -0.5 * g);
    }
    let t = (s - TAPER_START) / (SUPPORT_SQ - TAPER_START);
    let w = 1.0 - t * t * (3.0 - 2.0 * t);
    let dw = -6.0 * t * (1.0 - t) / (SUPPORT_SQ - TAPER_START);
    (g * w, g * (dw - 0.5 * w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    ColorOnly,
    ColorAndSemantic,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub semantic_dim: usize,
    /// `H×W×3`, row-major.
    pub color: Vec<f64>,
    /// `H×W×d`, row-major; empty in color-only mode.
    pub feature: Vec<f64>,
    pub final_transmittance: Vec<f64>,
    /// Scene index of the largest-weight splat, or [`NO_CONTRIBUTOR`].
    pub max_contributor: Vec<u32>,
    pub contributor_count: Vec<u32>,
    state: RasterState,
}

impl RenderOutput {
    pub fn max_contributor_at(&self, x: usize, y: usize) -> Option<usize> {
        match self.max_contributor[y * self.width + x] {
            NO_CONTRIBUTOR => None,
            i => Some(i as usize),
        }
    }

    pub fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        let o = 3 * (y * self.width + x);
        [self.color[o], self.color[o + 1], self.color[o + 2]]
    }

    pub fn feature_at(&self, x: usize, y: usize) -> &[f64] {
        let o = self.semantic_dim * (y * self.width + x);
        &self.feature[o..o + self.semantic_dim]
    }

    pub fn mode(&self) -> RenderMode {
        self.state.mode
    }

    /// Projected splats in scene order (culled Gaussians omitted).
    pub fn splats(&self) -> &[Splat2D] {
        &self.state.splats
    }
}

#[derive(Clone, Debug)]
struct RasterState {
    mode: RenderMode,
    splats: Vec<Splat2D>,
    packed: Vec<PackedSplat>,
    features: Vec<f64>,
    tiles_x: usize,
    tile_offsets: Vec<usize>,
    tile_entries: Vec<u32>,
    /// Per pixel: number of tile-list entries walked, so backward can replay them.
    last_entry: Vec<u32>,
    scene_len: usize,
}

#[derive(Clone, Copy, Debug)]
struct PackedSplat {
    mx: f64,
    my: f64,
    ca: f64,
    cb: f64,
    cc: f64,
    opacity: f64,
    color: [f64; 3],
}

impl PackedSplat {
    #[inline]
    fn offset(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mx;
        let dy = py - self.my;
        (dx, dy, self.ca * dx * dx + 2.0 * self.cb * dx * dy + self.cc * dy * dy)
    }
}

struct PixelOut {
    color: [f64; 3],
    t_final: f64,
    max_contributor: u32,
    count: u32,
    last: u32,
}

fn tile_grid(cam: &Camera) -> (usize, usize) {
    (cam.width.div_ceil(TILE_SIZE), cam.height.div_ceil(TILE_SIZE))
}

/// Inclusive range of pixel indices whose centers fall in `[lo, hi]`.
fn pixel_span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(len as f64 - 1.0);
    if first > last {
        return None;
    }
    Some((first as usize, last as usize))
}

fn bin_splats(splats: &[Splat2D], cam: &Camera) -> (usize, Vec<usize>, Vec<u32>) {
    let (tiles_x, tiles_y) = tile_grid(cam);
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
        sa.depth.total_cmp(&sb.depth).then(sa.source_index.cmp(&sb.source_index))
    });

    let tile_rect = |s: &Splat2D| -> Option<(usize, usize, usize, usize)> {
        let hx = RADIUS_SIGMAS * s.cov2d[0].sqrt();
        let hy = RADIUS_SIGMAS * s.cov2d[2].sqrt();
        let (x0, x1) = pixel_span(s.mean2d[0] - hx, s.mean2d[0] + hx, cam.width)?;
        let (y0, y1) = pixel_span(s.mean2d[1] - hy, s.mean2d[1] + hy, cam.height)?;
        Some((x0 / TILE_SIZE, x1 / TILE_SIZE, y0 / TILE_SIZE, y1 / TILE_SIZE))
    };

    let mut counts = vec![0usize; tiles_x * tiles_y + 1];
    let rects: Vec<_> = order.iter().map(|&i| tile_rect(&splats[i as usize])).collect();
    for (tx0, tx1, ty0, ty1) in rects.iter().flatten() {
        for ty in *ty0..=*ty1 {
            for tx in *tx0..=*tx1 {
                counts[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for t in 1..counts.len() {
        counts[t] += counts[t - 1];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; *offsets.last().unwrap()];
    for (&i, rect) in order.iter().zip(&rects) {
        if let Some((tx0, tx1, ty0, ty1)) = rect {
            for ty in *ty0..=*ty1 {
                for tx in *tx0..=*tx1 {
                    let t = ty * tiles_x + tx;
                    entries[cursor[t]] = i;
                    cursor[t] += 1;
                }
            }
        }
    }
    (tiles_x, offsets, entries)
}

/// Tile-local pixel coordinates in row-major order.
fn tile_pixels(tile: usize, tiles_x: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(cam.width);
    let y1 = (y0 + TILE_SIZE).min(cam.height);
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Forward pass with color and semantic features.
pub fn rasterize(scene: &Scene, cam: &Camera) -> RenderOutput {
    rasterize_with_mode(scene, cam, RenderMode::ColorAndSemantic)
}

pub fn rasterize_with_mode(scene: &Scene, cam: &Camera, mode: RenderMode) -> RenderOutput {
    let splats: Vec<Splat2D> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam))
        .collect();
    let packed: Vec<PackedSplat> = splats
        .iter()
        .map(|s| {
            let g = &scene.gaussians[s.source_index];
            PackedSplat {
                mx: s.mean2d[0],
                my: s.mean2d[1],
                ca: s.conic[0],
                cb: s.conic[1],
                cc: s.conic[2],
                opacity: g.opacity(),
                color: g.clamped_color(),
            }
        })
        .collect();
    let d = match mode {
        RenderMode::ColorOnly => 0,
        RenderMode::ColorAndSemantic => scene.semantic_dim,
    };
    let mut features = Vec::with_capacity(splats.len() * d);
    if d > 0 {
        for s in &splats {
            features.extend_from_slice(&scene.gaussians[s.source_index].semantic);
        }
    }
    let (tiles_x, tile_offsets, tile_entries) = bin_splats(&splats, cam);
    let tile_count = tile_offsets.len() - 1;
    let bg = scene.background;

    let tiles: Vec<(Vec<PixelOut>, Vec<f64>)> = (0..tile_count)
        .into_par_iter()
        .map(|tile| {
            let list = &tile_entries[tile_offsets[tile]..tile_offsets[tile + 1]];
            let mut pixels = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            let mut feats = Vec::with_capacity(TILE_SIZE * TILE_SIZE * d);
            let mut f = vec![0.0; d];
            for (x, y) in tile_pixels(tile, tiles_x, cam) {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = 1.0;
                let mut c = [0.0; 3];
                f.iter_mut().for_each(|v| *v = 0.0);
                let mut best = (0.0, NO_CONTRIBUTOR);
                let mut count = 0u32;
                let mut last = 0u32;
                for (j, &si) in list.iter().enumerate() {
                    let s = &packed[si as usize];
                    let (_, _, m) = s.offset(px, py);
                    if m >= SUPPORT_SQ {
                        continue;
                    }
                    let alpha = (s.opacity * kernel(m)).min(ALPHA_MAX);
                    if alpha <= 0.0 {
                        continue;
                    }
                    let next_t = t * (1.0 - alpha);
                    if next_t < TRANSMITTANCE_MIN {
                        break;
                    }
                    let w = alpha * t;
                    c[0] += w * s.color[0];
                    c[1] += w * s.color[1];
                    c[2] += w * s.color[2];
                    if d > 0 {
                        let sf = &features[si as usize * d..(si as usize + 1) * d];
                        for (acc, v) in f.iter_mut().zip(sf) {
                            *acc += w * v;
                        }
                    }
                    if w > best.0 {
                        best = (w, splats[si as usize].source_index as u32);
                    }
                    count += 1;
                    t = next_t;
                    last = j as u32 + 1;
                }
                for k in 0..3 {
                    c[k] += t * bg[k];
                }
                feats.extend_from_slice(&f);
                pixels.push(PixelOut { color: c, t_final: t, max_contributor: best.1, count, last });
            }
            (pixels, feats)
        })
        .collect();

    let n = cam.pixel_count();
    let mut out = RenderOutput {
        width: cam.width,
        height: cam.height,
        semantic_dim: d,
        color: vec![0.0; n * 3],
        feature: vec![0.0; n * d],
        final_transmittance: vec![1.0; n],
        max_contributor: vec![NO_CONTRIBUTOR; n],
        contributor_count: vec![0; n],
        state: RasterState {
            mode,
            splats,
            packed,
            features,
            tiles_x,
            tile_offsets,
            tile_entries,
            last_entry: vec![0; n],
            scene_len: scene.len(),
        },
    };
    for (tile, (pixels, feats)) in tiles.into_iter().enumerate() {
        for (k, ((x, y), p)) in tile_pixels(tile, tiles_x, cam).zip(pixels).enumerate() {
            let i = y * cam.width + x;
            out.color[3 * i..3 * i + 3].copy_from_slice(&p.color);
            out.feature[d * i..d * (i + 1)].copy_from_slice(&feats[d * k..d * (k + 1)]);
            out.final_transmittance[i] = p.t_final;
            out.max_contributor[i] = p.max_contributor;
            out.contributor_count[i] = p.count;
            out.state.last_entry[i] = p.last;
        }
    }
    out
}

/// Per-Gaussian gradients of one render, plus densification statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub semantic_dim: usize,
    pub position: Vec<[f64; 3]>,
    pub log_scale: Vec<[f64; 3]>,
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    /// `n×d`, row-major.
    pub semantic: Vec<f64>,
    /// Norm of the loss gradient on the projected mean, in NDC units.
    pub mean2d_grad_norm: Vec<f64>,
    /// 1 for Gaussians that projected into the view, else 0.
    pub hit_count: Vec<u32>,
}

impl RenderGradients {
    pub fn zeros(n: usize, semantic_dim: usize) -> Self {
        Self {
            semantic_dim,
            position: vec![[0.0; 3]; n],
            log_scale: vec![[0.0; 3]; n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            semantic: vec![0.0; n * semantic_dim],
            mean2d_grad_norm: vec![0.0; n],
            hit_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn semantic_of(&self, i: usize) -> &[f64] {
        &self.semantic[i * self.semantic_dim..(i + 1) * self.semantic_dim]
    }

    pub fn semantic_of_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.semantic[i * self.semantic_dim..(i + 1) * self.semantic_dim]
    }
}

/// Adjoint of [`rasterize`] for the scalar loss `Σ gC·C + Σ gF·F`.
pub fn rasterize_backward(
    scene: &Scene,
    cam: &Camera,
    forward: &RenderOutput,
    loss_grad_color: &[f64],
    loss_grad_feature: &[f64],
) -> Result<RenderGradients> {
    rasterize_backward_with(scene, cam, forward, loss_grad_color, loss_grad_feature, true)
}

/// As [`rasterize_backward`]; with `features_move_geometry` false the feature
/// term reaches only the semantic vectors, as if geometry and opacity were detached.
pub fn rasterize_backward_with(
    scene: &Scene,
    cam: &Camera,
    forward: &RenderOutput,
    loss_grad_color: &[f64],
    loss_grad_feature: &[f64],
    features_move_geometry: bool,
) -> Result<RenderGradients> {
    let n_pix = cam.pixel_count();
    let st = &forward.state;
    if forward.width != cam.width || forward.height != cam.height || st.scene_len != scene.len() {
        return Err(Error::shape("forward output was rendered from a different scene or camera"));
    }
    if loss_grad_color.len() != n_pix * 3 {
        return Err(Error::shape(format!(
            "color gradient has {} values, expected {}",
            loss_grad_color.len(),
            n_pix * 3
        )));
    }
    let d = forward.semantic_dim;
    let with_features = !loss_grad_feature.is_empty();
    if with_features && loss_grad_feature.len() != n_pix * d {
        return Err(Error::shape(format!(
            "feature gradient has {} values, expected {}",
            loss_grad_feature.len(),
            n_pix * d
        )));
    }
    if with_features && d == 0 {
        return Err(Error::shape("feature gradient supplied for a color-only render"));
    }

    // per-entry layout: dμx, dμy, dqa, dqb, dqc, dopacity, dc0..2, df0..d
    let stride = 9 + d;
    let tile_count = st.tile_offsets.len() - 1;
    let bg = scene.background;
    let tile_grads: Vec<Vec<f64>> = (0..tile_count)
        .into_par_iter()
        .map(|tile| {
            let list = &st.tile_entries[st.tile_offsets[tile]..st.tile_offsets[tile + 1]];
            let mut acc = vec![0.0; list.len() * stride];
            if list.is_empty() {
                return acc;
            }
            let mut acc_f = vec![0.0; d];
            for (x, y) in tile_pixels(tile, st.tiles_x, cam) {
                let i = y * cam.width + x;
                let last = st.last_entry[i] as usize;
                if last == 0 {
                    continue;
                }
                let gc = &loss_grad_color[3 * i..3 * i + 3];
                let gf = if with_features { &loss_grad_feature[d * i..d * (i + 1)] } else { &[][..] };
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut t = forward.final_transmittance[i];
                let mut acc_c = bg;
                acc_f.iter_mut().for_each(|v| *v = 0.0);
                for j in (0..last).rev() {
                    let si = list[j] as usize;
                    let s = &st.packed[si];
                    let (dx, dy, m) = s.offset(px, py);
                    if m >= SUPPORT_SQ {
                        continue;
                    }
                    let (k, dk) = kernel_with_derivative(m);
                    let raw = s.opacity * k;
                    let alpha = raw.min(ALPHA_MAX);
                    if alpha <= 0.0 {
                        continue;
                    }
                    t /= 1.0 - alpha;
                    let w = alpha * t;
                    let e = &mut acc[j * stride..(j + 1) * stride];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        e[6 + ch] += w * gc[ch];
                        d_alpha += (s.color[ch] - acc_c[ch]) * gc[ch];
                        acc_c[ch] = alpha * s.color[ch] + (1.0 - alpha) * acc_c[ch];
                    }
                    if with_features {
                        for c in 0..d {
                            e[9 + c] += w * gf[c];
                        }
                        if features_move_geometry {
                            let sf = &st.features[si * d..(si + 1) * d];
                            for c in 0..d {
                                d_alpha += (sf[c] - acc_f[c]) * gf[c];
                                acc_f[c] = alpha * sf[c] + (1.0 - alpha) * acc_f[c];
                            }
                        }
                    }
                    d_alpha *= t;
                    if raw >= ALPHA_MAX {
                        continue;
                    }
                    e[5] += d_alpha * k;
                    let d_m = d_alpha * s.opacity * dk;
                    e[0] += -2.0 * d_m * (s.ca * dx + s.cb * dy);
                    e[1] += -2.0 * d_m * (s.cb * dx + s.cc * dy);
                    e[2] += d_m * dx * dx;
                    e[3] += d_m * 2.0 * dx * dy;
                    e[4] += d_m * dy * dy;
                }
            }
            acc
        })
        .collect();

    let n_splat = st.splats.len();
    let mut splat_grads = vec![0.0; n_splat * stride];
    for (tile, acc) in tile_grads.iter().enumerate() {
        let list = &st.tile_entries[st.tile_offsets[tile]..st.tile_offsets[tile + 1]];
        for (j, &si) in list.iter().enumerate() {
            let dst = &mut splat_grads[si as usize * stride..(si as usize + 1) * stride];
            for (a, b) in dst.iter_mut().zip(&acc[j * stride..(j + 1) * stride]) {
                *a += b;
            }
        }
    }

    let mut out = RenderGradients::zeros(scene.len(), scene.semantic_dim);
    let geometry: Vec<_> = st
        .splats
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let e = &splat_grads[si * stride..(si + 1) * stride];
            project_backward(&scene.gaussians[s.source_index], s, cam, [e[0], e[1]], [e[2], e[3], e[4]])
        })
        .collect();
    let (half_w, half_h) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    for ((si, s), geo) in st.splats.iter().enumerate().zip(geometry) {
        let e = &splat_grads[si * stride..(si + 1) * stride];
        let g = &scene.gaussians[s.source_index];
        let i = s.source_index;
        out.position[i] = geo.position;
        out.log_scale[i] = geo.log_scale;
        out.rotation[i] = geo.rotation;
        let o = sigmoid(g.opacity_logit);
        out.opacity_logit[i] = e[5] * o * (1.0 - o);
        for ch in 0..3 {
            out.color[i][ch] = if (0.0..=1.0).contains(&g.color[ch]) { e[6 + ch] } else { 0.0 };
        }
        if with_features {
            out.semantic_of_mut(i).copy_from_slice(&e[9..9 + d]);
        }
        out.mean2d_grad_norm[i] = (e[0] * half_w).hypot(e[1] * half_h);
        out.hit_count[i] = 1;
    }
    Ok(out)
}
