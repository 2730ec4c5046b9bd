//! Test-only oracles shared by the integration suites. Nothing here calls the
//! tiled rasterizer or the analytic backward pass.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat::camera::Camera;
use semsplat::gaussian::{logit, Gaussian, Scene};
use semsplat::project::project;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Footprint written from its definition: Gaussian inside 2σ, smoothstep taper to zero at 3σ.
fn oracle_kernel(s: f64) -> f64 {
    if s >= 9.0 {
        0.0
    } else if s <= 4.0 {
        (-s / 2.0).exp()
    } else {
        let t = (s - 4.0) / 5.0;
        (-s / 2.0).exp() * (1.0 - (3.0 * t * t - 2.0 * t * t * t))
    }
}

pub struct OracleImage {
    pub color: Vec<f64>,
    pub feature: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Per pixel: evaluate every projected Gaussian, sort by depth, blend with the 0.99 and 1e-4 clamps.
pub fn brute_force_render(scene: &Scene, cam: &Camera) -> OracleImage {
    let d = scene.semantic_dim;
    let splats: Vec<_> = scene.gaussians.iter().enumerate().filter_map(|(i, g)| project(g, i, cam)).collect();
    let n = cam.width * cam.height;
    let mut img = OracleImage { color: vec![0.0; 3 * n], feature: vec![0.0; d * n], transmittance: vec![1.0; n] };
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut hits: Vec<(f64, usize, f64)> = splats
                .iter()
                .map(|s| {
                    let g = &scene.gaussians[s.source_index];
                    let dx = px - s.mean2d[0];
                    let dy = py - s.mean2d[1];
                    let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                    let o = 1.0 / (1.0 + (-g.opacity_logit).exp());
                    (s.depth, s.source_index, (o * oracle_kernel(m)).min(0.99))
                })
                .filter(|h| h.2 > 0.0)
                .collect();
            hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let i = y * cam.width + x;
            let mut t = 1.0;
            for (_, idx, alpha) in hits {
                if t * (1.0 - alpha) < 1e-4 {
                    break;
                }
                let g = &scene.gaussians[idx];
                for k in 0..3 {
                    img.color[3 * i + k] += t * alpha * g.color[k].clamp(0.0, 1.0);
                }
                for k in 0..d {
                    img.feature[d * i + k] += t * alpha * g.semantic[k];
                }
                t *= 1.0 - alpha;
            }
            for k in 0..3 {
                img.color[3 * i + k] += t * scene.background[k];
            }
            img.transmittance[i] = t;
        }
    }
    img
}

pub fn test_camera(size: usize) -> Camera {
    Camera::look_at([0.3, 0.4, 4.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], size as f64 * 1.2, size, size).unwrap()
}

/// Random scene in front of [`test_camera`]. Opacities stay in `[0.05, max_opacity]`.
pub fn random_scene(rng: &mut impl Rng, n: usize, d: usize, max_opacity: f64) -> Scene {
    let mut scene = Scene::new(d, 4).unwrap().with_background([rng.random(), rng.random(), rng.random()]);
    for _ in 0..n {
        let g = Gaussian {
            position: [rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.0..1.0)],
            log_scale: [
                rng.random_range(-2.8f64..-1.2),
                rng.random_range(-2.8f64..-1.2),
                rng.random_range(-2.8f64..-1.2),
            ],
            rotation: [rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            opacity_logit: logit(rng.random_range(0.05..max_opacity)),
            color: [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
            semantic: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        scene.push(g).unwrap();
    }
    scene
}

/// Every scalar parameter of a scene as (gaussian, group, component) handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Position,
    LogScale,
    Rotation,
    Opacity,
    Color,
    Semantic,
}

pub fn param_mut(g: &mut Gaussian, group: Group, k: usize) -> &mut f64 {
    match group {
        Group::Position => &mut g.position[k],
        Group::LogScale => &mut g.log_scale[k],
        Group::Rotation => &mut g.rotation[k],
        Group::Opacity => &mut g.opacity_logit,
        Group::Color => &mut g.color[k],
        Group::Semantic => &mut g.semantic[k],
    }
}

pub fn group_len(group: Group, d: usize) -> usize {
    match group {
        Group::Position | Group::LogScale | Group::Color => 3,
        Group::Rotation => 4,
        Group::Opacity => 1,
        Group::Semantic => d,
    }
}

pub const GROUPS: [Group; 6] = [Group::Position, Group::LogScale, Group::Rotation, Group::Opacity, Group::Color, Group::Semantic];

/// Central finite difference of `f` in one scalar parameter.
pub fn central_difference(scene: &Scene, i: usize, group: Group, k: usize, h: f64, f: &dyn Fn(&Scene) -> f64) -> f64 {
    let mut plus = scene.clone();
    *param_mut(&mut plus.gaussians[i], group, k) += h;
    let mut minus = scene.clone();
    *param_mut(&mut minus.gaussians[i], group, k) -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
