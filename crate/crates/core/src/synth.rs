//! Procedural multi-view scenes with exact masks, correspondences and
//! synthetic per-pixel features standing in for foundation-model outputs.
//!
//! Objects are clusters of opaque Gaussians. Every object has a class whose
//! prototype vector is written into its silhouette in each view's feature map,
//! plus noise. Two optional corruptions model the failure modes of real
//! features: spatially correlated per-pixel noise, and per-view confusion where
//! an object's whole region carries another class's prototype.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, Scene};
use crate::image::{Image, LabelMap, UNLABELED};
use crate::io;
use crate::metrics::EvalView;
use crate::rasterizer::rasterize;
use crate::sac::{FeatureMap, Region, RegionMaskSet, TextBank};
use crate::train::ViewProvider;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub label: String,
    pub prototype: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub object_count: usize,
    pub classes: Vec<ClassSpec>,
    /// Class of each object; defaults to object `i` having class `i`.
    pub object_classes: Vec<usize>,
    pub layout_min: [f64; 3],
    pub layout_max: [f64; 3],
    pub object_radius: f64,
    pub blobs_per_object: usize,
    pub camera_count: usize,
    pub camera_radius: f64,
    pub camera_height: f64,
    pub look_at: [f64; 3],
    /// Held-out cameras sit halfway between training cameras on the same ring.
    pub holdout_count: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub background: [f64; 3],
    /// Per-channel standard deviation of feature noise inside masks.
    pub feature_noise: f64,
    /// Gaussian correlation length of the noise in pixels; 0 for independent pixels.
    pub noise_correlation: f64,
    /// Chance that an object's region in a training view carries another class's prototype.
    pub confusion_probability: f64,
    pub initial_points_per_object: usize,
}

/// Minimum pairwise angle between class prototypes, in degrees.
pub const MIN_PROTOTYPE_ANGLE: f64 = 10.0;

impl SceneSpec {
    /// Five objects, six classes (one never placed), eight training cameras at 128×128.
    pub fn reference() -> Self {
        let labels = ["chair", "table", "lamp", "sofa", "plant", "window"];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let classes = labels
            .iter()
            .map(|l| {
                let v: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                ClassSpec { label: l.to_string(), prototype: v.iter().map(|x| (x / n) as f32 as f64).collect() }
            })
            .collect();
        Self {
            seed: 7,
            object_count: 5,
            classes,
            object_classes: (0..5).collect(),
            layout_min: [-1.3, -0.4, -1.3],
            layout_max: [1.3, 0.4, 1.3],
            object_radius: 0.4,
            blobs_per_object: 14,
            camera_count: 8,
            camera_radius: 4.5,
            camera_height: 1.8,
            look_at: [0.0, 0.0, 0.0],
            holdout_count: 4,
            width: 128,
            height: 128,
            focal: 150.0,
            background: [0.0; 3],
            feature_noise: 0.45,
            noise_correlation: 2.0,
            confusion_probability: 0.2,
            initial_points_per_object: 30,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.prototype.len())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateSpec(m));
        if self.object_count < 2 {
            return bad("need at least two objects".into());
        }
        if self.classes.len() < 2 {
            return bad("need at least two classes".into());
        }
        let d = self.feature_dim();
        if d == 0 || self.classes.iter().any(|c| c.prototype.len() != d) {
            return bad("prototypes must share a nonzero dimension".into());
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[i + 1..] {
                let angle = angle_degrees(&a.prototype, &b.prototype);
                if angle.is_nan() || angle < MIN_PROTOTYPE_ANGLE {
                    return bad(format!("prototypes of {} and {} are {angle:.1} degrees apart", a.label, b.label));
                }
            }
        }
        if self.object_classes.len() != self.object_count || self.object_classes.iter().any(|&c| c >= self.classes.len()) {
            return bad("object_classes must name a valid class per object".into());
        }
        if (0..3).any(|k| self.layout_min[k] > self.layout_max[k]) {
            return bad("layout bounds are inverted".into());
        }
        if !(self.object_radius > 0.0) || self.blobs_per_object == 0 {
            return bad("objects need a positive radius and at least one blob".into());
        }
        if self.camera_count < 1 || self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return bad("camera ring needs cameras, a positive focal length and image size".into());
        }
        if self.holdout_count > self.camera_count {
            return bad("at most one held-out camera per ring step".into());
        }
        if !(self.feature_noise >= 0.0) || !(self.noise_correlation >= 0.0) || !(0.0..=1.0).contains(&self.confusion_probability) {
            return bad("noise parameters out of range".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "object_count = {}", self.object_count).unwrap();
        for c in &self.classes {
            writeln!(out, "class = {} {}", c.label, join(&c.prototype)).unwrap();
        }
        let oc: Vec<String> = self.object_classes.iter().map(|c| c.to_string()).collect();
        writeln!(out, "object_classes = {}", oc.join(" ")).unwrap();
        writeln!(out, "layout_min = {}", join(&self.layout_min)).unwrap();
        writeln!(out, "layout_max = {}", join(&self.layout_max)).unwrap();
        writeln!(out, "object_radius = {}", self.object_radius).unwrap();
        writeln!(out, "blobs_per_object = {}", self.blobs_per_object).unwrap();
        writeln!(out, "camera_count = {}", self.camera_count).unwrap();
        writeln!(out, "camera_radius = {}", self.camera_radius).unwrap();
        writeln!(out, "camera_height = {}", self.camera_height).unwrap();
        writeln!(out, "look_at = {}", join(&self.look_at)).unwrap();
        writeln!(out, "holdout_count = {}", self.holdout_count).unwrap();
        writeln!(out, "width = {}", self.width).unwrap();
        writeln!(out, "height = {}", self.height).unwrap();
        writeln!(out, "focal = {}", self.focal).unwrap();
        writeln!(out, "background = {}", join(&self.background)).unwrap();
        writeln!(out, "feature_noise = {}", self.feature_noise).unwrap();
        writeln!(out, "noise_correlation = {}", self.noise_correlation).unwrap();
        writeln!(out, "confusion_probability = {}", self.confusion_probability).unwrap();
        writeln!(out, "initial_points_per_object = {}", self.initial_points_per_object).unwrap();
        out
    }

    /// Parses `key = value` lines over the reference spec. Any `class` line replaces the reference classes.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::reference();
        let mut classes = Vec::new();
        let mut object_classes_set = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |what: &str| Error::invalid(format!("spec line {}: {what}", n + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let nums = |count: usize| -> Result<Vec<f64>> {
                let v = value.split_whitespace().map(|t| t.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
                match v {
                    Ok(v) if v.len() == count => Ok(v),
                    _ => Err(err(&format!("{key} needs {count} numbers"))),
                }
            };
            let one = || nums(1).map(|v| v[0]);
            let int = || value.parse::<usize>().map_err(|_| err(&format!("{key} needs an integer")));
            match key {
                "seed" => spec.seed = value.parse().map_err(|_| err("seed needs an integer"))?,
                "object_count" => spec.object_count = int()?,
                "class" => {
                    let mut parts = value.split_whitespace();
                    let label = parts.next().ok_or_else(|| err("class needs a label"))?.to_string();
                    let prototype = parts
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err("bad prototype value"))?;
                    classes.push(ClassSpec { label, prototype });
                }
                "object_classes" => {
                    spec.object_classes = value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err("bad class index"))?;
                    object_classes_set = true;
                }
                "layout_min" => spec.layout_min = nums(3)?.try_into().unwrap(),
                "layout_max" => spec.layout_max = nums(3)?.try_into().unwrap(),
                "object_radius" => spec.object_radius = one()?,
                "blobs_per_object" => spec.blobs_per_object = int()?,
                "camera_count" => spec.camera_count = int()?,
                "camera_radius" => spec.camera_radius = one()?,
                "camera_height" => spec.camera_height = one()?,
                "look_at" => spec.look_at = nums(3)?.try_into().unwrap(),
                "holdout_count" => spec.holdout_count = int()?,
                "width" => spec.width = int()?,
                "height" => spec.height = int()?,
                "focal" => spec.focal = one()?,
                "background" => spec.background = nums(3)?.try_into().unwrap(),
                "feature_noise" => spec.feature_noise = one()?,
                "noise_correlation" => spec.noise_correlation = one()?,
                "confusion_probability" => spec.confusion_probability = one()?,
                "initial_points_per_object" => spec.initial_points_per_object = int()?,
                _ => return Err(Error::UnknownId(format!("spec key {key:?}"))),
            }
        }
        if !classes.is_empty() {
            spec.classes = classes;
        }
        if !object_classes_set {
            spec.object_classes = (0..spec.object_count).map(|i| i % spec.classes.len()).collect();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn angle_degrees(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// One rendered view with its oracle annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthView {
    pub camera: Camera,
    pub target: Image,
    pub masks: RegionMaskSet,
    pub features: FeatureMap,
    /// Ground-truth class per pixel, unlabeled on background.
    pub labels: LabelMap,
    /// Objects whose region carries a confuser prototype in this view.
    pub confused: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub spec: SceneSpec,
    pub ground_truth: Scene,
    pub initial: Scene,
    pub bank: TextBank,
    pub train: Vec<SynthView>,
    pub test: Vec<SynthView>,
}

/// Random-number streams, one per generation stage.
#[derive(Clone, Copy)]
enum Stream {
    Layout = 1,
    Blobs = 2,
    Initial = 3,
    Confusion = 4,
    Noise = 5,
}

fn stream_rng(seed: u64, stream: Stream, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | sub);
    rng
}

const OBJECT_COLORS: [[f64; 3]; 8] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.65, 0.3],
    [0.25, 0.35, 0.85],
    [0.9, 0.75, 0.2],
    [0.7, 0.3, 0.75],
    [0.2, 0.75, 0.8],
    [0.95, 0.55, 0.3],
    [0.55, 0.55, 0.55],
];

fn object_centers(spec: &SceneSpec) -> Result<Vec<[f64; 3]>> {
    let mut rng = stream_rng(spec.seed, Stream::Layout, 0);
    let min_gap = 2.2 * spec.object_radius;
    let mut centers: Vec<[f64; 3]> = Vec::new();
    let mut attempts = 0;
    while centers.len() < spec.object_count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::DegenerateSpec("objects do not fit in the layout bounds".into()));
        }
        let c: [f64; 3] = std::array::from_fn(|k| {
            if spec.layout_max[k] > spec.layout_min[k] {
                rng.random_range(spec.layout_min[k]..spec.layout_max[k])
            } else {
                spec.layout_min[k]
            }
        });
        if centers.iter().all(|o| dist(o, &c) >= min_gap) {
            centers.push(c);
        }
    }
    Ok(centers)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    q.map(|v| v / n)
}

fn point_in_ball(rng: &mut ChaCha8Rng, center: &[f64; 3], radius: f64) -> [f64; 3] {
    loop {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return std::array::from_fn(|k| center[k] + radius * p[k]);
        }
    }
}

/// Ground-truth clusters. Semantics hold a one-hot object indicator used to cut silhouettes.
fn ground_truth_scene(spec: &SceneSpec, centers: &[[f64; 3]]) -> Result<Scene> {
    let mut scene = Scene::new(spec.object_count, spec.object_count.max(2))?.with_background(spec.background);
    for (o, center) in centers.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, Stream::Blobs, o as u64);
        let base = OBJECT_COLORS[o % OBJECT_COLORS.len()];
        for _ in 0..spec.blobs_per_object {
            let position = point_in_ball(&mut rng, center, 0.55 * spec.object_radius);
            let scale: [f64; 3] = std::array::from_fn(|_| spec.object_radius * rng.random_range(0.2..0.45));
            let color: [f64; 3] = std::array::from_fn(|k| (base[k] + rng.random_range(-0.12..0.12)).clamp(0.0, 1.0));
            let mut g = Gaussian::new(position, scale, rng.random_range(0.9..0.99), color, spec.object_count);
            g.rotation = random_rotation(&mut rng);
            g.semantic[o] = 1.0;
            scene.push(g)?;
        }
    }
    Ok(scene)
}

/// Sparse, low-opacity points scattered through each object's bounding ball.
fn initial_scene(spec: &SceneSpec, centers: &[[f64; 3]], semantic_dim: usize) -> Result<Scene> {
    let mut scene = Scene::new(semantic_dim, spec.classes.len())?.with_background(spec.background);
    let mut rng = stream_rng(spec.seed, Stream::Initial, 0);
    for center in centers {
        for _ in 0..spec.initial_points_per_object {
            let position = point_in_ball(&mut rng, center, spec.object_radius);
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
            scene.push(Gaussian::new(position, [0.5 * spec.object_radius / 3.0; 3], 0.1, color, semantic_dim))?;
        }
    }
    Ok(scene)
}

fn ring_camera(spec: &SceneSpec, angle: f64) -> Result<Camera> {
    let eye = [
        spec.look_at[0] + spec.camera_radius * angle.cos(),
        spec.camera_height,
        spec.look_at[2] + spec.camera_radius * angle.sin(),
    ];
    Camera::look_at(eye, spec.look_at, [0.0, 1.0, 0.0], spec.focal, spec.width, spec.height)
}

/// Training cameras at `2πi/n`; held-out cameras half a step after evenly spread training cameras.
pub fn ring_cameras(spec: &SceneSpec) -> Result<(Vec<Camera>, Vec<Camera>)> {
    let step = 2.0 * PI / spec.camera_count as f64;
    let train = (0..spec.camera_count).map(|i| ring_camera(spec, i as f64 * step)).collect::<Result<Vec<_>>>()?;
    let test = (0..spec.holdout_count)
        .map(|j| {
            let i = j * spec.camera_count / spec.holdout_count.max(1);
            ring_camera(spec, (i as f64 + 0.5) * step)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, test))
}

/// Object silhouettes: the object with the largest blended indicator, if that weight exceeds 0.5.
fn silhouettes(gt: &Scene, camera: &Camera, view_id: usize) -> Result<(RegionMaskSet, Vec<u32>)> {
    let out = rasterize(gt, camera);
    let n = camera.pixel_count();
    let k = gt.semantic_dim;
    let mut owner = vec![UNLABELED; n];
    for (i, f) in out.feature.chunks_exact(k).enumerate() {
        let mut best = 0;
        for o in 1..k {
            if f[o] > f[best] {
                best = o;
            }
        }
        if f[best] > 0.5 {
            owner[i] = best as u32;
        }
    }
    let mut regions = Vec::new();
    for o in 0..k as u32 {
        let mask: Vec<bool> = owner.iter().map(|&w| w == o).collect();
        if mask.iter().any(|&m| m) {
            regions.push(Region { region_id: regions.len() as u32, track_id: o, mask });
        }
    }
    Ok((RegionMaskSet::new(view_id, camera.width, camera.height, regions)?, owner))
}

/// Unit-variance noise planes with Gaussian spatial correlation of length `ell` pixels.
fn noise_planes(rng: &mut ChaCha8Rng, dim: usize, w: usize, h: usize, ell: f64) -> Vec<f64> {
    let mut data: Vec<f64> = (0..dim * w * h).map(|_| rng.sample(StandardNormal)).collect();
    if ell <= 0.0 {
        return data;
    }
    let r = (3.0 * ell).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|t| (-(t * t) as f64 / (2.0 * ell * ell)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / sum).collect();
    // the separable blur of white noise has per-pixel variance (Σk²)² away from borders
    let gain = kernel.iter().map(|v| v * v).sum::<f64>();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for plane in data.chunks_exact_mut(w * h) {
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel.iter().enumerate().map(|(j, kv)| kv * plane[y * w + clamp(x as isize + j as isize - r, w)]).sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = kernel.iter().enumerate().map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x]).sum();
                plane[y * w + x] = v / gain;
            }
        }
    }
    data
}

fn feature_map(
    spec: &SceneSpec,
    view_id: usize,
    owner: &[u32],
    confusers: &[(u32, usize)],
    noise_stream: u64,
) -> Result<FeatureMap> {
    let d = spec.feature_dim();
    let (w, h) = (spec.width, spec.height);
    let plane = w * h;
    let mut rng = stream_rng(spec.seed, Stream::Noise, noise_stream);
    let noise = if spec.feature_noise > 0.0 {
        noise_planes(&mut rng, d, w, h, spec.noise_correlation)
    } else {
        vec![0.0; d * plane]
    };
    let mut data = vec![0.0; d * plane];
    for (i, &o) in owner.iter().enumerate() {
        if o == UNLABELED {
            continue;
        }
        let class = confusers
            .iter()
            .find(|(obj, _)| *obj == o)
            .map_or(spec.object_classes[o as usize], |(_, c)| *c);
        let proto = &spec.classes[class].prototype;
        for c in 0..d {
            // round through f32 so the in-memory map equals its serialized form
            data[c * plane + i] = (proto[c] + spec.feature_noise * noise[c * plane + i]) as f32 as f64;
        }
    }
    FeatureMap::new(view_id, d, w, h, data)
}

fn build_view(
    spec: &SceneSpec,
    gt: &Scene,
    camera: Camera,
    view_id: usize,
    confusers: Vec<(u32, usize)>,
) -> Result<SynthView> {
    let target = rasterize(gt, &camera);
    let target = Image::new(camera.width, camera.height, target.color)?;
    let (masks, owner) = silhouettes(gt, &camera, view_id)?;
    let labels = LabelMap {
        width: camera.width,
        height: camera.height,
        data: owner.iter().map(|&o| if o == UNLABELED { UNLABELED } else { spec.object_classes[o as usize] as u32 }).collect(),
    };
    let features = feature_map(spec, view_id, &owner, &confusers, view_id as u64)?;
    Ok(SynthView { camera, target, masks, features, labels, confused: confusers.iter().map(|c| c.0).collect() })
}

pub fn generate(spec: &SceneSpec) -> Result<Bundle> {
    spec.validate()?;
    let centers = object_centers(spec)?;
    let (train_cams, test_cams) = ring_cameras(spec)?;
    for cam in train_cams.iter().chain(&test_cams) {
        let eye = cam.center();
        let eye = [eye[0], eye[1], eye[2]];
        if centers.iter().any(|c| dist(c, &eye) <= spec.object_radius * 1.5) {
            return Err(Error::DegenerateSpec("a camera lies inside an object's bounds".into()));
        }
    }
    let gt = ground_truth_scene(spec, &centers)?;
    let initial = initial_scene(spec, &centers, 3)?;
    let bank = TextBank::new(
        spec.classes.iter().map(|c| c.label.clone()).collect(),
        spec.feature_dim(),
        spec.classes.iter().flat_map(|c| c.prototype.iter().copied()).collect(),
    )?;

    let mut train = Vec::with_capacity(train_cams.len());
    for (k, cam) in train_cams.into_iter().enumerate() {
        let mut rng = stream_rng(spec.seed, Stream::Confusion, k as u64);
        let mut confusers = Vec::new();
        for o in 0..spec.object_count {
            if rng.random_bool(spec.confusion_probability) {
                let true_class = spec.object_classes[o];
                let other = rng.random_range(0..spec.classes.len() - 1);
                confusers.push((o as u32, if other >= true_class { other + 1 } else { other }));
            }
        }
        train.push(build_view(spec, &gt, cam, k, confusers)?);
    }
    let offset = train.len();
    let test = test_cams
        .into_iter()
        .enumerate()
        .map(|(j, cam)| build_view(spec, &gt, cam, offset + j, Vec::new()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Bundle { spec: spec.clone(), ground_truth: gt, initial, bank, train, test })
}

impl Bundle {
    /// Held-out views paired with their ground-truth label maps.
    pub fn eval_views(&self) -> Vec<EvalView<'_>> {
        self.test.iter().map(|v| EvalView { camera: &v.camera, target: &v.target, truth: &v.labels }).collect()
    }

    pub fn views(&self) -> impl Iterator<Item = &SynthView> {
        self.train.iter().chain(&self.test)
    }

    fn view_mut(&mut self, view_id: usize) -> Option<&mut SynthView> {
        self.train.iter_mut().chain(self.test.iter_mut()).find(|v| v.masks.view_id == view_id)
    }
}

/// Writes the prototype of `wrong_class` over one region of one view's feature map.
pub fn corrupt_view_labels(mut bundle: Bundle, view_id: usize, region_id: u32, wrong_class: usize) -> Result<Bundle> {
    if wrong_class >= bundle.bank.len() {
        return Err(Error::UnknownId(format!("class {wrong_class}")));
    }
    let proto = bundle.bank.row(wrong_class).to_vec();
    let view = bundle.view_mut(view_id).ok_or_else(|| Error::UnknownId(format!("view {view_id}")))?;
    let region = view
        .masks
        .regions
        .iter()
        .find(|r| r.region_id == region_id)
        .ok_or_else(|| Error::UnknownId(format!("region {region_id} in view {view_id}")))?;
    let plane = view.features.width * view.features.height;
    for i in region.pixels() {
        for (c, p) in proto.iter().enumerate() {
            view.features.data[c * plane + i] = *p;
        }
    }
    Ok(bundle)
}

impl ViewProvider for Bundle {
    fn view_count(&self) -> usize {
        self.train.len()
    }

    fn camera(&self, view: usize) -> Result<Camera> {
        Ok(self.train[view].camera.clone())
    }

    fn target(&self, view: usize) -> Result<Image> {
        Ok(self.train[view].target.clone())
    }

    fn masks(&self, view: usize) -> Result<RegionMaskSet> {
        Ok(self.train[view].masks.clone())
    }

    fn features(&self, view: usize) -> Result<FeatureMap> {
        Ok(self.train[view].features.clone())
    }
}

fn view_path(dir: &Path, stem: &str, i: usize, ext: &str) -> std::path::PathBuf {
    dir.join(format!("{stem}_{i:03}.{ext}"))
}

/// Directory layout: `spec.txt`, `scene.sgs1` (initial cloud), `ground_truth.sgs1`,
/// `cameras.txt` (training cameras first), `classes.txt`, `bank.fts1`, and per view
/// `view_###.{ppm,msk1,fts1}` plus `labels_###.msk1`.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_file(&dir.join("spec.txt"), bundle.spec.to_text())?;
    io::write_file(&dir.join("scene.sgs1"), io::scene_to_string(&bundle.initial))?;
    io::write_file(&dir.join("ground_truth.sgs1"), io::scene_to_string(&bundle.ground_truth))?;
    let cams: Vec<Camera> = bundle.views().map(|v| v.camera.clone()).collect();
    io::write_file(&dir.join("cameras.txt"), io::cameras_to_string(&cams, bundle.initial.background))?;
    io::write_file(&dir.join("classes.txt"), bundle.bank.labels.join("\n") + "\n")?;
    io::write_file(&dir.join("bank.fts1"), io::bank_to_bytes(&bundle.bank))?;
    for (i, v) in bundle.views().enumerate() {
        io::write_file(&view_path(dir, "view", i, "ppm"), io::ppm_to_bytes(&v.target))?;
        io::write_file(&view_path(dir, "view", i, "msk1"), io::masks_to_string(&v.masks))?;
        io::write_file(&view_path(dir, "view", i, "fts1"), io::feature_map_to_bytes(&v.features))?;
        io::write_file(&view_path(dir, "labels", i, "msk1"), io::labels_to_string(&v.labels))?;
    }
    Ok(())
}

/// Reads a bundle written by [`write_bundle`]. Targets come back quantized to 8 bits;
/// the ground-truth cloud keeps its one-hot object semantics.
pub fn read_bundle(dir: &Path) -> Result<Bundle> {
    let spec = SceneSpec::from_text(&io::read_text(&dir.join("spec.txt"))?)?;
    let mut initial = io::scene_from_str(&io::read_text(&dir.join("scene.sgs1"))?)?;
    let mut ground_truth = io::scene_from_str(&io::read_text(&dir.join("ground_truth.sgs1"))?)?;
    let (cams, background) = io::cameras_from_str(&io::read_text(&dir.join("cameras.txt"))?)?;
    initial.background = background;
    ground_truth.background = background;
    let labels: Vec<String> = io::read_text(&dir.join("classes.txt"))?.lines().map(str::to_string).collect();
    let bank = io::bank_from_bytes(&io::read_file(&dir.join("bank.fts1"))?, labels)?;
    let mut views = Vec::with_capacity(cams.len());
    for (i, camera) in cams.into_iter().enumerate() {
        let load = || -> Result<SynthView> {
            let target = io::ppm_from_bytes(&io::read_file(&view_path(dir, "view", i, "ppm"))?)?;
            let masks = io::masks_from_str(i, &io::read_text(&view_path(dir, "view", i, "msk1"))?)?;
            let features = io::feature_map_from_bytes(i, &io::read_file(&view_path(dir, "view", i, "fts1"))?)?;
            let labels = io::labels_from_str(&io::read_text(&view_path(dir, "labels", i, "msk1"))?)?;
            Ok(SynthView { camera, target, masks, features, labels, confused: Vec::new() })
        };
        views.push(load().map_err(|e| e.for_view(i))?);
    }
    if views.len() < spec.camera_count {
        return Err(Error::format("bundle", format!("{} views for {} training cameras", views.len(), spec.camera_count)));
    }
    let test = views.split_off(spec.camera_count);
    Ok(Bundle { spec, ground_truth, initial, bank, train: views, test })
}
