//! On-disk formats: scenes (`SGS1`), tensors (`FTS1`), region masks (`MSK1`),
//! decoders (`DEC1`), camera poses (`CAM1`) and binary PPM images.
//!
//! Floats in text formats are written with Rust's shortest round-trip
//! representation, so write → read is bit-exact.

use std::fmt::Write as _;
use std::path::Path;
use std::str::SplitAsciiWhitespace;

use nalgebra::{Matrix3, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, Scene};
use crate::image::{Image, LabelMap, UNLABELED};
use crate::sac::{Decoder, FeatureMap, Region, RegionMaskSet, TextBank};

struct Tokens<'a> {
    format: &'static str,
    inner: SplitAsciiWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn new(format: &'static str, text: &'a str) -> Self {
        Self { format, inner: text.split_ascii_whitespace() }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.inner.next().ok_or_else(|| Error::format(self.format, format!("missing {what}")))
    }

    fn expect(&mut self, magic: &str) -> Result<()> {
        let tok = self.next("magic")?;
        if tok != magic {
            return Err(Error::format(self.format, format!("expected {magic}, found {tok:?}")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next(what)?;
        tok.parse().map_err(|_| Error::format(self.format, format!("bad {what}: {tok:?}")))
    }

    fn finish(&mut self) -> Result<()> {
        match self.inner.next() {
            None => Ok(()),
            Some(tok) => Err(Error::format(self.format, format!("trailing data starting at {tok:?}"))),
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn scene_to_string(scene: &Scene) -> String {
    let mut out = format!("SGS1 {} {} {}\n", scene.len(), scene.semantic_dim, scene.class_count);
    for g in &scene.gaussians {
        let values = g
            .position
            .iter()
            .chain(&g.log_scale)
            .chain(&g.rotation)
            .chain(std::iter::once(&g.opacity_logit))
            .chain(&g.color)
            .chain(&g.semantic);
        let mut first = true;
        for v in values {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses an `SGS1` scene. The background is not part of the format and is left black.
pub fn scene_from_str(text: &str) -> Result<Scene> {
    let mut t = Tokens::new("SGS1", text);
    t.expect("SGS1")?;
    let count: usize = t.parse("count")?;
    let d: usize = t.parse("semantic dimension")?;
    let c: usize = t.parse("class count")?;
    let mut scene = Scene::new(d, c)?;
    let record = 14 + d;
    let mut values = Vec::with_capacity(record);
    for i in 0..count {
        values.clear();
        for _ in 0..record {
            values.push(t.parse::<f64>(&format!("value of record {i}"))?);
        }
        scene.push(Gaussian {
            position: [values[0], values[1], values[2]],
            log_scale: [values[3], values[4], values[5]],
            rotation: [values[6], values[7], values[8], values[9]],
            opacity_logit: values[10],
            color: [values[11], values[12], values[13]],
            semantic: values[14..].to_vec(),
        })?;
    }
    t.finish()?;
    Ok(scene)
}

/// Dense `f32` tensor as stored in `FTS1` files.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Self {
        Self { dims, data: data.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut header = format!("FTS1 {}", t.dims.len());
    for d in &t.dims {
        write!(header, " {d}").unwrap();
    }
    header.push('\n');
    let mut out = header.into_bytes();
    out.reserve(t.data.len() * 4);
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("FTS1", "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::format("FTS1", "header is not text"))?;
    let mut t = Tokens::new("FTS1", header);
    t.expect("FTS1")?;
    let n: usize = t.parse("rank")?;
    let dims = (0..n).map(|_| t.parse::<usize>("dimension")).collect::<Result<Vec<_>>>()?;
    t.finish()?;
    let body = &bytes[newline + 1..];
    let count: usize = dims.iter().product();
    if body.len() != count * 4 {
        return Err(Error::format("FTS1", format!("{} payload bytes for {count} floats", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor { dims, data })
}

pub fn feature_map_to_bytes(f: &FeatureMap) -> Vec<u8> {
    tensor_to_bytes(&Tensor::from_f64(vec![f.dim, f.height, f.width], &f.data))
}

pub fn feature_map_from_bytes(view_id: usize, bytes: &[u8]) -> Result<FeatureMap> {
    let t = tensor_from_bytes(bytes)?;
    let [d, h, w] = t.dims[..] else {
        return Err(Error::format("FTS1", format!("feature map needs rank 3, found {}", t.dims.len())));
    };
    FeatureMap::new(view_id, d, w, h, t.to_f64())
}

/// Text banks are stored as a `C×D` tensor; labels live in a separate list.
pub fn bank_to_bytes(bank: &TextBank) -> Vec<u8> {
    tensor_to_bytes(&Tensor::from_f64(vec![bank.len(), bank.dim], &bank.vectors))
}

pub fn bank_from_bytes(bytes: &[u8], labels: Vec<String>) -> Result<TextBank> {
    let t = tensor_from_bytes(bytes)?;
    let [c, d] = t.dims[..] else {
        return Err(Error::format("FTS1", format!("text bank needs rank 2, found {}", t.dims.len())));
    };
    if c != labels.len() {
        return Err(Error::format("FTS1", format!("{c} embeddings for {} labels", labels.len())));
    }
    TextBank::new(labels, d, t.to_f64())
}

pub fn masks_to_string(m: &RegionMaskSet) -> String {
    let mut out = format!("MSK1 {} {} {}\n", m.regions.len(), m.height, m.width);
    for r in &m.regions {
        writeln!(out, "{} {}", r.region_id, r.track_id).unwrap();
        for row in r.mask.chunks(m.width) {
            out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
            out.push('\n');
        }
    }
    out
}

pub fn masks_from_str(view_id: usize, text: &str) -> Result<RegionMaskSet> {
    let mut t = Tokens::new("MSK1", text);
    t.expect("MSK1")?;
    let m: usize = t.parse("region count")?;
    let h: usize = t.parse("height")?;
    let w: usize = t.parse("width")?;
    let mut regions = Vec::with_capacity(m);
    for _ in 0..m {
        let region_id: u32 = t.parse("region id")?;
        let track_id: u32 = t.parse("track id")?;
        let mut mask = Vec::with_capacity(w * h);
        while mask.len() < w * h {
            for ch in t.next("mask bits")?.bytes() {
                match ch {
                    b'0' => mask.push(false),
                    b'1' => mask.push(true),
                    _ => return Err(Error::format("MSK1", format!("mask character {:?}", ch as char))),
                }
            }
        }
        if mask.len() != w * h {
            return Err(Error::format("MSK1", format!("region {region_id} has {} mask bits", mask.len())));
        }
        regions.push(Region { region_id, track_id, mask });
    }
    t.finish()?;
    RegionMaskSet::new(view_id, w, h, regions)
}

/// Label maps are stored as `MSK1` with one region per present class, id and track both equal to the class.
pub fn labels_to_string(map: &LabelMap) -> String {
    let mut classes: Vec<u32> = map.data.iter().copied().filter(|&c| c != UNLABELED).collect();
    classes.sort_unstable();
    classes.dedup();
    let regions = classes
        .into_iter()
        .map(|c| Region { region_id: c, track_id: c, mask: map.data.iter().map(|&v| v == c).collect() })
        .collect();
    masks_to_string(&RegionMaskSet { view_id: 0, width: map.width, height: map.height, regions })
}

pub fn labels_from_str(text: &str) -> Result<LabelMap> {
    let set = masks_from_str(0, text)?;
    let mut map = LabelMap::unlabeled(set.width, set.height);
    for r in &set.regions {
        for i in r.pixels() {
            map.data[i] = r.region_id;
        }
    }
    Ok(map)
}

pub fn decoder_to_string(dec: &Decoder) -> String {
    let mut out = format!("DEC1 {} {}\n", dec.classes, dec.dim);
    for row in dec.weight.chunks(dec.dim) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let line: Vec<String> = dec.bias.iter().map(|v| v.to_string()).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
    out
}

pub fn decoder_from_str(text: &str) -> Result<Decoder> {
    let mut t = Tokens::new("DEC1", text);
    t.expect("DEC1")?;
    let c: usize = t.parse("class count")?;
    let d: usize = t.parse("dimension")?;
    let weight = (0..c * d).map(|_| t.parse::<f64>("weight")).collect::<Result<Vec<_>>>()?;
    let bias = (0..c).map(|_| t.parse::<f64>("bias")).collect::<Result<Vec<_>>>()?;
    t.finish()?;
    let dec = Decoder { classes: c, dim: d, weight, bias };
    if !dec.is_finite() {
        return Err(Error::format("DEC1", "non-finite parameter"));
    }
    Ok(dec)
}

/// Camera list plus the scene background: `CAM1 <n> <r> <g> <b>`, then per camera
/// `fx fy cx cy width height near` followed by the row-major rotation and the translation.
pub fn cameras_to_string(cameras: &[Camera], background: [f64; 3]) -> String {
    let mut out = format!("CAM1 {} {} {} {}\n", cameras.len(), background[0], background[1], background[2]);
    for c in cameras {
        let mut fields = vec![
            c.focal[0].to_string(),
            c.focal[1].to_string(),
            c.principal[0].to_string(),
            c.principal[1].to_string(),
            c.width.to_string(),
            c.height.to_string(),
            c.near_clip.to_string(),
        ];
        for r in 0..3 {
            for k in 0..3 {
                fields.push(c.rotation[(r, k)].to_string());
            }
        }
        fields.extend(c.translation.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn cameras_from_str(text: &str) -> Result<(Vec<Camera>, [f64; 3])> {
    let mut t = Tokens::new("CAM1", text);
    t.expect("CAM1")?;
    let n: usize = t.parse("camera count")?;
    let background = [t.parse("background")?, t.parse("background")?, t.parse("background")?];
    let mut cameras = Vec::with_capacity(n);
    for _ in 0..n {
        let focal = [t.parse("focal")?, t.parse("focal")?];
        let principal = [t.parse("principal point")?, t.parse("principal point")?];
        let width = t.parse("width")?;
        let height = t.parse("height")?;
        let near: f64 = t.parse("near clip")?;
        let rot = (0..9).map(|_| t.parse::<f64>("rotation")).collect::<Result<Vec<_>>>()?;
        let tr = (0..3).map(|_| t.parse::<f64>("translation")).collect::<Result<Vec<_>>>()?;
        let cam = Camera::new(focal, principal, width, height, Matrix3::from_row_slice(&rot), Vector3::from_column_slice(&tr))?
            .with_near_clip(near)?;
        cameras.push(cam);
    }
    t.finish()?;
    Ok((cameras, background))
}

pub fn ppm_to_bytes(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_rgb8());
    out
}

pub fn ppm_from_bytes(bytes: &[u8]) -> Result<Image> {
    // header: magic, width, height, maxval, each separated by whitespace (comments allowed), then one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format("PPM", "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::format("PPM", "header is not text"))?);
    }
    if fields[0] != "P6" {
        return Err(Error::format("PPM", format!("unsupported magic {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format("PPM", format!("bad header field {s:?}")));
    let (w, h, max) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if max != 255 {
        return Err(Error::format("PPM", format!("only 8-bit images are supported, maxval {max}")));
    }
    let body = &bytes[(i + 1).min(bytes.len())..];
    if body.len() != w * h * 3 {
        return Err(Error::format("PPM", format!("{} pixel bytes for {w}x{h}", body.len())));
    }
    Image::from_rgb8(w, h, body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scene_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scene = Scene::new(3, 5).unwrap();
        for _ in 0..20 {
            let mut g = Gaussian::new(
                [rng.random(), rng.random(), rng.random()],
                [0.1, 0.2, 0.3],
                rng.random_range(0.01..0.99),
                [rng.random(), rng.random(), rng.random()],
                3,
            );
            g.rotation = [rng.random(), rng.random(), -rng.random::<f64>(), 1e-300];
            g.semantic = vec![rng.random_range(-1e10..1e10), -0.0, f64::MIN_POSITIVE];
            scene.push(g).unwrap();
        }
        let back = scene_from_str(&scene_to_string(&scene)).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn scene_count_mismatch_is_rejected() {
        let mut scene = Scene::new(2, 2).unwrap();
        scene.push(Gaussian::new([0.0; 3], [1.0; 3], 0.5, [0.5; 3], 2)).unwrap();
        let text = scene_to_string(&scene);
        assert!(scene_from_str(&text.replacen("SGS1 1", "SGS1 2", 1)).is_err());
        assert!(scene_from_str(&text.replacen("SGS1 1", "SGS1 0", 1)).is_err());
        assert!(scene_from_str(&text.replacen("SGS1 1 2", "SGS1 1 3", 1)).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let t = Tensor { dims: vec![2, 3, 4], data: (0..24).map(|i| i as f32 * 0.37 - 2.0).collect() };
        assert_eq!(tensor_from_bytes(&tensor_to_bytes(&t)).unwrap(), t);
        let mut bytes = tensor_to_bytes(&t);
        bytes.pop();
        assert!(tensor_from_bytes(&bytes).is_err());
    }

    #[test]
    fn masks_round_trip() {
        let mut a = vec![false; 12];
        a[1] = true;
        a[5] = true;
        let mut b = vec![false; 12];
        b[11] = true;
        let set = RegionMaskSet::new(
            4,
            4,
            3,
            vec![Region { region_id: 0, track_id: 7, mask: a }, Region { region_id: 3, track_id: 2, mask: b }],
        )
        .unwrap();
        assert_eq!(masks_from_str(4, &masks_to_string(&set)).unwrap(), set);
    }

    #[test]
    fn labels_round_trip() {
        let map = LabelMap { width: 3, height: 2, data: vec![0, UNLABELED, 4, 4, 0, UNLABELED] };
        assert_eq!(labels_from_str(&labels_to_string(&map)).unwrap(), map);
    }

    #[test]
    fn decoder_round_trip() {
        let dec = Decoder { classes: 2, dim: 3, weight: vec![0.1, -0.2, 1e-17, 3.5, 0.0, -7.25], bias: vec![0.3, -0.4] };
        assert_eq!(decoder_from_str(&decoder_to_string(&dec)).unwrap(), dec);
    }

    #[test]
    fn cameras_round_trip() {
        let a = Camera::look_at([1.0, 2.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 50.0, 64, 48).unwrap();
        let b = Camera::look_at([-3.0, 0.5, 1.0], [0.1, 0.0, 0.0], [0.0, 1.0, 0.0], 70.0, 32, 32).unwrap();
        let (cams, bg) = cameras_from_str(&cameras_to_string(&[a.clone(), b.clone()], [0.1, 0.2, 0.3])).unwrap();
        assert_eq!(cams, vec![a, b]);
        assert_eq!(bg, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn ppm_round_trip() {
        let bytes: Vec<u8> = (0..5 * 3 * 3).map(|i| (i * 7) as u8).collect();
        let img = Image::from_rgb8(5, 3, &bytes).unwrap();
        let encoded = ppm_to_bytes(&img);
        assert_eq!(ppm_from_bytes(&encoded).unwrap(), img);
        let mut commented = b"P6 # comment\n5 3\n255\n".to_vec();
        commented.extend(&bytes);
        assert_eq!(ppm_from_bytes(&commented).unwrap(), img);
    }
}
