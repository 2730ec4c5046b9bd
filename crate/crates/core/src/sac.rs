//! Compact semantic supervision: one pooled feature per region, matched to a
//! text bank by cosine similarity, and a per-pixel affine decoder from the
//! rendered low-dimensional feature to class logits.

use crate::error::{Error, Result};
use crate::image::{nearest_source, LabelMap, UNLABELED};

/// Per-view `D×H×W` feature tensor, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub view_id: usize,
    pub dim: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(view_id: usize, dim: usize, width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        if data.len() != dim * width * height {
            return Err(Error::shape(format!("{} values for a {dim}x{height}x{width} feature map", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(Self { view_id, dim, width, height, data })
    }

    pub fn pixel(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let plane = self.width * self.height;
        (0..self.dim).map(move |c| self.data[c * plane + i])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub region_id: u32,
    /// Shared by the regions of one physical object across views.
    pub track_id: u32,
    pub mask: Vec<bool>,
}

impl Region {
    pub fn pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionMaskSet {
    pub view_id: usize,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
}

impl RegionMaskSet {
    pub fn new(view_id: usize, width: usize, height: usize, regions: Vec<Region>) -> Result<Self> {
        let set = Self { view_id, width, height, regions };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut owner = vec![false; self.width * self.height];
        for r in &self.regions {
            if r.mask.len() != owner.len() {
                return Err(Error::shape(format!("mask of region {} has {} pixels", r.region_id, r.mask.len())));
            }
            if r.area() == 0 {
                return Err(Error::invalid(format!("region {} has an empty mask", r.region_id)));
            }
            for i in r.pixels() {
                if owner[i] {
                    return Err(Error::invalid(format!("region {} overlaps another region", r.region_id)));
                }
                owner[i] = true;
            }
        }
        Ok(())
    }

    pub fn by_track(&self, track_id: u32) -> Option<&Region> {
        self.regions.iter().find(|r| r.track_id == track_id)
    }

    /// Nearest-neighbor resampling; regions that vanish are dropped.
    pub fn resize_nearest(&self, width: usize, height: usize) -> RegionMaskSet {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let index: Vec<usize> = (0..height)
            .flat_map(|y| {
                let sy = nearest_source(y, self.height, height);
                (0..width).map(move |x| sy * self.width + nearest_source(x, self.width, width))
            })
            .collect();
        let regions = self
            .regions
            .iter()
            .map(|r| Region { mask: index.iter().map(|&i| r.mask[i]).collect(), ..r.clone() })
            .filter(|r| r.area() > 0)
            .collect();
        RegionMaskSet { view_id: self.view_id, width, height, regions }
    }
}

/// `C×D` text embeddings, one row per class label.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBank {
    pub labels: Vec<String>,
    pub dim: usize,
    pub vectors: Vec<f64>,
}

impl TextBank {
    pub fn new(labels: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != labels.len() * dim {
            return Err(Error::shape(format!("{} values for {} rows of dimension {dim}", vectors.len(), labels.len())));
        }
        let bank = Self { labels, dim, vectors };
        for c in 0..bank.len() {
            if norm(bank.row(c)) == 0.0 {
                return Err(Error::ZeroNorm(format!("text embedding {c}")));
            }
        }
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.vectors[c * self.dim..(c + 1) * self.dim]
    }

    /// Highest-cosine class; ties go to the lowest index.
    pub fn best_match(&self, v: &[f64]) -> Result<usize> {
        if v.len() != self.dim {
            return Err(Error::shape(format!("query of dimension {} against a bank of dimension {}", v.len(), self.dim)));
        }
        let nv = norm(v);
        if nv == 0.0 {
            return Err(Error::ZeroNorm("query feature".into()));
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for c in 0..self.len() {
            let row = self.row(c);
            let cos = dot(v, row) / (nv * norm(row));
            if cos > best.0 {
                best = (cos, c);
            }
        }
        Ok(best.1)
    }
}

pub type SemanticIndexMap = LabelMap;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// L2-normalized mean feature of every region (columns in region order).
pub fn representative_features(features: &FeatureMap, masks: &RegionMaskSet) -> Result<Vec<Vec<f64>>> {
    if features.view_id != masks.view_id {
        return Err(Error::invalid(format!("feature view {} vs mask view {}", features.view_id, masks.view_id)));
    }
    if features.width != masks.width || features.height != masks.height {
        return Err(Error::shape("feature map and masks differ in resolution"));
    }
    let plane = features.width * features.height;
    masks
        .regions
        .iter()
        .map(|r| {
            let mut mean = vec![0.0; features.dim];
            let mut count = 0usize;
            for i in r.pixels() {
                for (c, m) in mean.iter_mut().enumerate() {
                    *m += features.data[c * plane + i];
                }
                count += 1;
            }
            if count == 0 {
                return Err(Error::invalid(format!("region {} has an empty mask", r.region_id)));
            }
            let n = norm(&mean);
            if n == 0.0 {
                return Err(Error::ZeroNorm(format!("representative feature of region {}", r.region_id)));
            }
            Ok(mean.into_iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Paints each region with the class whose text embedding best matches its representative feature.
pub fn assign_indices(rep: &[Vec<f64>], bank: &TextBank, masks: &RegionMaskSet) -> Result<SemanticIndexMap> {
    if rep.len() != masks.regions.len() {
        return Err(Error::shape(format!("{} representative features for {} regions", rep.len(), masks.regions.len())));
    }
    let mut map = LabelMap::unlabeled(masks.width, masks.height);
    for (r, v) in masks.regions.iter().zip(rep) {
        let class = bank.best_match(v)? as u32;
        for i in r.pixels() {
            map.data[i] = class;
        }
    }
    Ok(map)
}

/// Per-pixel matching without region pooling.
pub fn assign_pixel_indices(features: &FeatureMap, bank: &TextBank, masks: &RegionMaskSet) -> Result<SemanticIndexMap> {
    if features.width != masks.width || features.height != masks.height {
        return Err(Error::shape("feature map and masks differ in resolution"));
    }
    let mut map = LabelMap::unlabeled(masks.width, masks.height);
    let mut v = vec![0.0; features.dim];
    for r in &masks.regions {
        for i in r.pixels() {
            v.iter_mut().zip(features.pixel(i)).for_each(|(a, b)| *a = b);
            map.data[i] = match bank.best_match(&v) {
                Ok(c) => c as u32,
                Err(Error::ZeroNorm(_)) => UNLABELED,
                Err(e) => return Err(e),
            };
        }
    }
    Ok(map)
}

/// Per-pixel affine map from the rendered `d`-dim feature to `C` class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub classes: usize,
    pub dim: usize,
    /// `C×d`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Decoder {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weight: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// `H×W×C` logits, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    /// Per-pixel argmax, lowest index on ties.
    pub fn argmax(&self) -> LabelMap {
        let data = (0..self.width * self.height).map(|i| argmax(self.at(i)) as u32).collect();
        LabelMap { width: self.width, height: self.height, data }
    }

    pub fn resize_nearest(&self, width: usize, height: usize) -> Logits {
        let mut data = Vec::with_capacity(width * height * self.classes);
        for y in 0..height {
            let sy = nearest_source(y, self.height, height);
            for x in 0..width {
                data.extend_from_slice(self.at(sy * self.width + nearest_source(x, self.width, width)));
            }
        }
        Logits { width, height, classes: self.classes, data }
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn decode(feature: &[f64], width: usize, height: usize, decoder: &Decoder) -> Result<Logits> {
    let d = decoder.dim;
    if feature.len() != width * height * d {
        return Err(Error::shape(format!("feature map has {} values, decoder expects dimension {d}", feature.len())));
    }
    let c = decoder.classes;
    let mut data = vec![0.0; width * height * c];
    for (f, out) in feature.chunks_exact(d).zip(data.chunks_exact_mut(c)) {
        for k in 0..c {
            out[k] = decoder.bias[k] + dot(&decoder.weight[k * d..(k + 1) * d], f);
        }
    }
    Ok(Logits { width, height, classes: c, data })
}

/// Gradients of [`decode`]: `(dL/dfeature, dL/dweight, dL/dbias)`.
pub fn decode_backward(feature: &[f64], grad_logits: &Logits, decoder: &Decoder) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (c, d) = (decoder.classes, decoder.dim);
    let mut g_feat = vec![0.0; feature.len()];
    let mut g_w = vec![0.0; c * d];
    let mut g_b = vec![0.0; c];
    for ((f, gf), gl) in feature.chunks_exact(d).zip(g_feat.chunks_exact_mut(d)).zip(grad_logits.data.chunks_exact(c)) {
        for k in 0..c {
            let g = gl[k];
            if g == 0.0 {
                continue;
            }
            g_b[k] += g;
            let row = &decoder.weight[k * d..(k + 1) * d];
            for j in 0..d {
                g_w[k * d + j] += g * f[j];
                gf[j] += g * row[j];
            }
        }
    }
    (g_feat, g_w, g_b)
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Mean softmax cross-entropy over labeled pixels, with its gradient on the logits.
pub fn semantic_loss(logits: &Logits, target: &SemanticIndexMap) -> Result<(f64, Logits)> {
    if logits.width != target.width || logits.height != target.height {
        return Err(Error::shape(format!(
            "logits {}x{} vs labels {}x{}",
            logits.width, logits.height, target.width, target.height
        )));
    }
    let labeled = target.labeled_count();
    if labeled == 0 {
        return Err(Error::EmptySupervision);
    }
    let c = logits.classes;
    let n = labeled as f64;
    let mut grad = Logits { data: vec![0.0; logits.data.len()], ..logits.clone() };
    let mut loss = 0.0;
    for (i, &label) in target.data.iter().enumerate() {
        if label == UNLABELED {
            continue;
        }
        let label = label as usize;
        if label >= c {
            return Err(Error::invalid(format!("label {label} outside {c} classes")));
        }
        let l = logits.at(i);
        let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - l[label];
        let g = &mut grad.data[i * c..(i + 1) * c];
        for k in 0..c {
            g[k] = (l[k] - lse).exp() / n;
        }
        g[label] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn region(id: u32, track: u32, w: usize, h: usize, pixels: &[usize]) -> Region {
        let mut mask = vec![false; w * h];
        pixels.iter().for_each(|&p| mask[p] = true);
        Region { region_id: id, track_id: track, mask }
    }

    fn bank(rng: &mut ChaCha8Rng, c: usize, d: usize) -> TextBank {
        TextBank::new((0..c).map(|i| format!("class{i}")).collect(), d, (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn constant_map_gives_normalized_constant() {
        let f = FeatureMap::new(0, 2, 3, 2, vec![3.0; 6].into_iter().chain(vec![4.0; 6]).collect()).unwrap();
        let masks = RegionMaskSet::new(0, 3, 2, vec![region(0, 0, 3, 2, &[1, 4, 5])]).unwrap();
        let rep = representative_features(&f, &masks).unwrap();
        assert!((rep[0][0] - 0.6).abs() < 1e-12 && (rep[0][1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn two_pixel_mean() {
        // pixel 0 = (1, 0), pixel 1 = (0, 1)
        let f = FeatureMap::new(0, 2, 2, 1, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let masks = RegionMaskSet::new(0, 2, 1, vec![region(0, 0, 2, 1, &[0, 1])]).unwrap();
        let rep = representative_features(&f, &masks).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((rep[0][0] - h).abs() < 1e-12 && (rep[0][1] - h).abs() < 1e-12);
    }

    #[test]
    fn representative_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (w, h, d) = (8, 8, 5);
        let f = FeatureMap::new(3, d, w, h, (0..d * w * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut owner: Vec<i32> = (0..w * h).map(|_| rng.random_range(-1..3)).collect();
        owner[0] = 0;
        owner[1] = 1;
        owner[2] = 2;
        let regions: Vec<Region> = (0..3)
            .map(|q| region(q, q + 10, w, h, &(0..w * h).filter(|&i| owner[i] == q as i32).collect::<Vec<_>>()))
            .collect();
        let masks = RegionMaskSet::new(3, w, h, regions).unwrap();
        let rep = representative_features(&f, &masks).unwrap();
        for q in 0..3 {
            let mut sum = vec![0.0; d];
            for y in 0..h {
                for x in 0..w {
                    if owner[y * w + x] == q as i32 {
                        for c in 0..d {
                            sum[c] += f.data[c * w * h + y * w + x];
                        }
                    }
                }
            }
            let n = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            for c in 0..d {
                assert!((rep[q][c] - sum[c] / n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_mask_is_rejected() {
        assert!(RegionMaskSet::new(0, 2, 1, vec![region(0, 0, 2, 1, &[])]).is_err());
        assert!(RegionMaskSet::new(0, 2, 1, vec![region(0, 0, 2, 1, &[0]), region(1, 1, 2, 1, &[0, 1])]).is_err());
    }

    #[test]
    fn rep_equal_to_text_row_gets_that_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = bank(&mut rng, 6, 4);
        let masks = RegionMaskSet::new(0, 2, 2, vec![region(0, 0, 2, 2, &[0, 3])]).unwrap();
        let map = assign_indices(&[b.row(3).to_vec()], &b, &masks).unwrap();
        assert_eq!(map.data, vec![3, UNLABELED, UNLABELED, 3]);
        let scaled: Vec<f64> = b.row(3).iter().map(|v| v * 10.0).collect();
        assert_eq!(assign_indices(&[scaled], &b, &masks).unwrap(), map);
        assert!(matches!(assign_indices(&[vec![0.0; 4]], &b, &masks), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn assignment_matches_brute_force_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, m, d) = (7, 5, 6);
        let b = bank(&mut rng, c, d);
        let rep: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let masks = RegionMaskSet::new(0, m, 1, (0..m).map(|q| region(q as u32, q as u32, m, 1, &[q])).collect()).unwrap();
        let map = assign_indices(&rep, &b, &masks).unwrap();
        for q in 0..m {
            let mut scores = vec![];
            for k in 0..c {
                let row = b.row(k);
                let cos = dot(&rep[q], row) / (norm(&rep[q]) * norm(row));
                scores.push(cos);
            }
            let best = (0..c).fold(0, |best, k| if scores[k] > scores[best] { k } else { best });
            assert_eq!(map.data[q] as usize, best);
        }
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let b = TextBank::new(vec!["a".into(), "b".into(), "c".into()], 2, vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(b.best_match(&[1.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn decode_cases() {
        let f = vec![0.5, -1.0, 2.0, 3.0, 0.25, -0.5];
        let z = decode(&f, 2, 1, &Decoder::zeros(4, 3)).unwrap();
        assert!(z.data.iter().all(|v| *v == 0.0));
        let mut id = Decoder::zeros(3, 3);
        for k in 0..3 {
            id.weight[k * 3 + k] = 1.0;
        }
        assert_eq!(decode(&f, 2, 1, &id).unwrap().data, f);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dec = Decoder {
            classes: 4,
            dim: 3,
            weight: (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let out = decode(&f, 2, 1, &dec).unwrap();
        for p in 0..2 {
            for k in 0..4 {
                let mut v = dec.bias[k];
                for j in 0..3 {
                    v += dec.weight[k * 3 + j] * f[p * 3 + j];
                }
                assert!((out.data[p * 4 + k] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Logits { width: 2, height: 2, classes: 4, data: vec![0.3; 16] };
        let target = LabelMap { width: 2, height: 2, data: vec![0, 3, UNLABELED, 2] };
        let (loss, grad) = semantic_loss(&logits, &target).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(grad.at(2).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn confident_margin_gives_vanishing_loss() {
        let mut data = vec![0.0; 4];
        data[1] = 20.0;
        let logits = Logits { width: 1, height: 1, classes: 4, data };
        let (loss, _) = semantic_loss(&logits, &LabelMap { width: 1, height: 1, data: vec![1] }).unwrap();
        assert!(loss < 1e-8);
    }

    #[test]
    fn no_labels_is_empty_supervision() {
        let logits = Logits { width: 1, height: 1, classes: 2, data: vec![0.0; 2] };
        assert!(matches!(semantic_loss(&logits, &LabelMap::unlabeled(1, 1)), Err(Error::EmptySupervision)));
    }

    #[test]
    fn loss_matches_log_softmax_oracle_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = 5;
        let logits = Logits { width: 4, height: 4, classes: c, data: (0..16 * c).map(|_| rng.random_range(-3.0..3.0)).collect() };
        let target = LabelMap {
            width: 4,
            height: 4,
            data: (0..16).map(|i| if i % 5 == 0 { UNLABELED } else { rng.random_range(0..c as u32) }).collect(),
        };
        let (loss, grad) = semantic_loss(&logits, &target).unwrap();
        let mut oracle = 0.0;
        let mut n = 0.0;
        for i in 0..16 {
            if target.data[i] == UNLABELED {
                continue;
            }
            let l = logits.at(i);
            let denom: f64 = l.iter().map(|v| v.exp()).sum();
            oracle -= (l[target.data[i] as usize].exp() / denom).ln();
            n += 1.0;
        }
        assert!((loss - oracle / n).abs() < 1e-12);
        for idx in 0..logits.data.len() {
            let h = 1e-5;
            let mut p = logits.clone();
            let mut m = logits.clone();
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (semantic_loss(&p, &target).unwrap().0 - semantic_loss(&m, &target).unwrap().0) / (2.0 * h);
            let e = (fd - grad.data[idx]).abs() / fd.abs().max(grad.data[idx].abs()).max(1e-8);
            assert!(e < 1e-5, "{idx}: {fd} vs {}", grad.data[idx]);
        }
    }

    #[test]
    fn decoder_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dec = Decoder { classes: 3, dim: 2, weight: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(), bias: vec![0.1, -0.2, 0.3] };
        let f: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up = Logits { width: 2, height: 2, classes: 3, data: (0..12).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let loss = |f: &[f64], dec: &Decoder| decode(f, 2, 2, dec).unwrap().data.iter().zip(&up.data).map(|(a, b)| a * b).sum::<f64>();
        let (gf, gw, gb) = decode_backward(&f, &up, &dec);
        let h = 1e-6;
        for i in 0..f.len() {
            let (mut p, mut m) = (f.clone(), f.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&p, &dec) - loss(&m, &dec)) / (2.0 * h) - gf[i]).abs() < 1e-8);
        }
        for i in 0..6 {
            let (mut p, mut m) = (dec.clone(), dec.clone());
            p.weight[i] += h;
            m.weight[i] -= h;
            assert!(((loss(&f, &p) - loss(&f, &m)) / (2.0 * h) - gw[i]).abs() < 1e-8);
        }
        for i in 0..3 {
            let (mut p, mut m) = (dec.clone(), dec.clone());
            p.bias[i] += h;
            m.bias[i] -= h;
            assert!(((loss(&f, &p) - loss(&f, &m)) / (2.0 * h) - gb[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn assignment_ignores_positive_rescaling(
            seed in 0u64..1000,
            col_scale in prop::collection::vec(0.01f64..100.0, 4),
            row_scale in prop::collection::vec(0.01f64..100.0, 6),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = bank(&mut rng, 6, 5);
            let rep: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let masks = RegionMaskSet::new(0, 4, 1, (0..4).map(|q| region(q as u32, q as u32, 4, 1, &[q])).collect()).unwrap();
            let base = assign_indices(&rep, &b, &masks).unwrap();
            let rep2: Vec<Vec<f64>> = rep.iter().zip(&col_scale).map(|(r, s)| r.iter().map(|v| v * s).collect()).collect();
            let mut vectors = b.vectors.clone();
            for (c, s) in row_scale.iter().enumerate() {
                vectors[c * 5..(c + 1) * 5].iter_mut().for_each(|v| *v *= s);
            }
            let b2 = TextBank::new(b.labels.clone(), 5, vectors).unwrap();
            prop_assert_eq!(base, assign_indices(&rep2, &b2, &masks).unwrap());
        }

        #[test]
        fn representative_ignores_pixel_order(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h, d) = (6, 5, 3);
            let data: Vec<f64> = (0..d * w * h).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mask_pixels: Vec<usize> = (0..w * h).filter(|_| rng.random_bool(0.4)).chain([0]).collect();
            let masks = RegionMaskSet::new(0, w, h, vec![region(0, 0, w, h, &mask_pixels)]).unwrap();
            // permute pixel positions consistently in both feature map and mask
            let mut perm: Vec<usize> = (0..w * h).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let mut pdata = vec![0.0; data.len()];
            for c in 0..d {
                for i in 0..w * h {
                    pdata[c * w * h + perm[i]] = data[c * w * h + i];
                }
            }
            let pmask: Vec<usize> = mask_pixels.iter().map(|&i| perm[i]).collect();
            let a = representative_features(&FeatureMap::new(0, d, w, h, data).unwrap(), &masks).unwrap();
            let pm = RegionMaskSet::new(0, w, h, vec![region(0, 0, w, h, &pmask)]).unwrap();
            let b = representative_features(&FeatureMap::new(0, d, w, h, pdata).unwrap(), &pm).unwrap();
            for (x, y) in a[0].iter().zip(&b[0]) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
