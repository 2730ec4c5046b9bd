//! Cross-view consistency: majority-vote pseudo-labels over corresponding
//! regions in neighboring views, and KL attraction of the Gaussians that
//! dominate an object in every view toward their pooled distribution.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::gaussian::Scene;
use crate::image::LabelMap;
use crate::rasterizer::{RenderOutput, NO_CONTRIBUTOR};
use crate::sac::{argmax, semantic_loss, softmax, softmax_into, Logits, RegionMaskSet, SemanticIndexMap};

/// Decoded logits of one view together with its region masks.
#[derive(Clone, Copy, Debug)]
pub struct VoteView<'a> {
    pub logits: &'a Logits,
    pub masks: &'a RegionMaskSet,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteResult {
    pub track_id: u32,
    pub consensus: usize,
    /// `(view_id, per-class pixel counts)` for every view containing the track.
    pub histograms: Vec<(usize, Vec<u64>)>,
}

impl VoteResult {
    pub fn total(&self) -> Vec<u64> {
        let classes = self.histograms.first().map_or(0, |h| h.1.len());
        let mut total = vec![0; classes];
        for (_, h) in &self.histograms {
            total.iter_mut().zip(h).for_each(|(t, c)| *t += c);
        }
        total
    }
}

/// Plurality of per-pixel argmax classes over the union of the track's regions.
pub fn majority_vote(views: &[VoteView], track_id: u32) -> Result<VoteResult> {
    let mut histograms = Vec::new();
    for v in views {
        let Some(region) = v.masks.by_track(track_id) else { continue };
        if v.logits.width != v.masks.width || v.logits.height != v.masks.height {
            return Err(Error::shape(format!("logits and masks of view {} differ in resolution", v.masks.view_id)));
        }
        let mut hist = vec![0u64; v.logits.classes];
        for i in region.pixels() {
            hist[argmax(v.logits.at(i))] += 1;
        }
        histograms.push((v.masks.view_id, hist));
    }
    if histograms.is_empty() {
        return Err(Error::TrackAbsent(track_id));
    }
    let mut result = VoteResult { track_id, consensus: 0, histograms };
    let total = result.total();
    result.consensus = (0..total.len()).fold(0, |best, c| if total[c] > total[best] { c } else { best });
    Ok(result)
}

/// Pseudo-label map of `views[current]`: each region is painted with its track's consensus class.
pub fn pseudo_labels(views: &[VoteView], current: usize) -> Result<(SemanticIndexMap, Vec<VoteResult>)> {
    let masks = views[current].masks;
    let mut map = LabelMap::unlabeled(masks.width, masks.height);
    let mut votes = Vec::with_capacity(masks.regions.len());
    for region in &masks.regions {
        let vote = majority_vote(views, region.track_id)?;
        for i in region.pixels() {
            map.data[i] = vote.consensus as u32;
        }
        votes.push(vote);
    }
    Ok((map, votes))
}

/// Cross-entropy against the pseudo-labels; same contract as [`semantic_loss`].
pub fn consistency_loss_2d(logits: &Logits, pseudo: &SemanticIndexMap) -> Result<(f64, Logits)> {
    semantic_loss(logits, pseudo)
}

/// One forward pass and the masks of the view it was rendered for.
#[derive(Clone, Copy, Debug)]
pub struct MatchView<'a> {
    pub output: &'a RenderOutput,
    pub masks: &'a RegionMaskSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub track_id: u32,
    pub gaussian_indices: BTreeSet<usize>,
    /// Mean of the members' softmaxed semantics; empty when there are no members.
    pub cluster_feature: Vec<f64>,
}

impl MatchSet {
    pub fn is_empty(&self) -> bool {
        self.gaussian_indices.is_empty()
    }
}

/// Gaussians that are the maximal contributor somewhere inside the track's region in every view that sees it.
pub fn match_gaussians(views: &[MatchView], track_id: u32, scene: &Scene) -> MatchSet {
    let mut common: Option<BTreeSet<usize>> = None;
    for v in views {
        let Some(region) = v.masks.by_track(track_id) else { continue };
        let contributors = &v.output.max_contributor;
        if contributors.len() != region.mask.len() {
            continue;
        }
        let set: BTreeSet<usize> = region
            .pixels()
            .map(|i| contributors[i])
            .filter(|&c| c != NO_CONTRIBUTOR && (c as usize) < scene.len())
            .map(|c| c as usize)
            .collect();
        common = Some(match common {
            None => set,
            Some(prev) => prev.intersection(&set).copied().collect(),
        });
    }
    let gaussian_indices = common.unwrap_or_default();
    let mut cluster_feature = Vec::new();
    if !gaussian_indices.is_empty() {
        cluster_feature = vec![0.0; scene.semantic_dim];
        let mut p = vec![0.0; scene.semantic_dim];
        for &i in &gaussian_indices {
            softmax_into(&scene.gaussians[i].semantic, &mut p);
            cluster_feature.iter_mut().zip(&p).for_each(|(m, v)| *m += v);
        }
        let n = gaussian_indices.len() as f64;
        cluster_feature.iter_mut().for_each(|m| *m /= n);
    }
    MatchSet { track_id, gaussian_indices, cluster_feature }
}

/// `Σ_i KL(M ‖ softmax(f_i))` over members, with `M` held fixed.
/// Returns the loss and `(index, dL/df_i)` per member.
pub fn consistency_loss_3d(matched: &MatchSet, scene: &Scene) -> (f64, Vec<(usize, Vec<f64>)>) {
    let m = &matched.cluster_feature;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(matched.gaussian_indices.len());
    for &i in &matched.gaussian_indices {
        let f = &scene.gaussians[i].semantic;
        let max = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (mj, fj) in m.iter().zip(f) {
            if *mj > 0.0 {
                loss += mj * (mj.ln() - (fj - lse));
            }
        }
        // dKL/df = softmax(f) − M since M sums to one
        let p = softmax(f);
        grads.push((i, p.iter().zip(m).map(|(p, m)| p - m).collect()));
    }
    (loss, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian;
    use crate::sac::Region;
    use crate::image::UNLABELED;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn masks(view: usize, w: usize, regions: &[(u32, u32, std::ops::Range<usize>)]) -> RegionMaskSet {
        let regions = regions
            .iter()
            .map(|(id, track, px)| {
                let mut mask = vec![false; w];
                px.clone().for_each(|i| mask[i] = true);
                Region { region_id: *id, track_id: *track, mask }
            })
            .collect();
        RegionMaskSet::new(view, w, 1, regions).unwrap()
    }

    fn logits_for(classes: usize, labels: &[usize]) -> Logits {
        let mut data = vec![0.0; labels.len() * classes];
        for (i, &c) in labels.iter().enumerate() {
            data[i * classes + c] = 5.0;
        }
        Logits { width: labels.len(), height: 1, classes, data }
    }

    #[test]
    fn unanimous_vote() {
        let l = logits_for(4, &[2; 6]);
        let m = masks(0, 6, &[(0, 7, 0..6)]);
        let v = VoteView { logits: &l, masks: &m };
        assert_eq!(majority_vote(&[v, v, v], 7).unwrap().consensus, 2);
    }

    #[test]
    fn plurality_over_union() {
        let (a, b, c) = (logits_for(6, &[2; 30]), logits_for(6, &[5; 10]), logits_for(6, &[2; 12]));
        let (ma, mb, mc) = (masks(0, 30, &[(0, 1, 0..30)]), masks(1, 10, &[(4, 1, 0..10)]), masks(2, 12, &[(9, 1, 0..12)]));
        let views = [VoteView { logits: &a, masks: &ma }, VoteView { logits: &b, masks: &mb }, VoteView { logits: &c, masks: &mc }];
        let vote = majority_vote(&views, 1).unwrap();
        assert_eq!(vote.consensus, 2);
        assert_eq!(vote.total()[2], 42);
        assert_eq!(vote.total().iter().sum::<u64>(), 52);
    }

    #[test]
    fn tie_goes_to_lower_class() {
        let l = logits_for(5, &[4, 4, 1, 1]);
        let m = masks(0, 4, &[(0, 3, 0..4)]);
        assert_eq!(majority_vote(&[VoteView { logits: &l, masks: &m }], 3).unwrap().consensus, 1);
    }

    #[test]
    fn absent_track_is_an_error() {
        let l = logits_for(2, &[0; 3]);
        let m = masks(0, 3, &[(0, 1, 0..3)]);
        assert!(matches!(majority_vote(&[VoteView { logits: &l, masks: &m }], 9), Err(Error::TrackAbsent(9))));
    }

    #[test]
    fn pseudo_labels_paint_current_region() {
        let a = logits_for(3, &[1, 1, 1, 0]);
        let b = logits_for(3, &[0, 0, 0, 1]);
        let ma = masks(0, 4, &[(0, 5, 0..3)]);
        let mb = masks(1, 4, &[(0, 5, 1..4)]);
        let views = [VoteView { logits: &a, masks: &ma }, VoteView { logits: &b, masks: &mb }];
        let (map, votes) = pseudo_labels(&views, 1).unwrap();
        // view 0 contributes three votes for class 1, view 1 two for 0 and one for 1
        assert_eq!(votes[0].consensus, 1);
        assert_eq!(map.data, vec![UNLABELED, 1, 1, 1]);
    }

    #[test]
    fn vote_ignores_region_ids_and_pixel_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..4)).collect();
        let l = logits_for(4, &labels);
        let m = masks(0, 20, &[(0, 2, 0..20)]);
        let base = majority_vote(&[VoteView { logits: &l, masks: &m }], 2).unwrap().consensus;
        let mut rev = labels.clone();
        rev.reverse();
        let lr = logits_for(4, &rev);
        let mr = masks(0, 20, &[(17, 2, 0..20)]);
        assert_eq!(majority_vote(&[VoteView { logits: &lr, masks: &mr }], 2).unwrap().consensus, base);
    }

    fn scene_with(semantics: &[Vec<f64>]) -> Scene {
        let mut scene = Scene::new(semantics[0].len(), 4).unwrap();
        for s in semantics {
            let mut g = Gaussian::new([0.0; 3], [0.1; 3], 0.5, [0.5; 3], s.len());
            g.semantic = s.clone();
            scene.push(g).unwrap();
        }
        scene
    }

    #[test]
    fn identical_members_have_zero_loss() {
        let scene = scene_with(&vec![vec![0.3, -1.0, 2.0]; 4]);
        let set = MatchSet {
            track_id: 0,
            gaussian_indices: (0..4).collect(),
            cluster_feature: softmax(&[0.3, -1.0, 2.0]),
        };
        let (loss, grads) = consistency_loss_3d(&set, &scene);
        assert!(loss.abs() < 1e-12);
        assert!(grads.iter().all(|(_, g)| g.iter().all(|v| v.abs() < 1e-12)));
    }

    #[test]
    fn two_member_hand_evaluation() {
        // softmax([0,0]) = (0.5, 0.5); softmax([ln 9, 0]) = (0.9, 0.1)
        let scene = scene_with(&[vec![0.0, 0.0], vec![9f64.ln(), 0.0]]);
        let set = MatchSet { track_id: 0, gaussian_indices: [0, 1].into(), cluster_feature: vec![0.7, 0.3] };
        let (loss, _) = consistency_loss_3d(&set, &scene);
        let kl1 = 0.7 * (0.7f64 / 0.5).ln() + 0.3 * (0.3f64 / 0.5).ln();
        let kl2 = 0.7 * (0.7f64 / 0.9).ln() + 0.3 * (0.3f64 / 0.1).ln();
        assert!((loss - (kl1 + kl2)).abs() < 1e-12);
    }

    #[test]
    fn loss_3d_is_nonnegative_and_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let sem: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let mut scene = scene_with(&sem);
            let m = (0..3).map(|_| rng.random_range(0.05..1.0)).collect::<Vec<f64>>();
            let s: f64 = m.iter().sum();
            let set = MatchSet { track_id: 0, gaussian_indices: [0, 2, 3].into(), cluster_feature: m.iter().map(|v| v / s).collect() };
            let (loss, grads) = consistency_loss_3d(&set, &scene);
            assert!(loss >= 0.0);
            for (i, g) in grads {
                for j in 0..3 {
                    let h = 1e-6;
                    scene.gaussians[i].semantic[j] += h;
                    let lp = consistency_loss_3d(&set, &scene).0;
                    scene.gaussians[i].semantic[j] -= 2.0 * h;
                    let lm = consistency_loss_3d(&set, &scene).0;
                    scene.gaussians[i].semantic[j] += h;
                    let fd = (lp - lm) / (2.0 * h);
                    assert!((fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-6) < 1e-4);
                }
            }
        }
    }
}
