//! Training views and the per-view inputs they are built from.

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::sac::{assign_indices, assign_pixel_indices, representative_features, FeatureMap, RegionMaskSet, TextBank};

/// Source of per-view training inputs. Errors are reported with the view index attached.
pub trait ViewProvider {
    fn view_count(&self) -> usize;
    fn camera(&self, view: usize) -> Result<Camera>;
    fn target(&self, view: usize) -> Result<Image>;
    fn masks(&self, view: usize) -> Result<RegionMaskSet>;
    fn features(&self, view: usize) -> Result<FeatureMap>;
}

/// How per-view class supervision is derived from the feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    /// One pooled feature per region matched to the text bank.
    Region,
    /// Every masked pixel matched to the text bank on its own.
    PerPixel,
}

#[derive(Clone, Debug)]
pub struct TrainView {
    pub view_id: usize,
    pub camera: Camera,
    pub target: Image,
    pub masks: RegionMaskSet,
    pub labels: LabelMap,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: Vec<TrainView>,
    pub classes: usize,
}

impl Dataset {
    pub fn load(provider: &dyn ViewProvider, bank: &TextBank, supervision: Supervision) -> Result<Dataset> {
        let mut views = Vec::with_capacity(provider.view_count());
        for k in 0..provider.view_count() {
            let view = Self::load_view(provider, bank, supervision, k).map_err(|e| e.for_view(k))?;
            views.push(view);
        }
        if views.is_empty() {
            return Err(Error::invalid("dataset has no views"));
        }
        Ok(Dataset { views, classes: bank.len() })
    }

    fn load_view(provider: &dyn ViewProvider, bank: &TextBank, supervision: Supervision, k: usize) -> Result<TrainView> {
        let camera = provider.camera(k)?;
        let target = provider.target(k)?;
        let masks = provider.masks(k)?;
        let features = provider.features(k)?;
        if (target.width, target.height) != (camera.width, camera.height)
            || (masks.width, masks.height) != (camera.width, camera.height)
        {
            return Err(Error::shape("target, masks and camera disagree on resolution"));
        }
        let labels = match supervision {
            Supervision::Region => assign_indices(&representative_features(&features, &masks)?, bank, &masks)?,
            Supervision::PerPixel => assign_pixel_indices(&features, bank, &masks)?,
        };
        Ok(TrainView { view_id: masks.view_id, camera, target, masks, labels })
    }

    /// 1.1 × the largest camera distance from the mean camera center.
    pub fn extent(&self) -> f64 {
        let centers: Vec<_> = self.views.iter().map(|v| v.camera.center()).collect();
        let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len() as f64;
        let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        1.1 * radius.max(1e-6)
    }
}
