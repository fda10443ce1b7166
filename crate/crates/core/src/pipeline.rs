//! Frame-pair registration: features, correspondences, alignment.

use crate::alignment::{align_randomized_detailed, gather_pairs, RandomizedAlignment};
use crate::cloud::PointCloud;
use crate::config::PipelineConfig;
use crate::correspondence::{build_feature_cloud, match_topk_capped, CorrespondenceSet};
use crate::error::Result;
use crate::extract::{FeatureMap, GaveModel};
use crate::frame::RgbdFrame;
use crate::llt::extract_features;
use crate::pose::Pose;
use crate::synth::oracle_features;

/// Where per-pixel descriptors come from.
#[derive(Debug, Clone, Copy)]
pub enum FeatureSource<'a> {
    Model(&'a GaveModel),
    /// Descriptors from known camera-to-world poses of both frames.
    Oracle { ref_to_world: Pose, tgt_to_world: Pose },
}

impl FeatureSource<'_> {
    /// Oracle source for a pair whose ground truth maps reference-camera
    /// coordinates to target-camera coordinates.
    pub fn oracle_from_gt(gt: &Pose) -> FeatureSource<'static> {
        FeatureSource::Oracle {
            ref_to_world: Pose::identity(),
            tgt_to_world: gt.inverse(),
        }
    }

    fn features(&self, r: &RgbdFrame, t: &RgbdFrame, cfg: &PipelineConfig) -> Result<(FeatureMap, FeatureMap)> {
        match self {
            FeatureSource::Model(m) => Ok((extract_features(r, m, cfg)?, extract_features(t, m, cfg)?)),
            FeatureSource::Oracle { ref_to_world, tgt_to_world } => Ok((
                oracle_features(r, ref_to_world, cfg.llt.d_c)?,
                oracle_features(t, tgt_to_world, cfg.llt.d_c)?,
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    /// Maps reference-camera coordinates to target-camera coordinates.
    pub pose: Pose,
    pub correspondences: CorrespondenceSet,
    pub reference: PointCloud,
    pub target: PointCloud,
    /// All-zero descriptors replaced by the uniform unit vector, per frame.
    pub zero_features: (usize, usize),
    pub alignment: RandomizedAlignment,
}

/// Registers `frame_r` onto `frame_t`.
pub fn register_pair(frame_r: &RgbdFrame, frame_t: &RgbdFrame, source: FeatureSource<'_>, cfg: &PipelineConfig) -> Result<Registration> {
    cfg.validate()?;
    let (fr, ft) = source.features(frame_r, frame_t, cfg)?;
    let (reference, zr) = build_feature_cloud(frame_r, &fr)?;
    let (target, zt) = build_feature_cloud(frame_t, &ft)?;
    let correspondences = match_topk_capped(&reference, &target, cfg.llt.k, cfg.matching.max_ref_points)?;
    let (x, y, w) = gather_pairs(&correspondences, &reference, &target)?;
    let alignment = align_randomized_detailed(&x, &y, &w, &cfg.align)?;
    Ok(Registration {
        pose: alignment.pose,
        correspondences,
        reference,
        target,
        zero_features: (zr, zt),
        alignment,
    })
}
