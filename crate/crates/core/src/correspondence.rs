//! Weighted top-k correspondences between two feature clouds.
//!
//! Each reference point is matched to its nearest target descriptor under
//! the cosine distance `d = 1 - <a, b>` and weighted by the ratio test
//! `w = 1 - d₁/d₂` against the second-nearest target. The `k` reference
//! points with the largest weights are kept.

use crate::cloud::{Features, PointCloud};
use crate::error::{Error, Result};
use crate::extract::FeatureMap;
use crate::frame::RgbdFrame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub ref_index: usize,
    pub tgt_index: usize,
    /// Ratio weight in `[0, 1]`.
    pub weight: f64,
}

/// Correspondences sorted by non-increasing weight with distinct reference
/// indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<Correspondence>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| !(0.0..=1.0).contains(&p.weight)) {
            return Err(Error::InvalidArgument(format!("correspondence weight {} outside [0, 1]", p.weight)));
        }
        if pairs.windows(2).any(|w| w[0].weight < w[1].weight) {
            return Err(Error::InvalidArgument("correspondence weights must be non-increasing".into()));
        }
        let mut refs: Vec<usize> = pairs.iter().map(|p| p.ref_index).collect();
        refs.sort_unstable();
        if refs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate reference index in correspondences".into()));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.weight).collect()
    }

    /// Checks every index is in range for the given clouds.
    pub fn check_indices(&self, reference: &PointCloud, target: &PointCloud) -> Result<()> {
        for p in &self.pairs {
            if p.ref_index >= reference.len() {
                return Err(Error::shape("correspondences", "ref_index bound", reference.len(), p.ref_index));
            }
            if p.tgt_index >= target.len() {
                return Err(Error::shape("correspondences", "tgt_index bound", target.len(), p.tgt_index));
            }
        }
        Ok(())
    }
}

/// Unprojects a frame and attaches its per-pixel features, L2-normalized.
/// Returns the cloud and how many all-zero feature vectors were replaced by
/// the uniform unit vector.
pub fn build_feature_cloud(frame: &RgbdFrame, f: &FeatureMap) -> Result<(PointCloud, usize)> {
    if f.height() != frame.height() {
        return Err(Error::shape("build_feature_cloud", "height", frame.height(), f.height()));
    }
    if f.width() != frame.width() {
        return Err(Error::shape("build_feature_cloud", "width", frame.width(), f.width()));
    }
    let mut cloud = frame.unproject();
    let dim = f.channels();
    let uniform = (1.0 / dim as f64).sqrt() as f32;
    let mut zero = 0;
    let mut data = Vec::with_capacity(cloud.len() * dim);
    for &(y, x) in cloud.pixel_origin.as_ref().expect("unproject records pixel origins") {
        let v = f.pixel(y as usize, x as usize);
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature value {bad}")));
        }
        let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero += 1;
            data.extend(std::iter::repeat_n(uniform, dim));
        } else {
            data.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
        }
    }
    cloud.features = Some(Features::new(dim, data)?);
    Ok((cloud, zero))
}

/// Indices `0, s, 2s, ...` with the smallest stride `s` keeping at most `cap`.
pub fn stride_subsample(n: usize, cap: usize) -> Vec<usize> {
    let stride = n.div_ceil(cap.max(1)).max(1);
    (0..n).step_by(stride).collect()
}

/// Cosine distance of unit vectors computed as `½‖a - b‖²`, exact zero for
/// identical vectors.
fn half_sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        * 0.5
}

/// Reference rows scored per similarity product.
const REF_BLOCK: usize = 256;
/// Candidates re-scored exactly after the single-precision product.
const RESCORE: usize = 3;

fn features_of<'a>(cloud: &'a PointCloud, which: &str) -> Result<&'a Features> {
    cloud
        .features
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("{which} cloud has no features")))
}

/// Nearest and second-nearest target for each listed reference point, as
/// `(tgt_index, d1, d2)`.
pub fn nearest_two(reference: &PointCloud, target: &PointCloud, ref_indices: &[usize]) -> Result<Vec<(usize, f64, f64)>> {
    let rf = features_of(reference, "reference")?;
    let tf = features_of(target, "target")?;
    if rf.dim() != tf.dim() {
        return Err(Error::shape("match_topk", "feature dimension", rf.dim(), tf.dim()));
    }
    let nt = tf.len();
    if nt < 2 {
        return Err(Error::shape("match_topk", "target points (minimum)", 2, nt));
    }
    let full = rf.dim();
    // trailing columns that are zero everywhere add nothing to any product
    let used_by = |f: &Features| {
        f.data()
            .chunks_exact(full)
            .map(|row| row.iter().rposition(|v| *v != 0.0).map_or(0, |j| j + 1))
            .max()
            .unwrap_or(0)
    };
    let dim = used_by(rf).max(used_by(tf)).max(1);
    let packed_tgt: Vec<f32> = tf.data().chunks_exact(full).flat_map(|row| &row[..dim]).copied().collect();
    let mut out = Vec::with_capacity(ref_indices.len());
    let mut block = vec![0.0f32; REF_BLOCK * dim];
    let mut sims = vec![0.0f32; REF_BLOCK * nt];
    for chunk in ref_indices.chunks(REF_BLOCK) {
        let m = chunk.len();
        for (r, &i) in chunk.iter().enumerate() {
            block[r * dim..(r + 1) * dim].copy_from_slice(&rf.row(i)[..dim]);
        }
        // SAFETY: `block` is m×dim row-major, `packed_tgt` is nt×dim
        // row-major (read transposed via strides), `sims` holds m×nt.
        unsafe {
            matrixmultiply::sgemm(
                m,
                dim,
                nt,
                1.0,
                block.as_ptr(),
                dim as isize,
                1,
                packed_tgt.as_ptr(),
                1,
                dim as isize,
                0.0,
                sims.as_mut_ptr(),
                nt as isize,
                1,
            );
        }
        for (r, &i) in chunk.iter().enumerate() {
            let row = &sims[r * nt..(r + 1) * nt];
            let mut best = [(f32::NEG_INFINITY, usize::MAX); RESCORE];
            for (t, &s) in row.iter().enumerate() {
                if s > best[RESCORE - 1].0 {
                    let mut pos = RESCORE - 1;
                    while pos > 0 && s > best[pos - 1].0 {
                        best[pos] = best[pos - 1];
                        pos -= 1;
                    }
                    best[pos] = (s, t);
                }
            }
            let a = rf.row(i);
            let mut cands: Vec<(f64, usize)> = best
                .iter()
                .filter(|(_, t)| *t != usize::MAX)
                .map(|&(_, t)| (half_sq_dist(a, tf.row(t)), t))
                .collect();
            cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            out.push((cands[0].1, cands[0].0, cands[1].0));
        }
    }
    Ok(out)
}

/// Ratio weight `1 - d₁/d₂`, `0` when both distances vanish.
pub fn ratio_weight(d1: f64, d2: f64) -> f64 {
    if d2 <= 0.0 {
        0.0
    } else {
        (1.0 - d1 / d2).clamp(0.0, 1.0)
    }
}

/// Top-`k` correspondences using every reference point.
pub fn match_topk(reference: &PointCloud, target: &PointCloud, k: usize) -> Result<CorrespondenceSet> {
    match_topk_capped(reference, target, k, usize::MAX)
}

/// Top-`k` correspondences among at most `max_ref_points` reference points
/// chosen by uniform stride. Ties in weight go to the smaller reference index.
pub fn match_topk_capped(
    reference: &PointCloud,
    target: &PointCloud,
    k: usize,
    max_ref_points: usize,
) -> Result<CorrespondenceSet> {
    let candidates = stride_subsample(reference.len(), max_ref_points);
    let nn = nearest_two(reference, target, &candidates)?;
    let mut pairs: Vec<Correspondence> = candidates
        .iter()
        .zip(nn)
        .map(|(&ref_index, (tgt_index, d1, d2))| Correspondence {
            ref_index,
            tgt_index,
            weight: ratio_weight(d1, d2),
        })
        .collect();
    pairs.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.ref_index.cmp(&b.ref_index)));
    pairs.truncate(k);
    CorrespondenceSet::new(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::tensor::Tensor;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud_with(features: Vec<Vec<f32>>) -> PointCloud {
        let dim = features[0].len();
        let n = features.len();
        let mut c = PointCloud::from_positions((0..n).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect());
        let data: Vec<f32> = features
            .into_iter()
            .flat_map(|v| {
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.into_iter().map(move |x| x / norm)
            })
            .collect();
        c.features = Some(Features::new(dim, data).unwrap());
        c
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn self_match_has_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let c = cloud_with((0..20).map(|_| random_unit(&mut rng, 8)).collect());
        let m = match_topk(&c, &c, 20).unwrap();
        assert_eq!(m.len(), 20);
        for p in m.pairs() {
            assert_eq!(p.ref_index, p.tgt_index);
            assert_eq!(p.weight, 1.0);
        }
    }

    #[test]
    fn equidistant_gives_zero_weight() {
        let r = cloud_with(vec![vec![1.0, 0.0, 0.0]]);
        let t = cloud_with(vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let m = match_topk(&r, &t, 5).unwrap();
        assert_eq!(m.pairs()[0].weight, 0.0);
    }

    #[test]
    fn matches_brute_force_on_planted_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let tgt: Vec<Vec<f32>> = (0..10).map(|_| random_unit(&mut rng, 6)).collect();
        // each reference is a small perturbation of a planted target
        let planted: Vec<usize> = (0..10).map(|_| rng.gen_range(0..10)).collect();
        let refs: Vec<Vec<f32>> = planted
            .iter()
            .map(|&t| tgt[t].iter().map(|x| x + rng.gen_range(-0.02..0.02)).collect())
            .collect();
        let (r, t) = (cloud_with(refs), cloud_with(tgt));
        let got = match_topk(&r, &t, 10).unwrap();

        // exhaustive O(N²) oracle
        let (rf, tf) = (r.features.as_ref().unwrap(), t.features.as_ref().unwrap());
        let mut expected = Vec::new();
        for i in 0..10 {
            let mut ds: Vec<(f64, usize)> = (0..10)
                .map(|j| {
                    let dot: f64 = rf.row(i).iter().zip(tf.row(j)).map(|(a, b)| *a as f64 * *b as f64).sum();
                    (1.0 - dot, j)
                })
                .collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(ds[0].1, planted[i]);
            expected.push((i, ds[0].1, 1.0 - ds[0].0 / ds[1].0));
        }
        for p in got.pairs() {
            let e = expected[p.ref_index];
            assert_eq!(p.tgt_index, e.1);
            assert!((p.weight - e.2).abs() < 1e-5);
        }
    }

    #[test]
    fn target_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let tgt: Vec<Vec<f32>> = (0..40).map(|_| random_unit(&mut rng, 8)).collect();
        let refs: Vec<Vec<f32>> = (0..30).map(|_| random_unit(&mut rng, 8)).collect();
        let mut perm: Vec<usize> = (0..40).collect();
        for i in (1..40).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<Vec<f32>> = perm.iter().map(|&i| tgt[i].clone()).collect();
        let a = match_topk(&cloud_with(refs.clone()), &cloud_with(tgt), 12).unwrap();
        let b = match_topk(&cloud_with(refs), &cloud_with(shuffled), 12).unwrap();
        for (p, q) in a.pairs().iter().zip(b.pairs()) {
            assert_eq!(p.ref_index, q.ref_index);
            assert_eq!(p.tgt_index, perm[q.tgt_index]);
            assert_eq!(p.weight, q.weight);
        }
    }

    #[test]
    fn weights_sorted_and_monotone_in_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let r = cloud_with((0..50).map(|_| random_unit(&mut rng, 4)).collect());
        let t = cloud_with((0..60).map(|_| random_unit(&mut rng, 4)).collect());
        let m = match_topk(&r, &t, 50).unwrap();
        assert!(m.pairs().windows(2).all(|w| w[0].weight >= w[1].weight));
        let nn = nearest_two(&r, &t, &(0..50).collect::<Vec<_>>()).unwrap();
        for a in 0..50 {
            for b in 0..50 {
                if nn[a].1 / nn[a].2 < nn[b].1 / nn[b].2 {
                    assert!(ratio_weight(nn[a].1, nn[a].2) > ratio_weight(nn[b].1, nn[b].2));
                }
            }
        }
    }

    #[test]
    fn k_larger_than_reference_uses_all_and_tiny_target_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let r = cloud_with((0..5).map(|_| random_unit(&mut rng, 4)).collect());
        let t = cloud_with((0..6).map(|_| random_unit(&mut rng, 4)).collect());
        assert_eq!(match_topk(&r, &t, 400).unwrap().len(), 5);
        let one = cloud_with(vec![random_unit(&mut rng, 4)]);
        assert!(matches!(match_topk(&r, &one, 3), Err(Error::Shape { .. })));
    }

    #[test]
    fn stride_cap() {
        assert_eq!(stride_subsample(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(stride_subsample(10, 4), vec![0, 3, 6, 9]);
        assert_eq!(stride_subsample(3, 5000), vec![0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let r = cloud_with((0..100).map(|_| random_unit(&mut rng, 4)).collect());
        let m = match_topk_capped(&r, &r, 400, 10).unwrap();
        assert_eq!(m.len(), 10);
        assert!(m.pairs().iter().all(|p| p.ref_index % 10 == 0));
    }

    #[test]
    fn feature_cloud_normalizes_and_flags_zero_vectors() {
        let k = Intrinsics::new(8.0, 8.0, 4.0, 4.0, 8, 8).unwrap();
        let mut depth = vec![1.0f32; 64];
        depth[5] = 0.0;
        let frame = RgbdFrame::new(vec![0.5; 192], depth, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let mut data: Vec<f32> = (0..64 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        data[9..12].fill(0.0);
        let f = FeatureMap::new(Tensor::new(vec![8, 8, 3], data).unwrap(), 0).unwrap();
        let (cloud, zero) = build_feature_cloud(&frame, &f).unwrap();
        assert_eq!(cloud.len(), 63);
        assert_eq!(zero, 1);
        let feats = cloud.features.unwrap();
        for i in 0..feats.len() {
            let n: f32 = feats.row(i).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let bad = FeatureMap::new(Tensor::zeros(vec![8, 4, 3]), 0).unwrap();
        assert!(build_feature_cloud(&frame, &bad).is_err());
    }
}
