//! Oracle cross-checks runnable from a release binary.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{gradcheck, random_pose, weighted_procrustes};
use crate::camera::Intrinsics;
use crate::cloud::{Features, PointCloud};
use crate::config::{JbfParams, LltConfig, LossWeights, PipelineConfig};
use crate::correspondence::match_topk;
use crate::extract::{BilateralGrid, FeatureMap, GuidanceMap};
use crate::frame::RgbdFrame;
use crate::llt::{apply_llt, slice, SlicedCoefficients};
use crate::metrics::{chamfer_distance, rotation_error};
use crate::oracle::{oracle_apply_llt, oracle_chamfer, oracle_conv, oracle_match, oracle_occupancy, oracle_trilinear};
use crate::pipeline::{register_pair, FeatureSource};
use crate::pose::Pose;
use crate::preproc::{fill_holes_jbf, normalize_depth};
use crate::render::{render_points, total_loss};
use crate::synth::{gen_scene, perfect_pair, SceneParams};
use crate::tensor::{conv2d, ConvParams, Tensor};

type Check = std::result::Result<(), String>;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: crate::Error) -> String {
    e.to_string()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn conv_matches_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (s, d) in [(1, 1), (1, 2), (2, 1)] {
        let input = random_tensor(&mut rng, vec![9, 11, 3]);
        let p = ConvParams::plain(random_tensor(&mut rng, vec![4, 3, 3, 3]), random_tensor(&mut rng, vec![4]), s, d)
            .map_err(e2s)?;
        let fast = conv2d(&input, &p).map_err(e2s)?;
        let slow = oracle_conv(&input, &p);
        let err = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        ensure(fast.shape() == slow.shape() && err < 1e-4, || format!("stride {s} dilation {d}: max error {err}"))?;
    }
    Ok(())
}

fn small_llt() -> LltConfig {
    LltConfig::new(8, 64, 2, 2, 2, 10).expect("legal configuration")
}

fn slice_matches_oracle() -> Check {
    let cfg = small_llt();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let grid = BilateralGrid::new(random_tensor(&mut rng, vec![2, 3, cfg.d_d]), cfg.n_grid, 0).map_err(e2s)?;
        let g = GuidanceMap::new(24, 16, (0..384).map(|_| rng.gen_range(0.001..0.999)).collect()).map_err(e2s)?;
        let a = slice(&grid, &g, &cfg).map_err(e2s)?;
        for y in 0..16 {
            for x in 0..24 {
                let o = oracle_trilinear(&grid, &g, y, x);
                for (p, q) in a.flat(y, x).iter().zip(&o) {
                    ensure((*p as f64 - q).abs() <= 1e-5 * q.abs().max(1.0), || format!("pixel ({y}, {x}): {p} vs {q}"))?;
                }
            }
        }
    }
    Ok(())
}

fn llt_matches_oracle() -> Check {
    let cfg = small_llt();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w, m) = (8, 8, cfg.group_size());
    let v = FeatureMap::new(random_tensor(&mut rng, vec![h, w, cfg.d_c]), 0).map_err(e2s)?;
    let mut ident = vec![0.0f32; h * w * cfg.coeffs_per_pixel()];
    for px in ident.chunks_exact_mut(cfg.coeffs_per_pixel()) {
        for g in 0..cfg.n_group {
            for r in 0..m {
                px[(g * m + r) * m + r] = 1.0;
            }
        }
    }
    let a = SlicedCoefficients::new(h, w, cfg.n_group, m, ident).map_err(e2s)?;
    ensure(apply_llt(&a, &v).map_err(e2s)?.values() == v.values(), || "identity matrices changed features".into())?;
    let data = (0..h * w * cfg.coeffs_per_pixel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = SlicedCoefficients::new(h, w, cfg.n_group, m, data).map_err(e2s)?;
    let f = apply_llt(&a, &v).map_err(e2s)?;
    for (p, q) in f.values().data().iter().zip(oracle_apply_llt(&a, &v)) {
        ensure((*p as f64 - q).abs() <= 1e-5 * q.abs().max(1.0), || format!("{p} vs {q}"))?;
    }
    Ok(())
}

fn chamfer_matches_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mut cloud = |n| {
            PointCloud::from_positions((0..n).map(|_| Point3::from(Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)))).collect())
        };
        let (a, b) = (cloud(200), cloud(150));
        let fast = chamfer_distance(&a, &b).map_err(e2s)?;
        ensure(fast == oracle_chamfer(&a, &b), || format!("{fast} vs {}", oracle_chamfer(&a, &b)))?;
        ensure(oracle_chamfer(&a, &b) == oracle_chamfer(&b, &a), || "oracle chamfer not symmetric".into())?;
    }
    Ok(())
}

fn matcher_matches_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cloud = |n: usize| {
        let mut c = PointCloud::from_positions(vec![Point3::origin(); n]);
        let mut data = Vec::with_capacity(n * 6);
        for _ in 0..n {
            let v: Vec<f32> = (0..6).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            data.extend(v.iter().map(|x| x / norm));
        }
        c.features = Some(Features::new(6, data).expect("dense features"));
        c
    };
    let (r, t) = (cloud(40), cloud(50));
    let got = match_topk(&r, &t, 15).map_err(e2s)?;
    let want = oracle_match(&r, &t, 15);
    for (p, q) in got.pairs().iter().zip(&want) {
        ensure(p.ref_index == q.0 && p.tgt_index == q.1 && (p.weight - q.2).abs() < 1e-5, || format!("{p:?} vs {q:?}"))?;
    }
    Ok(())
}

fn procrustes_recovers_pose() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let truth = random_pose(&mut rng, std::f64::consts::PI, 2.0);
        let x: Vec<Point3<f64>> = (0..12).map(|_| Point3::from(Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)))).collect();
        let p = weighted_procrustes(&x, &truth.transform(&x), &[1.0; 12]).map_err(e2s)?;
        let r = rotation_error(p.rotation(), truth.rotation());
        let t = (p.translation() - truth.translation()).norm();
        ensure(r.to_radians() < 1e-6 && t < 1e-6, || format!("rotation {r} deg, translation {t} m"))?;
    }
    Ok(())
}

fn gradient_check() -> Check {
    let r = gradcheck(7, 5).map_err(e2s)?;
    ensure(r.max_relative_error < 1e-4, || format!("max relative error {}", r.max_relative_error))
}

fn render_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = Intrinsics::new(20.0, 20.0, 12.0, 8.0, 24, 16).map_err(e2s)?;
    let rgb = (0..24 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let depth = (0..24 * 16).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.5..4.0) }).collect();
    let f = RgbdFrame::new(rgb, depth, k).map_err(e2s)?;
    let cloud = f.unproject();
    let r = render_points(&cloud, &Pose::identity(), &k).map_err(e2s)?;
    ensure(r.mask == f.valid_mask(), || "coverage differs from validity".into())?;
    for i in (0..24 * 16).filter(|&i| f.valid_mask()[i]) {
        ensure(r.depth[i] == f.depth()[i] && r.rgb[i * 3..i * 3 + 3] == f.rgb()[i * 3..i * 3 + 3], || format!("pixel {i} differs"))?;
    }
    let pose = random_pose(&mut rng, 0.3, 0.2);
    let r = render_points(&cloud, &pose, &k).map_err(e2s)?;
    ensure(r.mask == oracle_occupancy(&cloud.positions, &pose, &k), || "occupancy differs from per-point projection".into())
}

fn preprocessing() -> Check {
    let k = Intrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).map_err(e2s)?;
    let mut depth = vec![1.75f32; 64];
    depth[27] = 0.0;
    let f = RgbdFrame::new(vec![0.4; 192], depth, k).map_err(e2s)?;
    let (filled, _) = fill_holes_jbf(&f, &JbfParams::default()).map_err(e2s)?;
    ensure(filled.depth().iter().all(|d| *d == 1.75), || "constant hole not filled exactly".into())?;
    let nd = normalize_depth(8, 8, &[0.0, 1.0, 100.0, 1e6, 0.0, 0.0, 0.0, 0.0].repeat(8), &Default::default()).map_err(e2s)?;
    ensure(nd.values().iter().all(|v| *v > 0.0 && *v < 1.0), || "normalized depth outside (0, 1)".into())
}

fn synthetic_pair() -> Check {
    let p = SceneParams { width: 48, height: 32, ..SceneParams::default() };
    let a = gen_scene(9, &p).map_err(e2s)?;
    let b = gen_scene(9, &p).map_err(e2s)?;
    ensure(a.frame_r == b.frame_r && a.frame_t == b.frame_t && a.pose_gt == b.pose_gt, || "generator not deterministic".into())?;
    let z = SceneParams { max_rotation_deg: 0.0, max_translation_m: 0.0, ..p };
    let c = gen_scene(9, &z).map_err(e2s)?;
    ensure(c.frame_r == c.frame_t && c.pose_gt == Pose::identity(), || "zero motion pair differs".into())
}

fn perfect_pair_losses() -> Check {
    let pair = perfect_pair(32, 24).map_err(e2s)?;
    let cfg = PipelineConfig::default();
    let reg = register_pair(&pair.frame_r, &pair.frame_t, FeatureSource::oracle_from_gt(&pair.pose_gt), &cfg).map_err(e2s)?;
    let l = total_loss(&pair.frame_r, &pair.frame_t, &pair.pose_gt, &reg.correspondences, &LossWeights::default()).map_err(e2s)?;
    ensure(l.correspondence < 1e-9 && l.total < 1e-3, || format!("{l:?}"))
}

fn oracle_registration() -> Check {
    let p = SceneParams { width: 96, height: 72, ..SceneParams::default() };
    let pair = gen_scene(10, &p).map_err(e2s)?;
    let reg = register_pair(&pair.frame_r, &pair.frame_t, FeatureSource::oracle_from_gt(&pair.pose_gt), &PipelineConfig::default())
        .map_err(e2s)?;
    let r = rotation_error(reg.pose.rotation(), pair.pose_gt.rotation());
    ensure(r < 0.5, || format!("rotation error {r} deg"))
}

const CHECKS: &[(&str, fn() -> Check)] = &[
    ("conv2d vs nested-loop oracle", conv_matches_oracle),
    ("slice vs trilinear oracle", slice_matches_oracle),
    ("apply_llt vs block-matmul oracle", llt_matches_oracle),
    ("chamfer vs exhaustive oracle", chamfer_matches_oracle),
    ("match_topk vs exhaustive oracle", matcher_matches_oracle),
    ("weighted_procrustes planted poses", procrustes_recovers_pose),
    ("procrustes_grad vs finite differences", gradient_check),
    ("render round trip and occupancy", render_round_trip),
    ("hole filling and depth normalization", preprocessing),
    ("synthetic pair determinism", synthetic_pair),
    ("perfect pair losses", perfect_pair_losses),
    ("oracle-feature registration", oracle_registration),
];

/// Runs every check, in a fixed order.
pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| match f() {
            Ok(()) => CheckResult { name, passed: true, detail: String::new() },
            Err(detail) => CheckResult { name, passed: false, detail },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
