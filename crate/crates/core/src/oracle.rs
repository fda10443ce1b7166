//! Slow reference implementations used to check the fast paths.
//!
//! Everything here is written with plain loops and shares no code with the
//! functions it checks. Intended for small instances only.

use nalgebra::Point3;

use crate::camera::Intrinsics;
use crate::cloud::PointCloud;
use crate::extract::{BilateralGrid, FeatureMap, GuidanceMap};
use crate::llt::SlicedCoefficients;
use crate::pose::Pose;
use crate::tensor::{ConvParams, Tensor};

/// Direct nested-loop convolution plus bias, no normalization.
pub fn oracle_conv(input: &Tensor, p: &ConvParams) -> Tensor {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = p.kernel().shape()[2];
    let cout = p.kernel().shape()[0];
    let (s, d) = (p.stride(), p.dilation());
    let pad = ((k - 1) * d / 2) as i64;
    let oh = h.div_ceil(s);
    let ow = w.div_ceil(s);
    let kern = p.kernel().data();
    let mut out = vec![0.0f32; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..cout {
                let mut acc = p.bias().data()[o] as f64;
                for i in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            let iy = (oy * s) as i64 + (u * d) as i64 - pad;
                            let ix = (ox * s) as i64 + (v * d) as i64 - pad;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            let x = input.data()[(iy as usize * w + ix as usize) * cin + i] as f64;
                            acc += x * kern[((o * cin + i) * k + u) * k + v] as f64;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + o] = acc as f32;
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out).expect("consistent oracle shape")
}

/// Trilinear sample of `grid` at pixel `(y, x)` as an explicit sum over the
/// eight surrounding nodes.
pub fn oracle_trilinear(grid: &BilateralGrid, guidance: &GuidanceMap, y: usize, x: usize) -> Vec<f64> {
    let [gh, gw, n, nz] = grid.view_shape();
    let clamp = |v: f64, hi: usize| v.max(0.0).min((hi - 1) as f64);
    let cy = clamp((y as f64 + 0.5) / 8.0 - 0.5, gh);
    let cx = clamp((x as f64 + 0.5) / 8.0 - 0.5, gw);
    let cz = clamp(guidance.at(y, x) as f64 * nz as f64 - 0.5, nz);
    let mut out = vec![0.0f64; n];
    for (iy, wy) in corners(cy, gh) {
        for (ix, wx) in corners(cx, gw) {
            for (iz, wz) in corners(cz, nz) {
                let wgt = wy * wx * wz;
                for (j, o) in out.iter_mut().enumerate() {
                    *o += wgt * grid.at(iy, ix, j, iz) as f64;
                }
            }
        }
    }
    out
}

fn corners(c: f64, n: usize) -> [(usize, f64); 2] {
    let lo = c.floor() as usize;
    let hi = if lo + 1 < n { lo + 1 } else { lo };
    let t = c - lo as f64;
    [(lo, 1.0 - t), (hi, t)]
}

/// Per-pixel block matrix product `F = blockdiag(A) · V`.
pub fn oracle_apply_llt(a: &SlicedCoefficients, v: &FeatureMap) -> Vec<f64> {
    let (h, w) = (a.height(), a.width());
    let (ng, m) = (a.n_group(), a.group_size());
    let mut out = vec![0.0f64; h * w * ng * m];
    for y in 0..h {
        for x in 0..w {
            let feat = v.pixel(y, x);
            for g in 0..ng {
                let mat = a.matrix(y, x, g);
                for r in 0..m {
                    let mut acc = 0.0;
                    for c in 0..m {
                        acc += mat[r * m + c] as f64 * feat[g * m + c] as f64;
                    }
                    out[(y * w + x) * ng * m + g * m + r] = acc;
                }
            }
        }
    }
    out
}

fn dist(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Exhaustive symmetric Chamfer distance in centimeters.
pub fn oracle_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let one_way = |p: &[Point3<f64>], q: &[Point3<f64>]| {
        let mut sum = 0.0;
        for x in p {
            let mut best = f64::INFINITY;
            for y in q {
                best = best.min(dist(x, y));
            }
            sum += best;
        }
        sum / p.len() as f64
    };
    0.5 * (one_way(&a.positions, &b.positions) + one_way(&b.positions, &a.positions)) * 100.0
}

/// Exhaustive ratio-test matcher returning `(ref, tgt, weight)` triples,
/// sorted by weight then reference index, truncated to `k`.
pub fn oracle_match(reference: &PointCloud, target: &PointCloud, k: usize) -> Vec<(usize, usize, f64)> {
    let rf = reference.features.as_ref().expect("reference features");
    let tf = target.features.as_ref().expect("target features");
    let mut all = Vec::new();
    for i in 0..rf.len() {
        let mut ds: Vec<(f64, usize)> = (0..tf.len())
            .map(|j| {
                let dot: f64 = rf.row(i).iter().zip(tf.row(j)).map(|(a, b)| *a as f64 * *b as f64).sum();
                (1.0 - dot, j)
            })
            .collect();
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w = if ds[1].0 > 0.0 { 1.0 - ds[0].0 / ds[1].0 } else { 0.0 };
        all.push((i, ds[0].1, w.clamp(0.0, 1.0)));
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Mean absolute difference over pixels selected by `mask`, `None` if empty.
pub fn oracle_masked_mean(a: &[f32], b: &[f32], mask: &[bool], channels: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            for c in 0..channels {
                sum += (a[i * channels + c] as f64 - b[i * channels + c] as f64).abs();
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Occupancy of each point under `pose` with nearest-pixel rounding.
pub fn oracle_occupancy(points: &[Point3<f64>], pose: &Pose, k: &Intrinsics) -> Vec<bool> {
    let mut mask = vec![false; k.width * k.height];
    for p in points {
        let r = pose.rotation();
        let t = pose.translation();
        let q = [
            r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + t[0],
            r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + t[1],
            r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + t[2],
        ];
        if q[2] <= 0.0 {
            continue;
        }
        let u = (k.fx * q[0] / q[2] + k.cx).round();
        let v = (k.fy * q[1] / q[2] + k.cy).round();
        if u >= 0.0 && v >= 0.0 && (u as usize) < k.width && (v as usize) < k.height {
            mask[v as usize * k.width + u as usize] = true;
        }
    }
    mask
}
