//! Weighted rigid alignment and its derivatives.

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::config::AlignParams;
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::pose::Pose;

/// Relative gap between singular values below which the SVD differential is
/// treated as undefined.
pub const SINGULAR_GAP_TOL: f64 = 1e-8;

/// Second singular value relative to the first below which the
/// cross-covariance is considered rank deficient.
const RANK_TOL: f64 = 1e-12;

struct Moments {
    total: f64,
    x_bar: Vector3<f64>,
    y_bar: Vector3<f64>,
    cov: Matrix3<f64>,
}

fn check_inputs(x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]) -> Result<()> {
    if y.len() != x.len() {
        return Err(Error::shape("weighted_procrustes", "target points", x.len(), y.len()));
    }
    if w.len() != x.len() {
        return Err(Error::shape("weighted_procrustes", "weights", x.len(), w.len()));
    }
    if x.len() < 3 {
        return Err(Error::shape("weighted_procrustes", "points (minimum)", 3, x.len()));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("weights must be finite and non-negative, got {bad}")));
    }
    if x.iter().chain(y).any(|p| !p.coords.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument("non-finite point coordinates".into()));
    }
    Ok(())
}

fn moments(x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]) -> Result<Moments> {
    check_inputs(x, y, w)?;
    let mut total = 0.0;
    let mut sx = Vector3::zeros();
    let mut sy = Vector3::zeros();
    for ((p, q), &wi) in x.iter().zip(y).zip(w) {
        if wi == 0.0 {
            continue;
        }
        total += wi;
        sx += p.coords * wi;
        sy += q.coords * wi;
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("weights sum to zero".into()));
    }
    let x_bar = sx / total;
    let y_bar = sy / total;
    let mut cov = Matrix3::zeros();
    for ((p, q), &wi) in x.iter().zip(y).zip(w) {
        if wi == 0.0 {
            continue;
        }
        cov += (q.coords - y_bar) * (p.coords - x_bar).transpose() * wi;
    }
    Ok(Moments { total, x_bar, y_bar, cov })
}

/// SVD `M = U·diag(s)·Vᵀ` with `s` sorted descending.
fn sorted_svd(m: &Matrix3<f64>) -> (Matrix3<f64>, Vector3<f64>, Matrix3<f64>) {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested Vᵀ").transpose();
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let pick = |mat: &Matrix3<f64>| Matrix3::from_columns(&[mat.column(order[0]), mat.column(order[1]), mat.column(order[2])]);
    (pick(&u), Vector3::new(s[order[0]], s[order[1]], s[order[2]]), pick(&v))
}

struct Solution {
    m: Moments,
    s: Vector3<f64>,
    v: Matrix3<f64>,
    sign: f64,
    rotation: Matrix3<f64>,
}

fn solve(x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]) -> Result<Solution> {
    let m = moments(x, y, w)?;
    let (u, s, v) = sorted_svd(&m.cov);
    if s[0] <= 0.0 || s[1] <= RANK_TOL * s[0] {
        return Err(Error::Degenerate(format!(
            "rank-deficient cross-covariance (collinear or coincident points), singular values {:.3e} {:.3e} {:.3e}",
            s[0], s[1], s[2]
        )));
    }
    let sign = if (u * v.transpose()).determinant() < 0.0 { -1.0 } else { 1.0 };
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = u * d * v.transpose();
    Ok(Solution { m, s, v, sign, rotation })
}

/// Rigid `(R, t)` minimizing `Σ wᵢ‖R·xᵢ + t − yᵢ‖²`.
///
/// Entries with zero weight are skipped entirely.
pub fn weighted_procrustes(x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]) -> Result<Pose> {
    let sol = solve(x, y, w)?;
    let t = sol.m.y_bar - sol.rotation * sol.m.x_bar;
    Pose::new(sol.rotation, t)
}

/// Weighted objective `Σ wᵢ‖pose(xᵢ) − yᵢ‖²`.
pub fn weighted_objective(pose: &Pose, x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((p, q), wi)| wi * (pose.apply(p) - q).norm_squared())
        .sum()
}

/// Number of pose outputs differentiated: the nine rotation entries in
/// row-major order, then the three translation entries.
pub const POSE_OUTPUTS: usize = 12;

pub type PoseGradient = [f64; POSE_OUTPUTS];

/// Partial derivatives of the pose returned by [`weighted_procrustes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesJacobian {
    /// `dx[i][j]`: derivative of every pose output with respect to `x[i][j]`.
    pub dx: Vec<[PoseGradient; 3]>,
    pub dy: Vec<[PoseGradient; 3]>,
    pub dw: Vec<PoseGradient>,
}

fn flatten(dr: &Matrix3<f64>, dt: &Vector3<f64>) -> PoseGradient {
    let mut g = [0.0; POSE_OUTPUTS];
    for r in 0..3 {
        for c in 0..3 {
            g[r * 3 + c] = dr[(r, c)];
        }
    }
    g[9..].copy_from_slice(dt.as_slice());
    g
}

/// Pose outputs in the order used by [`ProcrustesJacobian`].
pub fn pose_outputs(p: &Pose) -> PoseGradient {
    flatten(p.rotation(), p.translation())
}

/// Analytic derivatives of [`weighted_procrustes`] through the SVD
/// differential.
///
/// With `K = RᵀM` symmetric at the optimum, `dR = R·Ω` where the
/// antisymmetric `Ω` solves `ΩK + KΩ = B − Bᵀ`, `B = Rᵀ·dM`.
pub fn procrustes_grad(x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]) -> Result<ProcrustesJacobian> {
    let sol = solve(x, y, w)?;
    let s = sol.s;
    let gap = (s[0] - s[1]).min(s[1] - s[2]) / s[0];
    if gap < SINGULAR_GAP_TOL {
        return Err(Error::RepeatedSingularValues { gap });
    }
    let lambda = [s[0], s[1], sol.sign * s[2]];
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let sum = (lambda[i] + lambda[j]) / s[0];
        if sum.abs() < SINGULAR_GAP_TOL {
            return Err(Error::RepeatedSingularValues { gap: sum.abs() });
        }
    }
    let r = sol.rotation;
    let v = sol.v;
    let rt = r.transpose();
    let Moments { total, x_bar, y_bar, .. } = sol.m;

    let d_rotation = |dm: &Matrix3<f64>| -> Matrix3<f64> {
        let b = rt * dm;
        let c = v.transpose() * (b - b.transpose()) * v;
        let mut omega = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    omega[(i, j)] = c[(i, j)] / (lambda[i] + lambda[j]);
                }
            }
        }
        r * (v * omega * v.transpose())
    };

    let n = x.len();
    let mut jac = ProcrustesJacobian {
        dx: Vec::with_capacity(n),
        dy: Vec::with_capacity(n),
        dw: Vec::with_capacity(n),
    };
    for i in 0..n {
        let wi = w[i];
        let yc = y[i].coords - y_bar;
        let xc = x[i].coords - x_bar;
        let mut gx = [[0.0; POSE_OUTPUTS]; 3];
        let mut gy = [[0.0; POSE_OUTPUTS]; 3];
        for j in 0..3 {
            let e = Vector3::ith(j, 1.0);
            // x_ij
            let dr = d_rotation(&(yc * e.transpose() * wi));
            let dxb = e * (wi / total);
            gx[j] = flatten(&dr, &(-(dr * x_bar) - r * dxb));
            // y_ij
            let dr = d_rotation(&(e * xc.transpose() * wi));
            let dyb = e * (wi / total);
            gy[j] = flatten(&dr, &(dyb - dr * x_bar));
        }
        let dr = d_rotation(&(yc * xc.transpose()));
        let dt = yc / total - dr * x_bar - r * (xc / total);
        jac.dx.push(gx);
        jac.dy.push(gy);
        jac.dw.push(flatten(&dr, &dt));
    }
    Ok(jac)
}

/// Relative error used when comparing an analytic partial `a` against a
/// finite difference `f`: `|a − f| / max(|a|, |f|, floor)`.
pub fn relative_error(a: f64, f: f64, floor: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(floor)
}

/// Denominator floor of [`relative_error`] in gradient checks.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Central-difference step of the gradient check.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Largest relative disagreement between [`procrustes_grad`] and central
/// differences with step `h` over every input coordinate and weight.
pub fn finite_difference_check(x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64], h: f64) -> Result<f64> {
    let jac = procrustes_grad(x, y, w)?;
    let eval = |x: &[Point3<f64>], y: &[Point3<f64>], w: &[f64]| weighted_procrustes(x, y, w).map(|p| pose_outputs(&p));
    let mut worst = 0.0f64;
    let mut compare = |analytic: &PoseGradient, plus: PoseGradient, minus: PoseGradient| {
        for k in 0..POSE_OUTPUTS {
            let fd = (plus[k] - minus[k]) / (2.0 * h);
            worst = worst.max(relative_error(analytic[k], fd, GRADCHECK_FLOOR));
        }
    };
    for i in 0..x.len() {
        for j in 0..3 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i][j] += h;
            xm[i][j] -= h;
            compare(&jac.dx[i][j], eval(&xp, y, w)?, eval(&xm, y, w)?);
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[i][j] += h;
            ym[i][j] -= h;
            compare(&jac.dy[i][j], eval(x, &yp, w)?, eval(x, &ym, w)?);
        }
        if w[i] >= h {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            compare(&jac.dw[i], eval(x, y, &wp)?, eval(x, y, &wm)?);
        }
    }
    Ok(worst)
}

/// Outcome of a gradient-check sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub points_per_trial: usize,
    pub max_relative_error: f64,
}

/// Runs [`finite_difference_check`] on `trials` random well-conditioned
/// instances of 20 points.
pub fn gradcheck(seed: u64, trials: usize) -> Result<GradcheckReport> {
    const N: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < trials {
        let pose = random_pose(&mut rng, std::f64::consts::PI, 1.0);
        // anisotropic spread keeps the singular values apart
        let scale = Vector3::new(1.0, 0.6, 0.3);
        let x: Vec<Point3<f64>> = (0..N)
            .map(|_| Point3::from(Vector3::from_fn(|k, _| rng.gen_range(-1.0..1.0) * scale[k])))
            .collect();
        let y: Vec<Point3<f64>> = x
            .iter()
            .map(|p| pose.apply(p) + Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05)))
            .collect();
        let w: Vec<f64> = (0..N).map(|_| rng.gen_range(0.5..1.5)).collect();
        match finite_difference_check(&x, &y, &w, GRADCHECK_STEP) {
            Ok(e) => {
                worst = worst.max(e);
                done += 1;
            }
            Err(Error::RepeatedSingularValues { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(GradcheckReport {
        trials,
        points_per_trial: N,
        max_relative_error: worst,
    })
}

/// Uniformly random rotation (from a uniform unit quaternion) scaled down to
/// at most `max_angle` radians, with translation uniform in a ball of radius
/// `max_translation`.
pub fn random_pose<R: Rng>(rng: &mut R, max_angle: f64, max_translation: f64) -> Pose {
    let axis = loop {
        let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = rng.gen_range(0.0..=max_angle);
    let dir = loop {
        let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        if v.norm() <= 1.0 {
            break v;
        }
    };
    Pose::from_axis_angle(&axis, angle, dir * max_translation)
}

/// Result of [`align_randomized_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedAlignment {
    pub pose: Pose,
    /// Winning hypothesis before refinement.
    pub hypothesis: Pose,
    pub best_index: usize,
    /// Weighted inlier score of the winning hypothesis.
    pub score: f64,
    pub inliers: usize,
    pub degenerate_hypotheses: usize,
}

fn weighted_subset(rng: &mut ChaCha8Rng, w: &[f64], k: usize) -> Vec<usize> {
    // Efraimidis–Spirakis keys ln(u)/w; zero weights sort last
    let mut keys: Vec<(f64, usize)> = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let key = if wi > 0.0 { u.ln() / wi } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keys.truncate(k);
    keys.into_iter().map(|(_, i)| i).collect()
}

fn residual(pose: &Pose, x: &Point3<f64>, y: &Point3<f64>) -> f64 {
    (pose.apply(x) - y).norm()
}

/// Hypothesize-and-verify alignment over paired points.
///
/// If the refinement over soft inliers is degenerate the winning hypothesis
/// is returned unrefined.
pub fn align_randomized_detailed(
    x: &[Point3<f64>],
    y: &[Point3<f64>],
    w: &[f64],
    p: &AlignParams,
) -> Result<RandomizedAlignment> {
    p.validate()?;
    check_inputs(x, y, w)?;
    if x.len() < p.subset_size {
        return Err(Error::shape("align_randomized", "correspondences (minimum)", p.subset_size, x.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut best: Option<(f64, usize, Pose)> = None;
    let mut degenerate = 0;
    let mut last_err = None;
    let (mut sx, mut sy, mut sw) = (Vec::new(), Vec::new(), Vec::new());
    for h in 0..p.n_hyp {
        let subset = weighted_subset(&mut rng, w, p.subset_size);
        sx.clear();
        sy.clear();
        sw.clear();
        for &i in &subset {
            sx.push(x[i]);
            sy.push(y[i]);
            sw.push(w[i]);
        }
        let pose = match weighted_procrustes(&sx, &sy, &sw) {
            Ok(pose) => pose,
            Err(e) => {
                degenerate += 1;
                last_err = Some(e);
                continue;
            }
        };
        let score: f64 = x
            .iter()
            .zip(y)
            .zip(w)
            .filter(|((a, b), _)| residual(&pose, a, b) < p.inlier_tau)
            .map(|(_, wi)| wi)
            .sum();
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, h, pose));
        }
    }
    let Some((score, best_index, hypothesis)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Degenerate("no hypotheses evaluated".into())));
    };
    let soft: Vec<f64> = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, b), &wi)| if residual(&hypothesis, a, b) < p.inlier_tau { wi } else { 0.0 })
        .collect();
    let inliers = soft.iter().filter(|v| **v > 0.0).count();
    let pose = weighted_procrustes(x, y, &soft).unwrap_or(hypothesis);
    Ok(RandomizedAlignment {
        pose,
        hypothesis,
        best_index,
        score,
        inliers,
        degenerate_hypotheses: degenerate,
    })
}

/// Gathers the paired positions and weights of a correspondence set.
pub fn gather_pairs(
    c: &CorrespondenceSet,
    reference: &PointCloud,
    target: &PointCloud,
) -> Result<(Vec<Point3<f64>>, Vec<Point3<f64>>, Vec<f64>)> {
    c.check_indices(reference, target)?;
    let x = c.pairs().iter().map(|p| reference.positions[p.ref_index]).collect();
    let y = c.pairs().iter().map(|p| target.positions[p.tgt_index]).collect();
    Ok((x, y, c.weights()))
}

/// Pose mapping reference points onto their matched target points.
pub fn align_randomized(
    c: &CorrespondenceSet,
    reference: &PointCloud,
    target: &PointCloud,
    p: &AlignParams,
) -> Result<Pose> {
    let (x, y, w) = gather_pairs(c, reference, target)?;
    align_randomized_detailed(&x, &y, &w, p).map(|r| r.pose)
}

pub fn pose_compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn pose_inverse(a: &Pose) -> Pose {
    a.inverse()
}

pub fn transform(points: &[Point3<f64>], pose: &Pose) -> Vec<Point3<f64>> {
    pose.transform(points)
}
