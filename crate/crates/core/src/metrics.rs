//! Registration error metrics, Chamfer distance, threshold accuracies and
//! feature-match recall.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::alignment::gather_pairs;
use crate::cloud::PointCloud;
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::pose::Pose;

/// Rotation accuracy thresholds in degrees.
pub const ROTATION_THRESHOLDS_DEG: [f64; 3] = [5.0, 10.0, 45.0];
/// Translation accuracy thresholds in millimeters (5, 10 and 25 cm).
pub const TRANSLATION_THRESHOLDS_MM: [f64; 3] = [50.0, 100.0, 250.0];
/// Chamfer accuracy thresholds in centimeters (1, 5 and 10 mm).
pub const CHAMFER_THRESHOLDS_CM: [f64; 3] = [0.1, 0.5, 1.0];

/// Inlier residual threshold of feature-match recall, meters.
pub const FMR_TAU1: f64 = 0.05;
/// Inlier ratio a pair must exceed to count as matched.
pub const FMR_TAU2: f64 = 0.5;

/// Geodesic angle between two rotations in degrees.
pub fn rotation_error(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let m = r_gt.transpose() * r_est;
    // atan2 keeps full precision near 0 and 180 degrees, where acos does not
    let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    let c = (m.trace() - 1.0) / 2.0;
    s.atan2(c).to_degrees()
}

/// Euclidean translation error in millimeters.
pub fn translation_error(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_est - t_gt).norm() * 1000.0
}

fn dist(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

type Cell = [i64; 3];

/// Uniform hash grid over a point set for exact nearest-neighbor queries.
struct HashGrid<'a> {
    points: &'a [Point3<f64>],
    cell: f64,
    buckets: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

impl<'a> HashGrid<'a> {
    fn new(points: &'a [Point3<f64>]) -> Self {
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            min = min.inf(&p.coords);
            max = max.sup(&p.coords);
        }
        let extent = (max - min).max();
        // roughly one point per occupied cell for surface-like sets
        let cell = if extent > 0.0 {
            extent / (points.len() as f64).sqrt().max(1.0)
        } else {
            1.0
        };
        let mut grid = Self {
            points,
            cell,
            buckets: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            for k in 0..3 {
                grid.lo[k] = grid.lo[k].min(c[k]);
                grid.hi[k] = grid.hi[k].max(c[k]);
            }
            grid.buckets.entry(c).or_default().push(i);
        }
        grid
    }

    fn cell_of(&self, p: &Point3<f64>) -> Cell {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    fn scan(&self, c: Cell, q: &Point3<f64>, best: &mut f64) {
        if let Some(ids) = self.buckets.get(&c) {
            for &i in ids {
                *best = best.min(dist(q, &self.points[i]));
            }
        }
    }

    /// Distance from `q` to its nearest point. Rings of cells at growing
    /// Chebyshev radius are scanned until every unscanned cell is provably
    /// farther than the best candidate.
    fn nearest(&self, q: &Point3<f64>) -> f64 {
        let c = self.cell_of(q);
        let reach = (0..3)
            .map(|k| (c[k] - self.lo[k]).abs().max((self.hi[k] - c[k]).abs()))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for r in 0..=reach {
            for dx in -r..=r {
                for dy in -r..=r {
                    let on_face = dx.abs() == r || dy.abs() == r;
                    if on_face {
                        for dz in -r..=r {
                            self.scan([c[0] + dx, c[1] + dy, c[2] + dz], q, &mut best);
                        }
                    } else {
                        self.scan([c[0] + dx, c[1] + dy, c[2] - r], q, &mut best);
                        if r > 0 {
                            self.scan([c[0] + dx, c[1] + dy, c[2] + r], q, &mut best);
                        }
                    }
                }
            }
            // anything outside rings 0..=r lies at least r cells away
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }
}

fn mean_nearest(from: &[Point3<f64>], to: &[Point3<f64>]) -> f64 {
    let grid = HashGrid::new(to);
    let mut sum = 0.0;
    for p in from {
        sum += grid.nearest(p);
    }
    sum / from.len() as f64
}

/// Symmetric mean nearest-neighbor distance in centimeters.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer_distance: point cloud"));
    }
    if a.positions.iter().chain(&b.positions).any(|p| !p.coords.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidArgument("chamfer_distance: non-finite point".into()));
    }
    Ok(0.5 * (mean_nearest(&a.positions, &b.positions) + mean_nearest(&b.positions, &a.positions)) * 100.0)
}

/// Fraction of `errors` strictly below each threshold.
pub fn accuracy_table(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::Empty("accuracy_table: error list"));
    }
    Ok(thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e < t).count() as f64 / errors.len() as f64)
        .collect())
}

/// One frame pair for [`feature_match_recall`].
#[derive(Debug, Clone, Copy)]
pub struct FmrPair<'a> {
    pub correspondences: &'a CorrespondenceSet,
    pub reference: &'a PointCloud,
    pub target: &'a PointCloud,
    pub gt_pose: &'a Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmrReport {
    pub recall: f64,
    /// Inlier ratio of each pair, in input order.
    pub inlier_ratios: Vec<f64>,
    pub matched: Vec<bool>,
    /// Pairs with no correspondences; they count as unmatched.
    pub empty_pairs: Vec<usize>,
}

/// Inlier ratio of one correspondence set under `gt`: residual `< tau1`.
pub fn inlier_ratio(c: &CorrespondenceSet, reference: &PointCloud, target: &PointCloud, gt: &Pose, tau1: f64) -> Result<f64> {
    if c.is_empty() {
        return Ok(0.0);
    }
    let (x, y, _) = gather_pairs(c, reference, target)?;
    let inliers = x.iter().zip(&y).filter(|(p, q)| (gt.apply(p) - **q).norm() < tau1).count();
    Ok(inliers as f64 / c.len() as f64)
}

/// Fraction of pairs whose inlier ratio strictly exceeds `tau2`.
pub fn feature_match_recall(pairs: &[FmrPair<'_>], tau1: f64, tau2: f64) -> Result<FmrReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("feature_match_recall: pair list"));
    }
    let mut report = FmrReport {
        recall: 0.0,
        inlier_ratios: Vec::with_capacity(pairs.len()),
        matched: Vec::with_capacity(pairs.len()),
        empty_pairs: Vec::new(),
    };
    for (i, p) in pairs.iter().enumerate() {
        if p.correspondences.is_empty() {
            report.empty_pairs.push(i);
        }
        let ratio = inlier_ratio(p.correspondences, p.reference, p.target, p.gt_pose, tau1)?;
        report.inlier_ratios.push(ratio);
        report.matched.push(!p.correspondences.is_empty() && ratio > tau2);
    }
    report.recall = report.matched.iter().filter(|m| **m).count() as f64 / pairs.len() as f64;
    Ok(report)
}

/// Errors of one registered pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairErrors {
    pub rotation_deg: f64,
    pub translation_mm: f64,
    pub chamfer_cm: f64,
}

/// Errors of `est` against `gt`. The Chamfer term compares the reference
/// cloud placed by the estimate with the same cloud placed by ground truth.
pub fn pair_errors(est: &Pose, gt: &Pose, reference: &PointCloud) -> Result<PairErrors> {
    let a = PointCloud::from_positions(est.transform(&reference.positions));
    let b = PointCloud::from_positions(gt.transform(&reference.positions));
    Ok(PairErrors {
        rotation_deg: rotation_error(est.rotation(), gt.rotation()),
        translation_mm: translation_error(est.translation(), gt.translation()),
        chamfer_cm: chamfer_distance(&a, &b)?,
    })
}

/// Mean, median and threshold accuracies of one error column.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub mean: f64,
    pub median: f64,
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl ErrorSummary {
    pub fn new(errors: &[f64], thresholds: &[f64]) -> Result<Self> {
        let accuracy = accuracy_table(errors, thresholds)?;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self {
            mean: errors.iter().sum::<f64>() / n as f64,
            median,
            thresholds: thresholds.to_vec(),
            accuracy,
        })
    }
}

/// Aggregate evaluation over a set of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub pairs: usize,
    pub rotation: ErrorSummary,
    pub translation: ErrorSummary,
    pub chamfer: ErrorSummary,
    /// Present when correspondences were available for every pair.
    pub fmr: Option<f64>,
}

impl EvalSummary {
    pub fn new(errors: &[PairErrors], fmr: Option<f64>) -> Result<Self> {
        let col = |f: fn(&PairErrors) -> f64| errors.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            pairs: errors.len(),
            rotation: ErrorSummary::new(&col(|e| e.rotation_deg), &ROTATION_THRESHOLDS_DEG)?,
            translation: ErrorSummary::new(&col(|e| e.translation_mm), &TRANSLATION_THRESHOLDS_MM)?,
            chamfer: ErrorSummary::new(&col(|e| e.chamfer_cm), &CHAMFER_THRESHOLDS_CM)?,
            fmr,
        })
    }

    /// `key=value` lines followed by an aligned table.
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let cols = [
            ("rotation_deg", "Rotation (deg)", &self.rotation),
            ("translation_mm", "Translation (mm)", &self.translation),
            ("chamfer_cm", "Chamfer (cm)", &self.chamfer),
        ];
        let _ = writeln!(s, "pairs={}", self.pairs);
        for (key, _, e) in &cols {
            let _ = writeln!(s, "{key}.mean={}", e.mean);
            let _ = writeln!(s, "{key}.median={}", e.median);
            for (t, a) in e.thresholds.iter().zip(&e.accuracy) {
                let _ = writeln!(s, "{key}.acc@{t}={a}");
            }
        }
        match self.fmr {
            Some(f) => {
                let _ = writeln!(s, "fmr={f}");
            }
            None => {
                let _ = writeln!(s, "fmr=na");
            }
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<18} {:>10} {:>10} {:>8} {:>8} {:>8}",
            "metric", "mean", "median", "acc@1", "acc@2", "acc@3"
        );
        for (_, name, e) in &cols {
            let _ = write!(s, "{:<18} {:>10.4} {:>10.4}", name, e.mean, e.median);
            for a in &e.accuracy {
                let _ = write!(s, " {:>8.3}", a);
            }
            s.push('\n');
            let th: Vec<String> = e.thresholds.iter().map(|t| format!("{t}")).collect();
            let _ = writeln!(s, "{:<18} thresholds {}", "", th.join(" / "));
        }
        match self.fmr {
            Some(f) => {
                let _ = writeln!(s, "{:<18} {:>10.4}", "FMR", f);
            }
            None => {
                let _ = writeln!(s, "{:<18} {:>10}", "FMR", "n/a");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::Correspondence;
    use crate::oracle::oracle_chamfer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot(axis: Vector3<f64>, deg: f64) -> Matrix3<f64> {
        *Pose::from_axis_angle(&axis, deg.to_radians(), Vector3::zeros()).rotation()
    }

    #[test]
    fn rotation_error_closed_forms() {
        let r = rot(Vector3::new(1.0, 2.0, 0.5), 37.0);
        assert_eq!(rotation_error(&r, &r), 0.0);
        assert!((rotation_error(&(r * rot(Vector3::z(), 10.0)), &r) - 10.0).abs() < 1e-6);
        assert!((rotation_error(&(r * rot(Vector3::x(), 180.0)), &r) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn rotation_error_symmetry_and_left_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..50 {
            let mut r = || rot(Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)), rng.gen_range(0.0..180.0));
            let (a, b, q) = (r(), r(), r());
            let e = rotation_error(&a, &b);
            assert!((e - rotation_error(&b, &a)).abs() < 1e-9);
            assert!((e - rotation_error(&(q * a), &(q * b))).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_error_closed_forms() {
        let t = Vector3::new(0.3, -1.0, 2.0);
        assert_eq!(translation_error(&t, &t), 0.0);
        assert!((translation_error(&(t + Vector3::new(0.01, 0.0, 0.0)), &t) - 10.0).abs() < 1e-9);
        let u = Vector3::new(1.0, 2.0, 2.0);
        assert!((translation_error(&u, &Vector3::zeros()) - 3000.0).abs() < 1e-9);
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> PointCloud {
        PointCloud::from_positions(
            (0..n)
                .map(|_| Point3::from(Vector3::from_fn(|_, _| rng.gen_range(-scale..scale))))
                .collect(),
        )
    }

    #[test]
    fn chamfer_matches_exhaustive_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        for scale in [0.01, 1.0, 30.0] {
            for _ in 0..10 {
                let a = random_cloud(&mut rng, 200, scale);
                let b = random_cloud(&mut rng, 170, scale);
                assert_eq!(chamfer_distance(&a, &b).unwrap(), oracle_chamfer(&a, &b));
            }
        }
        // clustered sets stress the ring expansion
        let mut a = random_cloud(&mut rng, 100, 0.01);
        a.positions.extend(random_cloud(&mut rng, 5, 0.01).positions.iter().map(|p| p + Vector3::repeat(50.0)));
        let b = random_cloud(&mut rng, 50, 100.0);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), oracle_chamfer(&a, &b));
    }

    #[test]
    fn chamfer_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let a = random_cloud(&mut rng, 50, 2.0);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        let b = random_cloud(&mut rng, 60, 2.0);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), chamfer_distance(&b, &a).unwrap());
        // isolated points shifted by 1 cm
        let sparse = PointCloud::from_positions((0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect());
        let moved = PointCloud::from_positions(sparse.positions.iter().map(|p| p + Vector3::new(0.0, 0.01, 0.0)).collect());
        assert!((chamfer_distance(&sparse, &moved).unwrap() - 1.0).abs() < 1e-9);
        assert!(chamfer_distance(&a, &PointCloud::default()).is_err());
        // single point clouds
        let one = PointCloud::from_positions(vec![Point3::new(1.0, 1.0, 1.0)]);
        assert_eq!(chamfer_distance(&one, &one).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_counting() {
        assert_eq!(accuracy_table(&[0.0, 0.0], &ROTATION_THRESHOLDS_DEG).unwrap(), vec![1.0; 3]);
        let acc = accuracy_table(&[4.0, 6.0, 50.0], &[5.0, 10.0, 45.0]).unwrap();
        assert_eq!(acc, vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
        // strict threshold
        assert_eq!(accuracy_table(&[5.0], &[5.0]).unwrap(), vec![0.0]);
        assert_eq!(accuracy_table(&[1e300], &[f64::INFINITY]).unwrap(), vec![1.0]);
        assert!(accuracy_table(&[], &[1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let errs: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..60.0)).collect();
        let th: Vec<f64> = (0..20).map(|i| i as f64 * 3.0).collect();
        let acc = accuracy_table(&errs, &th).unwrap();
        assert!(acc.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn presets() {
        assert_eq!(ROTATION_THRESHOLDS_DEG, [5.0, 10.0, 45.0]);
        assert_eq!(TRANSLATION_THRESHOLDS_MM.map(|t| t / 10.0), [5.0, 10.0, 25.0]);
        assert_eq!(CHAMFER_THRESHOLDS_CM.map(|t| t * 10.0), [1.0, 5.0, 10.0]);
        assert_eq!((FMR_TAU1, FMR_TAU2), (0.05, 0.5));
    }

    fn pair_with_inliers(n: usize, inliers: usize) -> (CorrespondenceSet, PointCloud, PointCloud) {
        let x: Vec<Point3<f64>> = (0..n).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        let y: Vec<Point3<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, p)| if i < inliers { *p } else { p + Vector3::new(0.0, 1.0, 0.0) })
            .collect();
        let c = CorrespondenceSet::new(
            (0..n).map(|i| Correspondence { ref_index: i, tgt_index: i, weight: 1.0 }).collect(),
        )
        .unwrap();
        (c, PointCloud::from_positions(x), PointCloud::from_positions(y))
    }

    #[test]
    fn fmr_counting() {
        let gt = Pose::identity();
        let (c, r, t) = pair_with_inliers(10, 10);
        let p = FmrPair { correspondences: &c, reference: &r, target: &t, gt_pose: &gt };
        assert_eq!(feature_match_recall(&[p], FMR_TAU1, 0.99).unwrap().recall, 1.0);

        let (c, r, t) = pair_with_inliers(10, 5);
        let p = FmrPair { correspondences: &c, reference: &r, target: &t, gt_pose: &gt };
        assert_eq!(feature_match_recall(&[p], FMR_TAU1, FMR_TAU2).unwrap().recall, 0.0);

        let sets: Vec<_> = (0..10).map(|i| pair_with_inliers(10, if i < 6 { 8 } else { 3 })).collect();
        let pairs: Vec<_> = sets
            .iter()
            .map(|(c, r, t)| FmrPair { correspondences: c, reference: r, target: t, gt_pose: &gt })
            .collect();
        assert_eq!(feature_match_recall(&pairs, FMR_TAU1, FMR_TAU2).unwrap().recall, 0.6);

        let empty = CorrespondenceSet::default();
        let (_, r, t) = pair_with_inliers(3, 3);
        let p = FmrPair { correspondences: &empty, reference: &r, target: &t, gt_pose: &gt };
        let rep = feature_match_recall(&[p], FMR_TAU1, FMR_TAU2).unwrap();
        assert_eq!((rep.recall, rep.empty_pairs.clone()), (0.0, vec![0]));
        assert!(feature_match_recall(&[], FMR_TAU1, FMR_TAU2).is_err());
    }

    #[test]
    fn summary_with_ground_truth_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(95);
        let cloud = random_cloud(&mut rng, 40, 2.0);
        let gt = Pose::from_axis_angle(&Vector3::y(), 0.4, Vector3::new(0.1, 0.2, 0.3));
        let e = pair_errors(&gt, &gt, &cloud).unwrap();
        let s = EvalSummary::new(&[e, e], Some(1.0)).unwrap();
        assert_eq!(s.rotation.mean, 0.0);
        assert_eq!(s.translation.mean, 0.0);
        assert_eq!(s.chamfer.mean, 0.0);
        assert!(s.rotation.accuracy.iter().chain(&s.translation.accuracy).chain(&s.chamfer.accuracy).all(|a| *a == 1.0));
        let report = s.to_report();
        assert!(report.contains("rotation_deg.mean=0\n"));
        assert!(report.contains("fmr=1\n"));
        let med = ErrorSummary::new(&[3.0, 1.0, 2.0, 10.0], &[5.0]).unwrap();
        assert_eq!(med.median, 2.5);
    }
}
