//! Camera poses, pose error and threshold accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::Match;

const QUAT_TOLERANCE: f64 = 1e-6;

/// Translation in meters plus unit quaternion `(w, x, y, z)`, world-from-camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub t: [f64; 3],
    pub q: [f64; 4],
}

fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Pose {
    /// Validates the quaternion norm and renormalizes it.
    pub fn new(t: [f64; 3], q: [f64; 4]) -> Result<Self> {
        if t.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose values must be finite"));
        }
        let n = quat_norm(&q);
        if (n - 1.0).abs() > QUAT_TOLERANCE {
            return Err(Error::invalid(format!("quaternion norm {n} is not 1")));
        }
        Ok(Pose {
            t,
            q: q.map(|v| v / n),
        })
    }

    pub fn identity() -> Self {
        Pose {
            t: [0.0; 3],
            q: [1.0, 0.0, 0.0, 0.0],
        }
    }

    /// Rotation by `angle` radians about the vertical (y) axis.
    pub fn from_yaw(t: [f64; 3], angle: f64) -> Self {
        let h = angle / 2.0;
        Pose {
            t,
            q: [h.cos(), 0.0, h.sin(), 0.0],
        }
    }
}

/// Translation error in meters and rotation error in degrees.
pub fn pose_error(estimate: &Pose, truth: &Pose) -> Result<(f64, f64)> {
    for q in [&estimate.q, &truth.q] {
        let n = quat_norm(q);
        if (n - 1.0).abs() > QUAT_TOLERANCE {
            return Err(Error::invalid(format!("quaternion norm {n} is not 1")));
        }
    }
    let meters = estimate
        .t
        .iter()
        .zip(&truth.t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let dot: f64 = estimate.q.iter().zip(&truth.q).map(|(a, b)| a * b).sum();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    // 2 acos|dot| in half-angle form, which stays exact near identity.
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in estimate.q.iter().zip(&truth.q) {
        diff += (a - sign * b).powi(2);
        sum += (a + sign * b).powi(2);
    }
    let degrees = (4.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees();
    Ok((meters, degrees))
}

/// Joint translation / rotation bounds, loosest first by convention.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSpec {
    bounds: Vec<(f64, f64)>,
}

impl ThresholdSpec {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() || bounds.iter().any(|&(m, d)| !(m > 0.0 && d > 0.0)) {
            return Err(Error::invalid("thresholds must be a non-empty list of positive bounds"));
        }
        Ok(ThresholdSpec { bounds })
    }

    /// 5 m / 10°, 0.5 m / 5° and 0.25 m / 2°.
    pub fn standard() -> Self {
        ThresholdSpec {
            bounds: vec![(5.0, 10.0), (0.5, 5.0), (0.25, 2.0)],
        }
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Percentage of errors inside each bound, bounds inclusive.
pub fn threshold_accuracy(errors: &[(f64, f64)], spec: &ThresholdSpec) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::invalid("no pose errors to evaluate"));
    }
    Ok(spec
        .bounds
        .iter()
        .map(|&(tm, td)| {
            let hits = errors.iter().filter(|&&(m, d)| m <= tm && d <= td).count();
            100.0 * hits as f64 / errors.len() as f64
        })
        .collect())
}

pub type PoseTable = BTreeMap<String, Pose>;

pub fn parse_pose_csv(text: &str) -> Result<PoseTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["image_id", "tx", "ty", "tz", "qw", "qx", "qy", "qz"] {
        return Err(Error::data(format!("unexpected pose table header {header:?}")));
    }
    let mut table = PoseTable::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| Error::data(format!("pose table line {}: {what}", n + 1));
        if fields.len() != 8 {
            return Err(bad("expected 8 fields"));
        }
        let mut v = [0.0; 7];
        for (dst, f) in v.iter_mut().zip(&fields[1..]) {
            *dst = f.parse().map_err(|_| bad(&format!("bad number {f:?}")))?;
        }
        let pose = Pose::new([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
            .map_err(|e| bad(&e.to_string()))?;
        if table.insert(fields[0].to_string(), pose).is_some() {
            return Err(bad(&format!("duplicate image id {}", fields[0])));
        }
    }
    Ok(table)
}

pub fn read_pose_csv(path: &Path) -> Result<PoseTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_csv(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn format_pose_csv(table: &PoseTable) -> String {
    let mut s = String::from("image_id,tx,ty,tz,qw,qx,qy,qz\n");
    for (id, p) in table {
        let _ = writeln!(
            s,
            "{id},{},{},{},{},{},{},{}",
            p.t[0], p.t[1], p.t[2], p.q[0], p.q[1], p.q[2], p.q[3]
        );
    }
    s
}

pub fn write_pose_csv(path: &Path, table: &PoseTable) -> Result<()> {
    std::fs::write(path, format_pose_csv(table)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryError {
    pub query_id: String,
    pub reference_id: String,
    pub meters: f64,
    pub degrees: f64,
}

/// Threshold accuracies plus the per-query errors they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub thresholds: ThresholdSpec,
    pub accuracies: Vec<f64>,
    pub errors: Vec<QueryError>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let labels: Vec<String> = self
            .thresholds
            .bounds
            .iter()
            .map(|&(m, d)| format!("{m}m/{d}deg"))
            .collect();
        let mut s = format!("queries: {}\n", self.errors.len());
        let _ = write!(s, "{:<14}", "threshold");
        for l in &labels {
            let _ = write!(s, "{l:>12}");
        }
        let _ = write!(s, "\n{:<14}", "accuracy (%)");
        for a in &self.accuracies {
            let _ = write!(s, "{a:>12.1}");
        }
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("max_meters,max_degrees,accuracy_percent\n");
        for (&(m, d), a) in self.thresholds.bounds.iter().zip(&self.accuracies) {
            let _ = writeln!(s, "{m},{d},{a:.4}");
        }
        s
    }

    pub fn errors_csv(&self) -> String {
        let mut s = String::from("query_id,reference_id,meters,degrees\n");
        for e in &self.errors {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", e.query_id, e.reference_id, e.meters, e.degrees);
        }
        s
    }
}

/// Score matches by treating each retrieved reference's pose as the estimate.
pub fn evaluate_retrieval(
    matches: &[Match],
    query_truth: &PoseTable,
    reference_poses: &PoseTable,
    spec: &ThresholdSpec,
) -> Result<Report> {
    let mut errors = Vec::with_capacity(matches.len());
    for m in matches {
        let truth = query_truth
            .get(&m.query_id)
            .ok_or_else(|| Error::data(format!("no ground-truth pose for query {}", m.query_id)))?;
        let estimate = reference_poses.get(&m.reference_id).ok_or_else(|| {
            Error::data(format!("no pose for reference image {}", m.reference_id))
        })?;
        let (meters, degrees) = pose_error(estimate, truth)?;
        errors.push(QueryError {
            query_id: m.query_id.clone(),
            reference_id: m.reference_id.clone(),
            meters,
            degrees,
        });
    }
    let pairs: Vec<(f64, f64)> = errors.iter().map(|e| (e.meters, e.degrees)).collect();
    let accuracies = threshold_accuracy(&pairs, spec)?;
    Ok(Report {
        thresholds: spec.clone(),
        accuracies,
        errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn yaw_z(deg: f64) -> [f64; 4] {
        let h = deg.to_radians() / 2.0;
        [h.cos(), 0.0, 0.0, h.sin()]
    }

    #[test]
    fn pose_error_examples() {
        let o = Pose::identity();
        assert_eq!(pose_error(&o, &o).unwrap(), (0.0, 0.0));
        let p = Pose::new([3.0, 4.0, 0.0], o.q).unwrap();
        assert_eq!(pose_error(&p, &o).unwrap(), (5.0, 0.0));
        let r = Pose::new([0.0; 3], yaw_z(90.0)).unwrap();
        let (_, d) = pose_error(&r, &o).unwrap();
        assert!((d - 90.0).abs() < 1e-9);
        let neg = Pose {
            t: r.t,
            q: r.q.map(|v| -v),
        };
        assert_eq!(pose_error(&r, &neg).unwrap().1, 0.0);
    }

    #[test]
    fn rejects_non_unit_quaternions() {
        assert!(Pose::new([0.0; 3], [1.1, 0.0, 0.0, 0.0]).is_err());
        let bad = Pose {
            t: [0.0; 3],
            q: [0.5, 0.0, 0.0, 0.0],
        };
        assert!(pose_error(&bad, &Pose::identity()).is_err());
    }

    #[test]
    fn threshold_example() {
        let errs = [(0.1, 1.0), (0.4, 4.0), (4.0, 9.0), (20.0, 20.0)];
        let acc = threshold_accuracy(&errs, &ThresholdSpec::standard()).unwrap();
        assert_eq!(acc, vec![75.0, 50.0, 25.0]);
        assert_eq!(
            threshold_accuracy(&[(0.0, 0.0)], &ThresholdSpec::standard()).unwrap(),
            vec![100.0; 3]
        );
        assert!(threshold_accuracy(&[], &ThresholdSpec::standard()).is_err());
        assert!(ThresholdSpec::new(vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn evaluate_single_offset_query() {
        let mut truth = PoseTable::new();
        truth.insert("q".into(), Pose::identity());
        let mut refs = PoseTable::new();
        refs.insert("r".into(), Pose::new([3.0, 0.0, 0.0], yaw_z(1.0)).unwrap());
        let m = Match {
            query_id: "q".into(),
            reference_id: "r".into(),
            distance: 0.1,
            used_flip: false,
        };
        let rep = evaluate_retrieval(&[m.clone()], &truth, &refs, &ThresholdSpec::standard()).unwrap();
        assert_eq!(rep.accuracies, vec![100.0, 0.0, 0.0]);
        assert!(rep.to_text().contains("100.0"));
        let missing = Match {
            query_id: "nope".into(),
            ..m
        };
        assert!(matches!(
            evaluate_retrieval(&[missing], &truth, &refs, &ThresholdSpec::standard()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn pose_csv_round_trip() {
        let mut t = PoseTable::new();
        t.insert("a".into(), Pose::from_yaw([1.0, 0.0, -2.5], 0.3));
        t.insert("b".into(), Pose::identity());
        let back = parse_pose_csv(&format_pose_csv(&t)).unwrap();
        assert_eq!(back.len(), 2);
        for (id, p) in &t {
            let (m, d) = pose_error(&back[id], p).unwrap();
            assert!(m < 1e-12 && d < 1e-6);
        }
        assert!(parse_pose_csv("id,x\n").is_err());
        assert!(parse_pose_csv("image_id,tx,ty,tz,qw,qx,qy,qz\na,0,0,0,2,0,0,0\n").is_err());
    }
}
