//! Evaluation metrics over predicted joint positions: average position error
//! in centimeters, correct-keypoint fractions at a threshold ladder, and the
//! per-group report table. Also the attention-trace record that evaluation
//! writes alongside the table.

use crate::error::{Error, Result};
use crate::pose::{rotations_to_positions, PoseVector, PositionFrame};
use crate::skeleton::{SkeletonTopology, AVG_LABEL, GROUP_ORDER};
use crate::tensor::Tensor;

/// Threshold ladder for the correct-keypoint curves, centimeters.
pub const PCK_SIGMAS: [f64; 7] = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0];

fn check_frames(pred: &[PositionFrame], truth: &[PositionFrame], joints: &[usize]) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "prediction has {} frames, ground truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("cannot evaluate zero frames".into()));
    }
    if joints.is_empty() {
        return Err(Error::Data("cannot evaluate an empty joint selection".into()));
    }
    let n = pred[0].len();
    for (t, (p, g)) in pred.iter().zip(truth).enumerate() {
        if p.len() != n || g.len() != n {
            return Err(Error::Data(format!("frame {t} has inconsistent joint count")));
        }
    }
    if let Some(&j) = joints.iter().find(|&&j| j >= n) {
        return Err(Error::Data(format!("joint index {j} out of range for {n} joints")));
    }
    Ok(n)
}

fn joint_error(p: &[f64; 3], g: &[f64; 3]) -> f64 {
    let dx = p[0] - g[0];
    let dy = p[1] - g[1];
    let dz = p[2] - g[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Mean Euclidean position error over every (frame, selected joint) pair.
pub fn ape(pred: &[PositionFrame], truth: &[PositionFrame], joints: &[usize]) -> Result<f64> {
    check_frames(pred, truth, joints)?;
    let mut sum = 0.0;
    for (p, g) in pred.iter().zip(truth) {
        for &j in joints {
            sum += joint_error(&p[j], &g[j]);
        }
    }
    Ok(sum / (pred.len() * joints.len()) as f64)
}

/// Fraction of (frame, selected joint) pairs with position error at most
/// `sigma` centimeters; an error of exactly `sigma` counts as correct.
pub fn pck(
    pred: &[PositionFrame],
    truth: &[PositionFrame],
    joints: &[usize],
    sigma: f64,
) -> Result<f64> {
    check_frames(pred, truth, joints)?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Data(format!("threshold must be finite and >= 0, got {sigma}")));
    }
    let mut hits = 0usize;
    for (p, g) in pred.iter().zip(truth) {
        for &j in joints {
            if joint_error(&p[j], &g[j]) <= sigma {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (pred.len() * joints.len()) as f64)
}

/// Per-group and overall evaluation summary for one pose stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean position error over all joints, centimeters.
    pub ape_avg: f64,
    /// Group label -> mean position error, in group order.
    pub ape_groups: Vec<(String, f64)>,
    /// Threshold -> fraction correct over all joints.
    pub pck: Vec<(f64, f64)>,
    pub frames: usize,
}

impl MetricsReport {
    /// Column labels for the per-group table: overall first, then groups.
    pub fn group_labels() -> Vec<&'static str> {
        let mut labels = vec![AVG_LABEL];
        labels.extend(GROUP_ORDER.iter().map(|g| g.label()));
        labels
    }

    /// Position-error row matching `group_labels` order.
    pub fn group_row(&self) -> Vec<f64> {
        let mut row = vec![self.ape_avg];
        row.extend(self.ape_groups.iter().map(|(_, v)| *v));
        row
    }

    /// Serialize as `key value` lines; parse with `MetricsReport::parse`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("frames {}\n", self.frames));
        s.push_str(&format!("ape_avg {:.17e}\n", self.ape_avg));
        for (label, v) in &self.ape_groups {
            s.push_str(&format!("ape_group {label} {v:.17e}\n"));
        }
        for (sigma, v) in &self.pck {
            s.push_str(&format!("pck {sigma} {v:.17e}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<MetricsReport> {
        let mut frames = None;
        let mut ape_avg = None;
        let mut ape_groups = Vec::new();
        let mut pck = Vec::new();
        let bad = |line: &str, why: &str| Error::Data(format!("bad report line {line:?}: {why}"));
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match (fields[0], fields.len()) {
                ("frames", 2) => {
                    frames = Some(fields[1].parse().map_err(|_| bad(line, "frame count"))?)
                }
                ("ape_avg", 2) => {
                    ape_avg = Some(fields[1].parse().map_err(|_| bad(line, "value"))?)
                }
                ("ape_group", 3) => ape_groups.push((
                    fields[1].to_string(),
                    fields[2].parse().map_err(|_| bad(line, "value"))?,
                )),
                ("pck", 3) => pck.push((
                    fields[1].parse().map_err(|_| bad(line, "threshold"))?,
                    fields[2].parse().map_err(|_| bad(line, "value"))?,
                )),
                _ => return Err(bad(line, "unknown key or field count")),
            }
        }
        Ok(MetricsReport {
            ape_avg: ape_avg.ok_or_else(|| Error::Data("report missing ape_avg".into()))?,
            ape_groups,
            pck,
            frames: frames.ok_or_else(|| Error::Data("report missing frames".into()))?,
        })
    }
}

/// Forward-kinematics every frame of a [4J, T] quaternion stream.
pub fn positions_over_time(
    pose: &Tensor,
    topo: &SkeletonTopology,
) -> Result<Vec<PositionFrame>> {
    if pose.rows() != topo.pose_dim() {
        return Err(Error::Data(format!(
            "pose stream has {} rows, topology wants {}",
            pose.rows(),
            topo.pose_dim()
        )));
    }
    (0..pose.cols())
        .map(|t| rotations_to_positions(&PoseVector::from_flat(&pose.col(t))?, topo))
        .collect()
}

/// Full evaluation of a predicted quaternion stream against ground truth,
/// with the correctness ladder taken at the ladder of `sigmas`.
pub fn evaluate_poses_at(
    pred: &Tensor,
    truth: &Tensor,
    topo: &SkeletonTopology,
    sigmas: &[f64],
) -> Result<MetricsReport> {
    if pred.shape() != truth.shape() {
        return Err(Error::Data(format!(
            "prediction shape {:?} does not match ground truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let pred_pos = positions_over_time(pred, topo)?;
    let truth_pos = positions_over_time(truth, topo)?;
    let all: Vec<usize> = (0..topo.joint_count()).collect();
    let ape_avg = ape(&pred_pos, &truth_pos, &all)?;
    let mut ape_groups = Vec::new();
    for (group, members) in topo.group_members() {
        ape_groups.push((group.label().to_string(), ape(&pred_pos, &truth_pos, &members)?));
    }
    let pck = sigmas
        .iter()
        .map(|&s| Ok((s, pck(&pred_pos, &truth_pos, &all, s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { ape_avg, ape_groups, pck, frames: pred.cols() })
}

/// [`evaluate_poses_at`] over the standard sigma ladder.
pub fn evaluate_poses(
    pred: &Tensor,
    truth: &Tensor,
    topo: &SkeletonTopology,
) -> Result<MetricsReport> {
    evaluate_poses_at(pred, truth, topo, &PCK_SIGMAS)
}

/// Per-frame attention-gate record captured during a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    pub delta: Vec<f64>,
    pub mean: f64,
}

/// The gate values of every rollout frame, writable as delimited text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub rows: Vec<TraceRow>,
}

impl AttentionTrace {
    pub fn push(&mut self, frame: usize, delta: Vec<f64>) {
        let mean = if delta.is_empty() {
            0.0
        } else {
            delta.iter().sum::<f64>() / delta.len() as f64
        };
        self.rows.push(TraceRow { frame, delta, mean });
    }

    /// Mean gate value over all frames and dimensions.
    pub fn overall_mean(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.mean).sum::<f64>() / self.rows.len() as f64
    }

    /// `frame mean d0 d1 ...` per line, one line per frame.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# frame mean gate-per-dimension\n");
        for row in &self.rows {
            s.push_str(&format!("{} {:.17e}", row.frame, row.mean));
            for d in &row.delta {
                s.push_str(&format!(" {d:.17e}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<AttentionTrace> {
        let mut trace = AttentionTrace::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let bad = || Error::Data(format!("bad trace line {line:?}"));
            let frame: usize = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let mean: f64 = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let delta = fields
                .map(|f| f.parse().map_err(|_| bad()))
                .collect::<Result<Vec<f64>>>()?;
            trace.rows.push(TraceRow { frame, delta, mean });
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::random_pose;
    use crate::rng;

    fn frame(points: &[[f64; 3]]) -> PositionFrame {
        points.to_vec()
    }

    #[test]
    fn ape_of_a_three_four_zero_offset_is_five() {
        let truth = vec![frame(&[[0.0, 0.0, 0.0]])];
        let pred = vec![frame(&[[3.0, 4.0, 0.0]])];
        assert_eq!(ape(&pred, &truth, &[0]).unwrap(), 5.0);
    }

    #[test]
    fn ape_averages_across_frames_and_joints() {
        // errors 2 and 4 average to 3
        let truth = vec![frame(&[[0.0; 3], [0.0; 3]])];
        let pred = vec![frame(&[[2.0, 0.0, 0.0], [0.0, 4.0, 0.0]])];
        assert_eq!(ape(&pred, &truth, &[0, 1]).unwrap(), 3.0);
    }

    #[test]
    fn empty_joint_selection_is_rejected() {
        let truth = vec![frame(&[[0.0; 3]])];
        assert!(ape(&truth, &truth, &[]).is_err());
        assert!(pck(&truth, &truth, &[], 1.0).is_err());
    }

    #[test]
    fn pck_boundary_error_counts_as_correct() {
        let truth = vec![frame(&[[0.0; 3], [0.0; 3]])];
        let pred = vec![frame(&[[3.0, 0.0, 0.0], [3.0 + 1e-9, 0.0, 0.0]])];
        assert_eq!(pck(&pred, &truth, &[0], 3.0).unwrap(), 1.0);
        assert_eq!(pck(&pred, &truth, &[1], 3.0).unwrap(), 0.0);
        assert_eq!(pck(&pred, &truth, &[0, 1], 3.0).unwrap(), 0.5);
    }

    #[test]
    fn pck_is_monotone_in_the_threshold() {
        let topo = SkeletonTopology::default_upper_body();
        let mut prev = -1.0;
        let truth = Tensor::from_vec(
            &[topo.pose_dim(), 4],
            (0..4).flat_map(|t| random_pose(t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let pred = Tensor::from_vec(
            &[topo.pose_dim(), 4],
            (0..4).flat_map(|t| random_pose(100 + t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let report = evaluate_poses(&pred, &truth, &topo).unwrap();
        for &(_, v) in &report.pck {
            assert!(v >= prev, "pck must not decrease with threshold");
            prev = v;
        }
    }

    #[test]
    fn group_weighted_average_recovers_the_overall_mean() {
        let topo = SkeletonTopology::default_upper_body();
        let truth = Tensor::from_vec(
            &[topo.pose_dim(), 6],
            (0..6).flat_map(|t| random_pose(t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let pred = Tensor::from_vec(
            &[topo.pose_dim(), 6],
            (0..6).flat_map(|t| random_pose(50 + t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let report = evaluate_poses(&pred, &truth, &topo).unwrap();
        let mut weighted = 0.0;
        let mut total = 0usize;
        for ((_, v), (_, members)) in report.ape_groups.iter().zip(topo.group_members()) {
            weighted += v * members.len() as f64;
            total += members.len();
        }
        assert!((weighted / total as f64 - report.ape_avg).abs() < 1e-9);
    }

    #[test]
    fn report_text_roundtrip() {
        let topo = SkeletonTopology::default_upper_body();
        let truth = Tensor::from_vec(
            &[topo.pose_dim(), 3],
            (0..3).flat_map(|t| random_pose(t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let pred = Tensor::from_vec(
            &[topo.pose_dim(), 3],
            (0..3).flat_map(|t| random_pose(9 + t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let report = evaluate_poses(&pred, &truth, &topo).unwrap();
        let parsed = MetricsReport::parse(&report.to_text()).unwrap();
        assert!((parsed.ape_avg - report.ape_avg).abs() < 1e-12);
        assert_eq!(parsed.frames, report.frames);
        assert_eq!(parsed.ape_groups.len(), report.ape_groups.len());
        assert_eq!(parsed.pck.len(), report.pck.len());
        for ((_, a), (_, b)) in parsed.pck.iter().zip(&report.pck) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn group_row_matches_labels_in_length_and_order() {
        let labels = MetricsReport::group_labels();
        assert_eq!(labels[0], "Avg.");
        assert_eq!(labels.len(), 8);
        let report = MetricsReport {
            ape_avg: 1.0,
            ape_groups: GROUP_ORDER.iter().map(|g| (g.label().to_string(), 2.0)).collect(),
            pck: vec![],
            frames: 1,
        };
        assert_eq!(report.group_row().len(), labels.len());
    }

    #[test]
    fn identical_streams_have_zero_error_and_full_pck() {
        let topo = SkeletonTopology::default_upper_body();
        let stream = Tensor::from_vec(
            &[topo.pose_dim(), 5],
            (0..5).flat_map(|t| random_pose(t, topo.joint_count()).to_flat()).collect(),
        )
        .unwrap();
        let report = evaluate_poses(&stream, &stream, &topo).unwrap();
        assert_eq!(report.ape_avg, 0.0);
        for (_, v) in &report.pck {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn trace_text_roundtrip_and_means() {
        let mut trace = AttentionTrace::default();
        let mut rng = rng::chacha(8);
        for f in 0..5 {
            trace.push(f, (0..4).map(|_| rng::uniform(&mut rng)).collect());
        }
        assert!(trace.overall_mean() > 0.0 && trace.overall_mean() < 1.0);
        let parsed = AttentionTrace::parse(&trace.to_text()).unwrap();
        assert_eq!(parsed.rows.len(), 5);
        for (a, b) in parsed.rows.iter().zip(&trace.rows) {
            assert_eq!(a.frame, b.frame);
            assert!((a.mean - b.mean).abs() < 1e-12);
            for (x, y) in a.delta.iter().zip(&b.delta) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
