//! Quaternion pose representation and forward/inverse kinematics.
//!
//! A pose is one unit quaternion (w, x, y, z) per joint, flattened to a
//! 4*J vector. Each joint's quaternion rotates its own rest bone inside the
//! parent's accumulated frame:
//!
//!   A_root  = q_root
//!   A_j     = A_parent * q_j
//!   pos_root = origin
//!   pos_j    = pos_parent + rotate(A_j, offset_j)
//!
//! Recovering rotations from positions uses the shortest-arc rotation per
//! bone, which leaves twist about the bone axis at zero; position-space
//! roundtrips are exact regardless.

use crate::error::{Error, Result};
use crate::skeleton::SkeletonTopology;

pub type Quat = [f64; 4];

/// One position per joint, centimeters, same order as the topology.
pub type PositionFrame = Vec<[f64; 3]>;

pub const QUAT_UNIT_TOL: f64 = 1e-9;

pub fn q_identity() -> Quat {
    [1.0, 0.0, 0.0, 0.0]
}

pub fn q_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn q_dot(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn q_normalize(q: &Quat) -> Result<Quat> {
    let n = q_norm(q);
    if n < 1e-12 {
        return Err(Error::Degenerate("cannot normalize a zero quaternion".into()));
    }
    // already unit within tolerance: keep the exact bits, so normalizing is
    // idempotent and feeding a unit pose through a rollout cannot drift
    if (n - 1.0).abs() < 1e-12 {
        return Ok(*q);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

pub fn q_mul(a: &Quat, b: &Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn q_conj(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Rotate a vector by a unit quaternion (v' = v + 2w(u x v) + 2u x (u x v)).
pub fn q_rotate(q: &Quat, v: &[f64; 3]) -> [f64; 3] {
    let u = [q[1], q[2], q[3]];
    let t = [
        2.0 * (u[1] * v[2] - u[2] * v[1]),
        2.0 * (u[2] * v[0] - u[0] * v[2]),
        2.0 * (u[0] * v[1] - u[1] * v[0]),
    ];
    [
        v[0] + q[0] * t[0] + (u[1] * t[2] - u[2] * t[1]),
        v[1] + q[0] * t[1] + (u[2] * t[0] - u[0] * t[2]),
        v[2] + q[0] * t[2] + (u[0] * t[1] - u[1] * t[0]),
    ]
}

/// Quaternion for a rotation of `angle` radians about a unit axis.
pub fn axis_angle(axis: &[f64; 3], angle: f64) -> Quat {
    let h = 0.5 * angle;
    let s = h.sin();
    [h.cos(), axis[0] * s, axis[1] * s, axis[2] * s]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn v_dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn v_norm(a: &[f64; 3]) -> f64 {
    v_dot(a, a).sqrt()
}

/// Minimal (shortest-arc) rotation taking unit vector `a` to unit vector `b`.
/// Twist about the axis is zero by construction. Antiparallel inputs get a
/// deterministic 180-degree rotation about an axis orthogonal to `a`.
pub fn shortest_arc(a: &[f64; 3], b: &[f64; 3]) -> Quat {
    let w = 1.0 + v_dot(a, b);
    if w < 1e-12 {
        // 180 degrees: any orthogonal axis works, pick deterministically
        let trial = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let mut axis = cross(a, &trial);
        let n = v_norm(&axis);
        axis = [axis[0] / n, axis[1] / n, axis[2] / n];
        return [0.0, axis[0], axis[1], axis[2]];
    }
    let c = cross(a, b);
    q_normalize(&[w, c[0], c[1], c[2]]).expect("w >= 1e-12 gives nonzero norm")
}

/// One unit quaternion per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVector {
    pub q: Vec<Quat>,
}

impl PoseVector {
    pub fn identity(joints: usize) -> PoseVector {
        PoseVector { q: vec![q_identity(); joints] }
    }

    /// Flat layout: 4 components (w, x, y, z) per joint.
    pub fn from_flat(flat: &[f64]) -> Result<PoseVector> {
        if flat.len() % 4 != 0 {
            return Err(Error::Data(format!(
                "pose vector length {} is not a multiple of 4",
                flat.len()
            )));
        }
        let q = flat.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        Ok(PoseVector { q })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.q.len() * 4);
        for q in &self.q {
            v.extend_from_slice(q);
        }
        v
    }

    pub fn joints(&self) -> usize {
        self.q.len()
    }

    /// Largest deviation of any joint's quaternion norm from 1.
    pub fn max_unit_deviation(&self) -> f64 {
        self.q.iter().fold(0.0, |m, q| m.max((q_norm(q) - 1.0).abs()))
    }

    pub fn check_unit(&self) -> Result<()> {
        let dev = self.max_unit_deviation();
        if dev > QUAT_UNIT_TOL {
            return Err(Error::Data(format!(
                "pose quaternions deviate from unit norm by {dev:e} (tolerance {QUAT_UNIT_TOL:e})"
            )));
        }
        Ok(())
    }

    /// Renormalize each joint quaternion to unit length.
    pub fn renormalized(&self) -> Result<PoseVector> {
        let q = self.q.iter().map(q_normalize).collect::<Result<Vec<_>>>()?;
        Ok(PoseVector { q })
    }
}

/// Fix quaternion signs over a sequence: the first frame gets w >= 0 per
/// joint, and every later frame stays on the same hemisphere as its
/// predecessor (flip when the per-joint dot product is negative).
pub fn hemisphere_fix(frames: &mut [PoseVector]) {
    if frames.is_empty() {
        return;
    }
    let joints = frames[0].q.len();
    for j in 0..joints {
        if frames[0].q[j][0] < 0.0 {
            for c in frames[0].q[j].iter_mut() {
                *c = -*c;
            }
        }
    }
    for t in 1..frames.len() {
        debug_assert_eq!(frames[t].q.len(), joints);
        for j in 0..joints {
            let d = q_dot(&frames[t].q[j], &frames[t - 1].q[j]);
            if d < 0.0 {
                for c in frames[t].q[j].iter_mut() {
                    *c = -*c;
                }
            }
        }
    }
}

/// Forward kinematics: joint positions in centimeters, root at the origin.
pub fn rotations_to_positions(pose: &PoseVector, topo: &SkeletonTopology) -> Result<PositionFrame> {
    if pose.joints() != topo.joint_count() {
        return Err(Error::Data(format!(
            "pose has {} joints, topology has {}",
            pose.joints(),
            topo.joint_count()
        )));
    }
    let n = topo.joint_count();
    let mut acc: Vec<Quat> = Vec::with_capacity(n);
    let mut pos: PositionFrame = Vec::with_capacity(n);
    for (i, joint) in topo.joints().iter().enumerate() {
        match joint.parent {
            None => {
                acc.push(pose.q[i]);
                pos.push([0.0, 0.0, 0.0]);
            }
            Some(p) => {
                let a = q_mul(&acc[p], &pose.q[i]);
                let world = q_rotate(&a, &joint.offset);
                pos.push([
                    pos[p][0] + world[0],
                    pos[p][1] + world[1],
                    pos[p][2] + world[2],
                ]);
                acc.push(a);
            }
        }
    }
    Ok(pos)
}

/// Relative bone-length tolerance for inverse kinematics.
pub const RIGID_TOL: f64 = 1e-6;

/// Recover per-joint rotations from joint positions. The root rotation is
/// unobservable from positions and is returned as identity; twist about each
/// bone is zero. Requires a rigid frame: observed bone lengths must match the
/// topology within RIGID_TOL relative tolerance.
pub fn positions_to_rotations(
    positions: &PositionFrame,
    topo: &SkeletonTopology,
) -> Result<PoseVector> {
    if positions.len() != topo.joint_count() {
        return Err(Error::Data(format!(
            "frame has {} positions, topology has {} joints",
            positions.len(),
            topo.joint_count()
        )));
    }
    let n = topo.joint_count();
    let mut acc: Vec<Quat> = Vec::with_capacity(n);
    let mut out: Vec<Quat> = Vec::with_capacity(n);
    for (i, joint) in topo.joints().iter().enumerate() {
        match joint.parent {
            None => {
                acc.push(q_identity());
                out.push(q_identity());
            }
            Some(p) => {
                let bone = [
                    positions[i][0] - positions[p][0],
                    positions[i][1] - positions[p][1],
                    positions[i][2] - positions[p][2],
                ];
                let obs_len = v_norm(&bone);
                let rest_len = joint.bone_length();
                if obs_len < 1e-9 {
                    return Err(Error::Degenerate(format!(
                        "observed bone for joint {} has zero length",
                        joint.name
                    )));
                }
                if ((obs_len - rest_len) / rest_len).abs() > RIGID_TOL {
                    return Err(Error::Data(format!(
                        "non-rigid frame: joint {} bone length {} vs rest {} exceeds relative tolerance {RIGID_TOL:e}",
                        joint.name, obs_len, rest_len
                    )));
                }
                // direction observed in the parent's accumulated frame
                let inv = q_conj(&acc[p]);
                let local = q_rotate(&inv, &bone);
                let local_dir = [local[0] / obs_len, local[1] / obs_len, local[2] / obs_len];
                let rest_dir = [
                    joint.offset[0] / rest_len,
                    joint.offset[1] / rest_len,
                    joint.offset[2] / rest_len,
                ];
                let q = shortest_arc(&rest_dir, &local_dir);
                acc.push(q_mul(&acc[p], &q));
                out.push(q);
            }
        }
    }
    Ok(PoseVector { q: out })
}

/// Random rigid pose built from per-joint axis-angle rotations; unit
/// quaternions by construction. Used by tests and demos.
pub fn random_pose(seed: u64, joints: usize) -> PoseVector {
    let mut rng = crate::rng::chacha(seed);
    let q = (0..joints)
        .map(|_| {
            let axis = loop {
                let v = [
                    crate::rng::normal(&mut rng),
                    crate::rng::normal(&mut rng),
                    crate::rng::normal(&mut rng),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-3 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            };
            let angle = crate::rng::uniform_range(&mut rng, -1.4, 1.4);
            axis_angle(&axis, angle)
        })
        .collect();
    PoseVector { q }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo() -> SkeletonTopology {
        SkeletonTopology::default_upper_body()
    }

    #[test]
    fn shortest_arc_x_to_y_is_half_sqrt2_about_z() {
        let q = shortest_arc(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let s = (2.0f64).sqrt() / 2.0;
        assert!((q[0] - s).abs() < 1e-15);
        assert!((q[3] - s).abs() < 1e-15);
        assert!(q[1].abs() < 1e-15 && q[2].abs() < 1e-15);
    }

    #[test]
    fn shortest_arc_handles_antiparallel() {
        let q = shortest_arc(&[0.0, 1.0, 0.0], &[0.0, -1.0, 0.0]);
        assert!((q_norm(&q) - 1.0).abs() < 1e-12);
        let v = q_rotate(&q, &[0.0, 1.0, 0.0]);
        assert!((v[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_pose_reproduces_rest_offsets() {
        let topo = topo();
        let pose = PoseVector::identity(topo.joint_count());
        let pos = rotations_to_positions(&pose, &topo).unwrap();
        // Chest sits 25 cm above the torso
        let chest = topo.joint_index("Chest").unwrap();
        assert_eq!(pos[chest], [0.0, 25.0, 0.0]);
        // wrist x = clav + shoulder + elbow + wrist offsets
        let rwrist = topo.joint_index("RWrist").unwrap();
        assert_eq!(pos[rwrist], [-69.0, 35.0, 0.0]);
    }

    #[test]
    fn quarter_turn_about_z_moves_chest_to_minus_x() {
        // rotating the root 90 degrees about z sends +y offsets to -x
        let topo = topo();
        let mut pose = PoseVector::identity(topo.joint_count());
        pose.q[0] = axis_angle(&[0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let pos = rotations_to_positions(&pose, &topo).unwrap();
        let chest = topo.joint_index("Chest").unwrap();
        assert!((pos[chest][0] + 25.0).abs() < 1e-12);
        assert!(pos[chest][1].abs() < 1e-12);
    }

    #[test]
    fn half_turn_about_vertical_negates_descendant_x_and_z() {
        let topo = topo();
        let base = random_pose(5, topo.joint_count());
        let mut turned = base.clone();
        turned.q[0] = q_mul(&axis_angle(&[0.0, 1.0, 0.0], std::f64::consts::PI), &base.q[0]);
        let p0 = rotations_to_positions(&base, &topo).unwrap();
        let p1 = rotations_to_positions(&turned, &topo).unwrap();
        for j in 1..topo.joint_count() {
            assert!((p1[j][0] + p0[j][0]).abs() < 1e-9, "x at joint {j}");
            assert!((p1[j][1] - p0[j][1]).abs() < 1e-9, "y at joint {j}");
            assert!((p1[j][2] + p0[j][2]).abs() < 1e-9, "z at joint {j}");
        }
    }

    #[test]
    fn roundtrip_through_positions_is_exact_in_position_space() {
        let topo = topo();
        for seed in 0..20 {
            let pose = random_pose(seed, topo.joint_count());
            let pos = rotations_to_positions(&pose, &topo).unwrap();
            let rec = positions_to_rotations(&pos, &topo).unwrap();
            rec.check_unit().unwrap();
            let pos2 = rotations_to_positions(&rec, &topo).unwrap();
            for j in 0..topo.joint_count() {
                for c in 0..3 {
                    assert!(
                        (pos[j][c] - pos2[j][c]).abs() < 1e-6,
                        "seed {seed} joint {j} axis {c}: {} vs {}",
                        pos[j][c],
                        pos2[j][c]
                    );
                }
            }
        }
    }

    #[test]
    fn recovery_rejects_stretched_bones() {
        let topo = topo();
        let pose = PoseVector::identity(topo.joint_count());
        let mut pos = rotations_to_positions(&pose, &topo).unwrap();
        pos[1][1] += 0.1; // stretch the torso-chest bone by a millimeter
        let err = positions_to_rotations(&pos, &topo).unwrap_err();
        assert!(err.to_string().contains("non-rigid"), "{err}");
    }

    #[test]
    fn hemisphere_fix_flips_sign_jumps() {
        let mut frames = vec![
            PoseVector { q: vec![[1.0, 0.0, 0.0, 0.0]] },
            PoseVector { q: vec![[-0.999, 0.01, 0.0, 0.0]] },
        ];
        hemisphere_fix(&mut frames);
        assert!((frames[1].q[0][0] - 0.999).abs() < 1e-15);
        assert!((frames[1].q[0][1] + 0.01).abs() < 1e-15);
    }

    #[test]
    fn hemisphere_fix_makes_first_frame_w_nonnegative() {
        let mut frames = vec![PoseVector { q: vec![[-0.8, 0.6, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]] }];
        hemisphere_fix(&mut frames);
        assert!(frames[0].q[0][0] >= 0.0);
        assert_eq!(frames[0].q[1], [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn hemisphere_fix_does_not_change_fk_output() {
        let topo = topo();
        let mut frames: Vec<PoseVector> = (0..8)
            .map(|s| {
                let mut p = random_pose(100 + s, topo.joint_count());
                // deliberately put some joints on the negative hemisphere
                if s % 2 == 0 {
                    for q in p.q.iter_mut().step_by(3) {
                        for c in q.iter_mut() {
                            *c = -*c;
                        }
                    }
                }
                p
            })
            .collect();
        let before: Vec<PositionFrame> = frames
            .iter()
            .map(|f| rotations_to_positions(f, &topo).unwrap())
            .collect();
        hemisphere_fix(&mut frames);
        for (f, b) in frames.iter().zip(&before) {
            let after = rotations_to_positions(f, &topo).unwrap();
            for (pa, pb) in after.iter().zip(b) {
                for c in 0..3 {
                    assert!((pa[c] - pb[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_quaternion_cannot_normalize() {
        assert!(q_normalize(&[0.0, 0.0, 0.0, 0.0]).is_err());
    }
}
