//! Upper-body skeleton topology: joint tree, rest offsets in centimeters,
//! and the reporting groups used by the evaluation tables.
//!
//! Text format, one joint per line, parents listed before children:
//!
//! ```text
//! name parent_index offset_x offset_y offset_z group
//! ```
//!
//! `parent_index` is -1 for the single root. Blank lines and lines starting
//! with `#` are ignored.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointGroup {
    Torso,
    Head,
    Neck,
    RArm,
    LArm,
    RWrist,
    LWrist,
}

/// Group order used by every printed table and report.
pub const GROUP_ORDER: [JointGroup; 7] = [
    JointGroup::Torso,
    JointGroup::Head,
    JointGroup::Neck,
    JointGroup::RArm,
    JointGroup::LArm,
    JointGroup::RWrist,
    JointGroup::LWrist,
];

/// Column label for the all-joints average in printed tables.
pub const AVG_LABEL: &str = "Avg.";

impl JointGroup {
    pub fn label(&self) -> &'static str {
        match self {
            JointGroup::Torso => "Torso",
            JointGroup::Head => "Head",
            JointGroup::Neck => "Neck",
            JointGroup::RArm => "RArm",
            JointGroup::LArm => "LArm",
            JointGroup::RWrist => "RWrist",
            JointGroup::LWrist => "LWrist",
        }
    }

    pub fn parse(s: &str) -> Option<JointGroup> {
        GROUP_ORDER.iter().copied().find(|g| g.label() == s)
    }

    pub fn code(&self) -> u8 {
        GROUP_ORDER.iter().position(|g| g == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<JointGroup> {
        GROUP_ORDER.get(code as usize).copied()
    }
}

impl fmt::Display for JointGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// None for the root.
    pub parent: Option<usize>,
    /// Rest-pose offset from the parent, centimeters.
    pub offset: [f64; 3],
    pub group: JointGroup,
}

impl Joint {
    pub fn bone_length(&self) -> f64 {
        let [x, y, z] = self.offset;
        (x * x + y * y + z * z).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    joints: Vec<Joint>,
}

/// Default 12-joint upper body. Y is up, X is the avatar's left, offsets in cm.
const DEFAULT_TOPOLOGY: &str = "\
Torso    -1    0  0  0   Torso
Chest     0    0 25  0   Torso
Neck      1    0 15  0   Neck
Head      2    0 12  0   Head
RClav     1   -6 10  0   RArm
RShoulder 4  -10  0  0   RArm
RElbow    5  -28  0  0   RArm
RWrist    6  -25  0  0   RWrist
LClav     1    6 10  0   LArm
LShoulder 8   10  0  0   LArm
LElbow    9   28  0  0   LArm
LWrist   10   25  0  0   LWrist
";

impl SkeletonTopology {
    /// The built-in 12-joint upper-body skeleton.
    pub fn default_upper_body() -> SkeletonTopology {
        SkeletonTopology::parse(DEFAULT_TOPOLOGY).expect("built-in topology is valid")
    }

    pub fn default_text() -> &'static str {
        DEFAULT_TOPOLOGY
    }

    pub fn parse(text: &str) -> Result<SkeletonTopology> {
        let mut joints = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::Format {
                    offset: line_no as u64 + 1,
                    detail: format!("expected 6 fields, got {}", fields.len()),
                });
            }
            let bad = |what: &str| Error::Format {
                offset: line_no as u64 + 1,
                detail: format!("unparseable {what}: {line}"),
            };
            let parent_raw: i64 = fields[1].parse().map_err(|_| bad("parent index"))?;
            let idx = joints.len();
            let parent = if parent_raw < 0 {
                None
            } else {
                let p = parent_raw as usize;
                if p >= idx {
                    return Err(Error::Format {
                        offset: line_no as u64 + 1,
                        detail: format!("parent {p} does not precede joint {idx}"),
                    });
                }
                Some(p)
            };
            let mut offset = [0.0f64; 3];
            for (k, f) in fields[2..5].iter().enumerate() {
                offset[k] = f.parse().map_err(|_| bad("offset"))?;
                if !offset[k].is_finite() {
                    return Err(bad("offset (non-finite)"));
                }
            }
            let group = JointGroup::parse(fields[5]).ok_or_else(|| bad("group"))?;
            joints.push(Joint { name: fields[0].to_string(), parent, offset, group });
        }
        let topo = SkeletonTopology { joints };
        topo.validate()?;
        Ok(topo)
    }

    pub fn load(path: &std::path::Path) -> Result<SkeletonTopology> {
        let text = std::fs::read_to_string(path)?;
        SkeletonTopology::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::Data("topology has no joints".into()));
        }
        let roots = self.joints.iter().filter(|j| j.parent.is_none()).count();
        if roots != 1 {
            return Err(Error::Data(format!("topology needs exactly one root, found {roots}")));
        }
        if self.joints[0].parent.is_some() {
            return Err(Error::Data("root joint must come first".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if j.parent.is_some() && j.bone_length() <= 0.0 {
                return Err(Error::Data(format!("joint {} ({}) has zero-length bone", i, j.name)));
            }
            if self.joints.iter().enumerate().any(|(k, o)| k != i && o.name == j.name) {
                return Err(Error::Data(format!("duplicate joint name {}", j.name)));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for j in &self.joints {
            let parent = j.parent.map(|p| p as i64).unwrap_or(-1);
            s.push_str(&format!(
                "{} {} {} {} {} {}\n",
                j.name, parent, j.offset[0], j.offset[1], j.offset[2], j.group
            ));
        }
        s
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Pose dimension: four quaternion components per joint.
    pub fn pose_dim(&self) -> usize {
        self.joints.len() * 4
    }

    pub fn group_of(&self, joint: usize) -> JointGroup {
        self.joints[joint].group
    }

    /// Joint indices per group, in GROUP_ORDER.
    pub fn group_members(&self) -> Vec<(JointGroup, Vec<usize>)> {
        GROUP_ORDER
            .iter()
            .map(|&g| {
                let members = self
                    .joints
                    .iter()
                    .enumerate()
                    .filter(|(_, j)| j.group == g)
                    .map(|(i, _)| i)
                    .collect();
                (g, members)
            })
            .collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_topology_is_twelve_joints_seven_groups() {
        let topo = SkeletonTopology::default_upper_body();
        assert_eq!(topo.joint_count(), 12);
        assert_eq!(topo.pose_dim(), 48);
        let groups = topo.group_members();
        assert_eq!(groups.len(), 7);
        let sizes: Vec<usize> = groups.iter().map(|(_, m)| m.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 12);
        // every group non-empty
        assert!(sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn text_roundtrip_preserves_structure() {
        let topo = SkeletonTopology::default_upper_body();
        let again = SkeletonTopology::parse(&topo.to_text()).unwrap();
        assert_eq!(again.joint_count(), topo.joint_count());
        for (a, b) in topo.joints().iter().zip(again.joints()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.parent, b.parent);
            assert_eq!(a.offset, b.offset);
            assert_eq!(a.group, b.group);
        }
    }

    #[test]
    fn parse_rejects_forward_parent_reference() {
        let text = "A -1 0 0 0 Torso\nB 2 0 1 0 Head\nC 1 0 1 0 Neck\n";
        let err = SkeletonTopology::parse(text).unwrap_err();
        assert!(err.to_string().contains("precede"), "{err}");
    }

    #[test]
    fn parse_rejects_bad_group_with_line_number() {
        let text = "A -1 0 0 0 Torso\nB 0 0 1 0 Elbowish\n";
        let err = SkeletonTopology::parse(text).unwrap_err();
        assert!(err.to_string().contains("offset 2"), "{err}");
    }

    #[test]
    fn parse_rejects_zero_length_bone() {
        let text = "A -1 0 0 0 Torso\nB 0 0 0 0 Head\n";
        assert!(SkeletonTopology::parse(text).is_err());
    }

    #[test]
    fn parse_rejects_two_roots() {
        let text = "A -1 0 0 0 Torso\nB -1 0 1 0 Head\n";
        assert!(SkeletonTopology::parse(text).is_err());
    }

    #[test]
    fn group_codes_roundtrip() {
        for g in GROUP_ORDER {
            assert_eq!(JointGroup::from_code(g.code()), Some(g));
        }
        assert_eq!(JointGroup::from_code(7), None);
    }
}
