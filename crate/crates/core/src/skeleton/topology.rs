use ndarray::Array2;

use crate::error::{Error, Result};

/// A named subset of joints; part groups are the unit of spatial mixing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartGroup {
    pub name: String,
    pub joints: Vec<usize>,
}

/// Skeleton graph: a tree of bones rooted at a center joint, plus a
/// partition of the joints into semantic body parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkeletonTopology {
    name: String,
    joint_count: usize,
    center: usize,
    /// (parent, child) pairs.
    edges: Vec<(usize, usize)>,
    parts: Vec<PartGroup>,
    parent: Vec<Option<usize>>,
}

impl SkeletonTopology {
    pub fn new(
        name: impl Into<String>,
        joint_count: usize,
        center: usize,
        edges: Vec<(usize, usize)>,
        parts: Vec<PartGroup>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("topology: {msg}")));
        if joint_count == 0 || center >= joint_count {
            return bad(format!("center {center} out of range for {joint_count} joints"));
        }
        if edges.len() + 1 != joint_count {
            return bad(format!("a tree on {joint_count} joints has {} edges, got {}", joint_count - 1, edges.len()));
        }
        let mut parent = vec![None; joint_count];
        for &(p, c) in &edges {
            if p >= joint_count || c >= joint_count {
                return bad(format!("edge ({p}, {c}) out of range"));
            }
            if c == center {
                return bad("center joint cannot have a parent".into());
            }
            if parent[c].replace(p).is_some() {
                return bad(format!("joint {c} has two parents"));
            }
        }
        // every joint must reach the center by following parents
        for start in 0..joint_count {
            let mut j = start;
            let mut steps = 0;
            while j != center {
                match parent[j] {
                    Some(p) if steps < joint_count => {
                        j = p;
                        steps += 1;
                    }
                    _ => return bad(format!("joint {start} is not connected to the center")),
                }
            }
        }
        let mut owner = vec![None; joint_count];
        for (gi, group) in parts.iter().enumerate() {
            if group.joints.is_empty() {
                return bad(format!("part group `{}` is empty", group.name));
            }
            for &j in &group.joints {
                if j >= joint_count {
                    return bad(format!("part group `{}` names joint {j}", group.name));
                }
                if owner[j].replace(gi).is_some() {
                    return bad(format!("joint {j} belongs to two part groups"));
                }
            }
        }
        if let Some(j) = owner.iter().position(Option::is_none) {
            return bad(format!("joint {j} is in no part group"));
        }
        Ok(Self { name: name.into(), joint_count, center, edges, parts, parent })
    }

    /// Nine-joint body used for desk-scale experiments.
    ///
    /// 0 pelvis (center), 1 chest, 2 head, 3/4 left elbow/hand,
    /// 5/6 right elbow/hand, 7 left foot, 8 right foot.
    pub fn desk9() -> Self {
        let edges = vec![(0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (0, 8)];
        let parts = vec![
            group("torso", &[0, 1, 2]),
            group("left_arm", &[3, 4]),
            group("right_arm", &[5, 6]),
            group("left_leg", &[7]),
            group("right_leg", &[8]),
        ];
        Self::new("desk9", 9, 0, edges, parts).expect("desk9 preset is valid")
    }

    /// The 25-joint Kinect v2 layout, rooted at the spine-shoulder joint.
    pub fn ntu25() -> Self {
        // one-based (child, parent) pairs in the usual inward listing
        let inward = [
            (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21),
            (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15), (17, 1),
            (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
        ];
        let edges = inward.iter().map(|&(c, p)| (p - 1, c - 1)).collect();
        let parts = vec![
            group("torso", &[0, 1, 2, 3, 20]),
            group("left_arm", &[4, 5, 6, 7, 21, 22]),
            group("right_arm", &[8, 9, 10, 11, 23, 24]),
            group("left_leg", &[12, 13, 14, 15]),
            group("right_leg", &[16, 17, 18, 19]),
        ];
        Self::new("ntu25", 25, 20, edges, parts).expect("ntu25 preset is valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk9" => Ok(Self::desk9()),
            "ntu25" => Ok(Self::ntu25()),
            other => Err(Error::InvalidConfig(format!("unknown topology preset `{other}`"))),
        }
    }

    /// Preset with the given joint count, if one exists.
    pub fn preset_for_joints(v: usize) -> Option<Self> {
        match v {
            9 => Some(Self::desk9()),
            25 => Some(Self::ntu25()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parts(&self) -> &[PartGroup] {
        &self.parts
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    /// Symmetric bone adjacency with self-loops, row-normalised: `D^-1 (A + I)`.
    pub fn normalized_adjacency(&self) -> Array2<f64> {
        let v = self.joint_count;
        let mut a = Array2::<f64>::eye(v);
        for &(p, c) in &self.edges {
            a[[p, c]] = 1.0;
            a[[c, p]] = 1.0;
        }
        for mut row in a.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        a
    }
}

fn group(name: &str, joints: &[usize]) -> PartGroup {
    PartGroup { name: name.to_string(), joints: joints.to_vec() }
}
