//! Camera model, crop transform, and conversions between camera-frame 3D
//! poses and the 2.5D representation `(x, y, z - z_root)`.
//!
//! Units: 3D coordinates and all depths are millimeters; `x`/`y` of a 2.5D
//! pose are crop pixels, where pixel `i` spans `[i, i + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which hand a block of joints belongs to. Right-hand joints come first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hand {
    Right = 0,
    Left = 1,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Right, Hand::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Hand::Right => "right",
            Hand::Left => "left",
        }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Domain(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Perspective projection of a camera-frame point to full-image pixels.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy]
    }

    /// Back-projection of a full-image pixel at depth `z`.
    pub fn unproject(&self, uv: [f64; 2], z: f64) -> [f64; 3] {
        [(uv[0] - self.cx) * z / self.fx, (uv[1] - self.cy) * z / self.fy, z]
    }
}

/// Axis-aligned affine map from full-image pixels to crop pixels:
/// `crop = scale * image + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl CropTransform {
    pub const IDENTITY: CropTransform = CropTransform {
        scale_x: 1.0,
        scale_y: 1.0,
        offset_x: 0.0,
        offset_y: 0.0,
    };

    pub fn new(scale_x: f64, scale_y: f64, offset_x: f64, offset_y: f64) -> Result<Self> {
        if scale_x == 0.0 || scale_y == 0.0 || !scale_x.is_finite() || !scale_y.is_finite() {
            return Err(Error::Domain(format!(
                "crop scale must be finite and non-zero, got ({scale_x}, {scale_y})"
            )));
        }
        Ok(CropTransform {
            scale_x,
            scale_y,
            offset_x,
            offset_y,
        })
    }

    /// Crop that maps the square `[x0, x0 + side) × [y0, y0 + side)` onto `size × size` pixels.
    pub fn from_box(x0: f64, y0: f64, side: f64, size: usize) -> Result<Self> {
        let s = size as f64 / side;
        Self::new(s, s, -x0 * s, -y0 * s)
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [self.scale_x * p[0] + self.offset_x, self.scale_y * p[1] + self.offset_y]
    }

    pub fn invert(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.offset_x) / self.scale_x, (p[1] - self.offset_y) / self.scale_y]
    }
}

pub fn crop_apply(points: &[[f64; 2]], crop: &CropTransform) -> Vec<[f64; 2]> {
    points.iter().map(|&p| crop.apply(p)).collect()
}

pub fn crop_invert(points: &[[f64; 2]], crop: &CropTransform) -> Vec<[f64; 2]> {
    points.iter().map(|&p| crop.invert(p)).collect()
}

/// Camera-frame joints of both hands, millimeters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub joints: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

/// Per-joint `(x, y)` in crop pixels and `z` relative to the owning hand's root, mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose25D {
    pub joints: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

impl Pose3D {
    pub fn new(joints: Vec<[f64; 3]>, valid: Vec<bool>) -> Self {
        assert_eq!(joints.len(), valid.len());
        Pose3D { joints, valid }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// Copy with every joint of `hand` shifted by `t`.
    pub fn translated_hand(&self, tree: &KinematicTree, hand: Hand, t: [f64; 3]) -> Pose3D {
        let mut out = self.clone();
        for i in tree.hand_joints(hand) {
            for a in 0..3 {
                out.joints[i][a] += t[a];
            }
        }
        out
    }

    pub fn translated(&self, t: [f64; 3]) -> Pose3D {
        let mut out = self.clone();
        for j in &mut out.joints {
            for a in 0..3 {
                j[a] += t[a];
            }
        }
        out
    }
}

impl Pose25D {
    pub fn new(joints: Vec<[f64; 3]>, valid: Vec<bool>) -> Self {
        assert_eq!(joints.len(), valid.len());
        Pose25D { joints, valid }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Two identical hand skeletons: joints `0..J` are the right hand, `J..2J` the left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicTree {
    pub joints_per_hand: usize,
    /// Directed bones `(parent, child)` over `2J` joint indices.
    pub edges: Vec<(usize, usize)>,
    pub root_of: Vec<usize>,
}

impl KinematicTree {
    /// Builds both hands from one per-hand parent table; exactly one entry is `None` (the root).
    pub fn from_parents(parents: &[Option<usize>]) -> Result<Self> {
        let j = parents.len();
        let roots: Vec<usize> = (0..j).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::Contract(format!(
                "hand skeleton needs exactly one root, found {}",
                roots.len()
            )));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= j || *p == i {
                    return Err(Error::Contract(format!("joint {i} has invalid parent {p}")));
                }
            }
        }
        // reject cycles: every joint must reach the root
        for start in 0..j {
            let mut cur = start;
            for _ in 0..=j {
                match parents[cur] {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            if parents[cur].is_some() {
                return Err(Error::Contract(format!("joint {start} is on a cycle")));
            }
        }
        let mut edges = Vec::new();
        let mut root_of = Vec::new();
        for hand in 0..2 {
            let off = hand * j;
            for (i, p) in parents.iter().enumerate() {
                if let Some(p) = p {
                    edges.push((off + p, off + i));
                }
            }
            root_of.extend(std::iter::repeat(off + roots[0]).take(j));
        }
        Ok(KinematicTree {
            joints_per_hand: j,
            edges,
            root_of,
        })
    }

    /// 21-joint hand: wrist, then four joints per finger from thumb to little finger.
    pub fn hand21() -> Self {
        Self::from_parents(&hand21_parents()).expect("static skeleton")
    }

    pub fn joint_count(&self) -> usize {
        2 * self.joints_per_hand
    }

    pub fn root(&self, hand: Hand) -> usize {
        self.root_of[hand.index() * self.joints_per_hand]
    }

    pub fn hand_of(&self, joint: usize) -> Hand {
        if joint < self.joints_per_hand {
            Hand::Right
        } else {
            Hand::Left
        }
    }

    pub fn hand_joints(&self, hand: Hand) -> std::ops::Range<usize> {
        let off = hand.index() * self.joints_per_hand;
        off..off + self.joints_per_hand
    }

    /// Bones of one hand, in the same order for both hands.
    pub fn hand_edges(&self, hand: Hand) -> &[(usize, usize)] {
        let per = self.edges.len() / 2;
        &self.edges[hand.index() * per..(hand.index() + 1) * per]
    }
}

/// Parent table of the 21-joint hand (`None` marks the wrist).
pub fn hand21_parents() -> Vec<Option<usize>> {
    let mut p = vec![None];
    for f in 0..5 {
        let base = 1 + 4 * f;
        p.push(Some(0));
        p.push(Some(base));
        p.push(Some(base + 1));
        p.push(Some(base + 2));
    }
    p
}

/// Absolute root depths in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootDepths {
    pub left: f64,
    pub right: f64,
}

impl RootDepths {
    pub fn get(&self, hand: Hand) -> f64 {
        match hand {
            Hand::Right => self.right,
            Hand::Left => self.left,
        }
    }
}

/// Left/right root depths from the right-hand score, the right root depth,
/// the predicted right-to-left relative depth, and a standalone left depth.
/// The left root follows the right one unless the right hand is judged absent.
pub fn compose_root_depths(h_right: f64, z_right: f64, z_rel: f64, z_left: f64) -> RootDepths {
    let left = if h_right < 0.5 { z_left } else { z_right + z_rel };
    RootDepths { left, right: z_right }
}

/// Projects valid joints into crop pixels. Invalid joints map to `[0, 0]`.
pub fn project_3d_to_2d(pose: &Pose3D, cam: &CameraIntrinsics, crop: &CropTransform) -> Result<Vec<[f64; 2]>> {
    pose.joints
        .iter()
        .zip(&pose.valid)
        .enumerate()
        .map(|(i, (p, &valid))| {
            if !valid {
                return Ok([0.0, 0.0]);
            }
            if !(p[2] > 0.0) {
                return Err(Error::Domain(format!("joint {i} has non-positive depth {}", p[2])));
            }
            Ok(crop.apply(cam.project(*p)))
        })
        .collect()
}

pub fn pose3d_to_25d(
    pose: &Pose3D,
    cam: &CameraIntrinsics,
    crop: &CropTransform,
    tree: &KinematicTree,
) -> Result<Pose25D> {
    check_len(pose.len(), tree)?;
    let xy = project_3d_to_2d(pose, cam, crop)?;
    let joints = (0..pose.len())
        .map(|i| {
            if !pose.valid[i] {
                return [0.0, 0.0, 0.0];
            }
            let z = pose.joints[i][2] - pose.joints[tree.root_of[i]][2];
            [xy[i][0], xy[i][1], z]
        })
        .collect();
    Ok(Pose25D::new(joints, pose.valid.clone()))
}

/// Inverse of [`pose3d_to_25d`] given absolute root depths.
pub fn backproject_25d_to_3d(
    pose: &Pose25D,
    cam: &CameraIntrinsics,
    crop: &CropTransform,
    tree: &KinematicTree,
    roots: &RootDepths,
) -> Result<Pose3D> {
    check_len(pose.len(), tree)?;
    let joints = (0..pose.len())
        .map(|i| {
            if !pose.valid[i] {
                return Ok([0.0, 0.0, 0.0]);
            }
            let [x, y, z] = pose.joints[i];
            let depth = z + roots.get(tree.hand_of(i));
            if !(depth > 0.0) {
                return Err(Error::Domain(format!("joint {i} back-projects to depth {depth}")));
            }
            Ok(cam.unproject(crop.invert([x, y]), depth))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pose3D::new(joints, pose.valid.clone()))
}

fn check_len(n: usize, tree: &KinematicTree) -> Result<()> {
    if n != tree.joint_count() {
        return Err(Error::Contract(format!(
            "pose has {n} joints, skeleton has {}",
            tree.joint_count()
        )));
    }
    Ok(())
}
