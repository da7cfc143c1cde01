//! Articulated hand skeleton in the 21-joint layout.
//!
//! The hand frame has `+y` from the wrist toward the middle finger, `+x`
//! toward the thumb of a right hand, and `+z` out of the back of the hand.
//! A left hand is the mirror image (`x -> -x`).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Hand;

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / dot(a, a).sqrt())
}

/// Rotates `v` about the unit axis `k` by `angle` (Rodrigues).
pub fn rotate(v: Vec3, k: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    add(add(scale(v, c), scale(cross(k, v), s)), scale(k, dot(k, v) * (1.0 - c)))
}

/// Row-major 3×3 rotation.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Proportions and articulation limits shared by both hands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandShape {
    /// First joint of each finger in the hand frame, thumb first (mm).
    pub finger_bases: [Vec3; 5],
    /// Phalanx lengths per finger (mm).
    pub phalanges: [[f64; 3]; 5],
    /// Uniform scale range applied per hand.
    pub scale_range: (f64, f64),
    /// Per-bone length jitter as a fraction.
    pub length_jitter: f64,
    /// Flexion limits in degrees for the three finger joints.
    pub flex_limits_deg: [(f64, f64); 3],
    pub abduction_limit_deg: f64,
    /// Capsule radii: palm, then the three phalanx levels (mm).
    pub radii: [f64; 4],
}

impl Default for HandShape {
    fn default() -> Self {
        HandShape {
            finger_bases: [
                [24.0, 22.0, 0.0],
                [24.0, 86.0, 0.0],
                [4.0, 90.0, 0.0],
                [-14.0, 86.0, 0.0],
                [-30.0, 76.0, 0.0],
            ],
            phalanges: [
                [40.0, 32.0, 28.0],
                [44.0, 26.0, 21.0],
                [48.0, 29.0, 23.0],
                [45.0, 28.0, 22.0],
                [35.0, 21.0, 19.0],
            ],
            scale_range: (0.9, 1.1),
            length_jitter: 0.05,
            flex_limits_deg: [(-10.0, 80.0), (0.0, 100.0), (0.0, 75.0)],
            abduction_limit_deg: 12.0,
            radii: [11.0, 9.5, 8.5, 7.5],
        }
    }
}

/// Joint angles of one hand.
#[derive(Clone, Debug, PartialEq)]
pub struct Articulation {
    pub flex: [[f64; 3]; 5],
    pub abduction: [f64; 5],
    pub scale: f64,
    pub lengths: [[f64; 3]; 5],
}

impl Articulation {
    /// Correlated random pose: one grip level shared by all fingers plus per-joint noise.
    pub fn sample(shape: &HandShape, rng: &mut impl Rng) -> Self {
        let grip: f64 = rng.gen_range(0.0..1.0);
        let mut flex = [[0.0; 3]; 5];
        let mut abduction = [0.0; 5];
        let mut lengths = shape.phalanges;
        for f in 0..5 {
            let finger_grip = (grip + rng.gen_range(-0.35..0.35)).clamp(0.0, 1.0);
            for j in 0..3 {
                let (lo, hi) = shape.flex_limits_deg[j];
                let t = (finger_grip + rng.gen_range(-0.15..0.15)).clamp(0.0, 1.0);
                flex[f][j] = (lo + t * (hi - lo)).to_radians();
                lengths[f][j] *= 1.0 + rng.gen_range(-shape.length_jitter..=shape.length_jitter);
            }
            abduction[f] = rng.gen_range(-shape.abduction_limit_deg..=shape.abduction_limit_deg).to_radians();
        }
        let (s0, s1) = shape.scale_range;
        Articulation {
            flex,
            abduction,
            scale: rng.gen_range(s0..=s1),
            lengths,
        }
    }

    pub fn within_limits(&self, shape: &HandShape) -> bool {
        let eps = 1e-9;
        let flex_ok = self.flex.iter().all(|f| {
            f.iter().zip(&shape.flex_limits_deg).all(|(a, &(lo, hi))| {
                let d = a.to_degrees();
                d >= lo - eps && d <= hi + eps
            })
        });
        let abd_ok = self.abduction.iter().all(|a| a.to_degrees().abs() <= shape.abduction_limit_deg + eps);
        flex_ok && abd_ok
    }
}

/// The 21 joints of a right hand in its own frame (mm).
pub fn right_hand_joints(shape: &HandShape, art: &Articulation) -> Vec<Vec3> {
    let mut joints = vec![[0.0; 3]; 21];
    for f in 0..5 {
        let base = scale(shape.finger_bases[f], art.scale);
        joints[1 + 4 * f] = base;
        // thumbs point outward and forward, fingers straight ahead
        let mut dir = if f == 0 { normalize([1.0, 1.0, -0.35]) } else { [0.0, 1.0, 0.0] };
        dir = rotate(dir, [0.0, 0.0, 1.0], art.abduction[f]);
        // flexion axis lies in the palm plane, across the finger
        let axis = normalize(cross(dir, [0.0, 0.0, 1.0]));
        let mut p = base;
        for j in 0..3 {
            // positive flexion curls toward the palm (-z)
            dir = rotate(dir, axis, -art.flex[f][j]);
            p = add(p, scale(dir, art.lengths[f][j] * art.scale));
            joints[2 + 4 * f + j] = p;
        }
    }
    joints
}

/// Hand-frame joints of `hand` after mirroring a right hand when needed.
pub fn hand_joints(hand: Hand, shape: &HandShape, art: &Articulation) -> Vec<Vec3> {
    let mut j = right_hand_joints(shape, art);
    if hand == Hand::Left {
        j.iter_mut().for_each(|p| p[0] = -p[0]);
    }
    j
}
