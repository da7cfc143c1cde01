//! Capsule ray casting: shaded images, part labels through a z-buffer, and
//! per-hand silhouettes.

use crate::geometry::{CameraIntrinsics, CropTransform, Hand, KinematicTree};
use crate::segmentation::{bone_part, PartLabelMap, PartTaxonomy};

use super::skeleton::{add, dot, normalize, scale, sub, HandShape, Vec3};

/// A segment with a radius, owned by one part of one hand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
    pub hand: Hand,
    /// Local part index, 0 for the palm.
    pub part: usize,
}

impl Capsule {
    /// Distance along the unit ray `dir` from the origin to the first surface hit.
    pub fn intersect(&self, dir: Vec3) -> Option<f64> {
        let ba = sub(self.b, self.a);
        let oa = scale(self.a, -1.0);
        let baba = dot(ba, ba);
        let bard = dot(ba, dir);
        let baoa = dot(ba, oa);
        let rdoa = dot(dir, oa);
        let oaoa = dot(oa, oa);
        let r2 = self.radius * self.radius;
        let qa = baba - bard * bard;
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * oaoa - baoa * baoa - r2 * baba;
        let h = qb * qb - qa * qc;
        if h >= 0.0 && qa > 1e-12 {
            let t = (-qb - h.sqrt()) / qa;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                return (t > 0.0).then_some(t);
            }
        }
        // end caps
        let mut best: Option<f64> = None;
        for c in [self.a, self.b] {
            let oc = scale(c, -1.0);
            let b = dot(dir, oc);
            let h = b * b - (dot(oc, oc) - r2);
            if h > 0.0 {
                let t = -b - h.sqrt();
                if t > 0.0 && best.is_none_or(|bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        let ba = sub(self.b, self.a);
        let pa = sub(p, self.a);
        let h = (dot(pa, ba) / dot(ba, ba)).clamp(0.0, 1.0);
        let d = sub(pa, scale(ba, h));
        dot(d, d).sqrt()
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.distance(p) <= self.radius
    }

    /// Outward unit normal at a surface point.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        let ba = sub(self.b, self.a);
        let h = (dot(sub(p, self.a), ba) / dot(ba, ba)).clamp(0.0, 1.0);
        normalize(sub(p, add(self.a, scale(ba, h))))
    }
}

/// Capsules of one hand from camera-frame joints: 20 bones plus three palm cross-bars.
pub fn hand_capsules(hand: Hand, joints: &[Vec3], tree: &KinematicTree, shape: &HandShape) -> Vec<Capsule> {
    let off = tree.hand_joints(hand).start;
    let mut caps: Vec<Capsule> = tree
        .hand_edges(hand)
        .iter()
        .map(|&(p, c)| {
            let local = c - off;
            let level = (local - 1) % 4;
            Capsule {
                a: joints[p],
                b: joints[c],
                radius: shape.radii[level],
                hand,
                part: bone_part(local),
            }
        })
        .collect();
    for f in 1..4 {
        caps.push(Capsule {
            a: joints[off + 1 + 4 * f],
            b: joints[off + 5 + 4 * f],
            radius: shape.radii[0],
            hand,
            part: 0,
        });
    }
    caps
}

/// Everything needed to turn crop pixels into camera rays.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub cam: CameraIntrinsics,
    pub crop: CropTransform,
    pub crop_size: usize,
}

impl View {
    /// Unit ray through a continuous crop-pixel position.
    pub fn ray(&self, cx: f64, cy: f64) -> Vec3 {
        let [u, v] = self.crop.invert([cx, cy]);
        normalize([(u - self.cam.cx) / self.cam.fx, (v - self.cam.cy) / self.cam.fy, 1.0])
    }

    fn to_crop(&self, p: Vec3) -> [f64; 2] {
        self.crop.apply(self.cam.project(p))
    }

    /// Conservative crop-pixel bounding box of a capsule.
    fn bbox(&self, c: &Capsule) -> [f64; 4] {
        let pa = self.to_crop(c.a);
        let pb = self.to_crop(c.b);
        let zmin = (c.a[2].min(c.b[2]) - c.radius).max(1.0);
        let r = 1.5 * c.radius * self.cam.fx.max(self.cam.fy) * self.crop.scale_x.abs().max(self.crop.scale_y.abs()) / zmin + 1.0;
        [pa[0].min(pb[0]) - r, pa[1].min(pb[1]) - r, pa[0].max(pb[0]) + r, pa[1].max(pb[1]) + r]
    }
}

/// Capsules with cached crop-space bounding boxes.
pub struct Scene {
    pub capsules: Vec<Capsule>,
    boxes: Vec<[f64; 4]>,
    pub view: View,
}

/// Nearest surface along one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub depth: f64,
    pub capsule: usize,
}

impl Scene {
    pub fn new(capsules: Vec<Capsule>, view: View) -> Self {
        let boxes = capsules.iter().map(|c| view.bbox(c)).collect();
        Scene { capsules, boxes, view }
    }

    /// Nearest hit through crop position `(x, y)`; exact ties go to the lower capsule index.
    pub fn cast(&self, x: f64, y: f64, only: Option<Hand>) -> Option<Hit> {
        let dir = self.view.ray(x, y);
        let mut best: Option<Hit> = None;
        for (i, (c, b)) in self.capsules.iter().zip(&self.boxes).enumerate() {
            if x < b[0] || x > b[2] || y < b[1] || y > b[3] || only.is_some_and(|h| h != c.hand) {
                continue;
            }
            if let Some(t) = c.intersect(dir) {
                if best.is_none_or(|bh| t < bh.t - 1e-9) {
                    best = Some(Hit { t, depth: t * dir[2], capsule: i });
                }
            }
        }
        best
    }

    /// Class labels and z-buffer depth at `size × size`, sampling pixel centers.
    pub fn labels(&self, size: usize, taxonomy: &PartTaxonomy) -> (PartLabelMap, Vec<f64>) {
        let step = self.view.crop_size as f64 / size as f64;
        let mut labels = vec![0u8; size * size];
        let mut depth = vec![f64::INFINITY; size * size];
        for y in 0..size {
            for x in 0..size {
                if let Some(h) = self.cast((x as f64 + 0.5) * step, (y as f64 + 0.5) * step, None) {
                    let c = &self.capsules[h.capsule];
                    labels[y * size + x] = taxonomy.class_of(c.hand, c.part);
                    depth[y * size + x] = h.depth;
                }
            }
        }
        (PartLabelMap { width: size, height: size, labels }, depth)
    }

    /// Whether each pixel center at `size × size` sees `hand`, ignoring the other hand.
    pub fn silhouette(&self, hand: Hand, size: usize) -> Vec<bool> {
        let step = self.view.crop_size as f64 / size as f64;
        let mut out = vec![false; size * size];
        for y in 0..size {
            for x in 0..size {
                out[y * size + x] = self.cast((x as f64 + 0.5) * step, (y as f64 + 0.5) * step, Some(hand)).is_some();
            }
        }
        out
    }

    /// Shaded RGB image, channel-major, with `ss × ss` samples per pixel.
    pub fn image(&self, shading: &Shading, ss: usize) -> Vec<f32> {
        let n = self.view.crop_size;
        let mut img = vec![0.0f32; 3 * n * n];
        for y in 0..n {
            for x in 0..n {
                let mut acc = [0.0f64; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                        let c = match self.cast(px, py, None) {
                            Some(h) => {
                                let cap = &self.capsules[h.capsule];
                                let dir = self.view.ray(px, py);
                                let p = scale(dir, h.t);
                                let nrm = cap.normal(p);
                                let lambert = dot(nrm, shading.light).max(0.0);
                                let albedo = shading.albedo[cap.hand.index()];
                                let k = shading.ambient + (1.0 - shading.ambient) * lambert;
                                albedo.map(|a| a * k)
                            }
                            None => {
                                let t = py / n as f64;
                                [0, 1, 2].map(|c| shading.background[0][c] * (1.0 - t) + shading.background[1][c] * t)
                            }
                        };
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                let norm = (ss * ss) as f64;
                for k in 0..3 {
                    img[k * n * n + y * n + x] = (acc[k] / norm) as f32;
                }
            }
        }
        img
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shading {
    /// Surface color per hand, indexed by [`Hand::index`].
    pub albedo: [[f64; 3]; 2],
    /// Unit vector toward the light, camera frame.
    pub light: Vec3,
    pub ambient: f64,
    /// Background gradient, top then bottom.
    pub background: [[f64; 3]; 2],
}

/// Labels by marching along each pixel-center ray and testing capsule containment.
///
/// Slow and independent of [`Capsule::intersect`]; used to validate the renderer.
pub fn march_labels(scene: &Scene, size: usize, taxonomy: &PartTaxonomy, step_mm: f64) -> PartLabelMap {
    let caps = &scene.capsules;
    let near = caps.iter().map(|c| c.a[2].min(c.b[2]) - c.radius).fold(f64::INFINITY, f64::min) - 1.0;
    let far = caps.iter().map(|c| c.a[2].max(c.b[2]) + c.radius).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let px = scene.view.crop_size as f64 / size as f64;
    let mut labels = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let dir = scene.view.ray((x as f64 + 0.5) * px, (y as f64 + 0.5) * px);
            // unit-depth direction so the march runs along camera z
            let d = scale(dir, 1.0 / dir[2]);
            let mut z = near.max(1.0);
            'march: while z <= far {
                let p = scale(d, z);
                for c in caps {
                    if c.contains(p) {
                        labels[y * size + x] = taxonomy.class_of(c.hand, c.part);
                        break 'march;
                    }
                }
                z += step_mm;
            }
        }
    }
    PartLabelMap { width: size, height: size, labels }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_on_hits() {
        let cap = Capsule { a: [-10.0, 0.0, 100.0], b: [10.0, 0.0, 100.0], radius: 5.0, hand: Hand::Right, part: 0 };
        let t = cap.intersect([0.0, 0.0, 1.0]).unwrap();
        assert!((t - 95.0).abs() < 1e-9);
        // through the end cap
        let d = normalize([10.0, 0.0, 100.0]);
        let t = cap.intersect(d).unwrap();
        let p = scale(d, t);
        assert!((cap.distance(p) - 5.0).abs() < 1e-9);
        assert!(cap.intersect(normalize([1.0, 1.0, 1.0])).is_none());
        // behind the camera
        let back = Capsule { a: [0.0, 0.0, -50.0], b: [0.0, 1.0, -50.0], ..cap };
        assert!(back.intersect([0.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn intersection_lies_on_surface() {
        let cap = Capsule { a: [3.0, -4.0, 80.0], b: [-6.0, 9.0, 95.0], radius: 4.0, hand: Hand::Left, part: 3 };
        for i in 0..50 {
            let d = normalize([(i as f64 * 0.37).sin() * 0.15, (i as f64 * 0.91).cos() * 0.15, 1.0]);
            if let Some(t) = cap.intersect(d) {
                assert!((cap.distance(scale(d, t)) - 4.0).abs() < 1e-7);
                assert!(!cap.contains(scale(d, t - 1e-3)));
            }
        }
    }
}
