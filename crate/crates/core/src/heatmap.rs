//! Differentiable decoding of latent heatmaps into a 2.5D pose.
//!
//! The per-sample functions work in `f64` and come in forward/backward pairs;
//! the `*_node` functions wrap them as operations on a batched [`Tape`].
//! Pixel indices are `(m, n) = (column, row)`, zero based.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapKind {
    Latent2d,
    Normalized2d,
    LatentDepth,
    ComposedDepth,
}

/// `slices` maps of `height × width`, stored slice-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub width: usize,
    pub height: usize,
    pub slices: usize,
    pub data: Vec<f64>,
    pub kind: HeatmapKind,
}

impl HeatmapStack {
    pub fn new(width: usize, height: usize, slices: usize, data: Vec<f64>, kind: HeatmapKind) -> Result<Self> {
        if data.len() != width * height * slices {
            return Err(Error::Contract(format!(
                "heatmap data has {} values, expected {width}x{height}x{slices}",
                data.len()
            )));
        }
        Ok(HeatmapStack {
            width,
            height,
            slices,
            data,
            kind,
        })
    }

    pub fn zeros(width: usize, height: usize, slices: usize, kind: HeatmapKind) -> Self {
        HeatmapStack {
            width,
            height,
            slices,
            data: vec![0.0; width * height * slices],
            kind,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.data[k * self.area()..(k + 1) * self.area()]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let a = self.area();
        &mut self.data[k * a..(k + 1) * a]
    }

    pub fn at(&self, k: usize, m: usize, n: usize) -> f64 {
        self.data[k * self.area() + n * self.width + m]
    }

    pub fn set(&mut self, k: usize, m: usize, n: usize, v: f64) {
        let a = self.area();
        self.data[k * a + n * self.width + m] = v;
    }

    fn expect_kind(&self, kind: HeatmapKind, op: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Contract(format!("{op} expects {kind:?} maps, got {:?}", self.kind)));
        }
        Ok(())
    }
}

/// Softmax over all positions of each slice.
pub fn spatial_softmax(h: &HeatmapStack) -> Result<HeatmapStack> {
    if h.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("spatial softmax input contains NaN".into()));
    }
    let mut out = h.clone();
    out.kind = HeatmapKind::Normalized2d;
    for k in 0..h.slices {
        softmax_in_place(out.slice_mut(k));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - mx).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

/// Gradient w.r.t. the latent map given the softmax output and its upstream gradient.
pub fn spatial_softmax_backward(probs: &HeatmapStack, grad: &[f64]) -> Vec<f64> {
    let a = probs.area();
    let mut out = vec![0.0; grad.len()];
    for k in 0..probs.slices {
        let p = probs.slice(k);
        let g = &grad[k * a..(k + 1) * a];
        let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
        for i in 0..a {
            out[k * a + i] = p[i] * (g[i] - dot);
        }
    }
    out
}

/// Expected `(column, row)` under each normalized slice, in heatmap cells.
pub fn soft_argmax_2d(h: &HeatmapStack) -> Result<Vec<[f64; 2]>> {
    h.expect_kind(HeatmapKind::Normalized2d, "soft-argmax")?;
    (0..h.slices)
        .map(|k| {
            let s: f64 = h.slice(k).iter().sum();
            if (s - 1.0).abs() > 1e-3 || h.slice(k).iter().any(|&v| v < 0.0) {
                return Err(Error::Contract(format!("slice {k} is not a distribution (sum {s})")));
            }
            let (mut x, mut y) = (0.0, 0.0);
            for n in 0..h.height {
                for m in 0..h.width {
                    let p = h.at(k, m, n);
                    x += p * m as f64;
                    y += p * n as f64;
                }
            }
            Ok([x, y])
        })
        .collect()
}

/// Gradient w.r.t. the normalized maps given `d loss / d (x, y)` per slice.
pub fn soft_argmax_2d_backward(width: usize, height: usize, grad_xy: &[[f64; 2]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(width * height * grad_xy.len());
    for g in grad_xy {
        for n in 0..height {
            for m in 0..width {
                out.push(g[0] * m as f64 + g[1] * n as f64);
            }
        }
    }
    out
}

/// Heatmap-cell coordinates to crop pixels: cell `m` covers `[m·r, (m+1)·r)`.
pub fn heatmap_to_crop(p: [f64; 2], ratio: f64) -> [f64; 2] {
    [(p[0] + 0.5) * ratio, (p[1] + 0.5) * ratio]
}

pub fn crop_to_heatmap(p: [f64; 2], ratio: f64) -> [f64; 2] {
    [p[0] / ratio - 0.5, p[1] / ratio - 0.5]
}

/// Focuses latent depth on likely joint locations: `latent ⊙ normalized`.
pub fn compose_depth(latent_depth: &HeatmapStack, normalized: &HeatmapStack) -> Result<HeatmapStack> {
    latent_depth.expect_kind(HeatmapKind::LatentDepth, "compose_depth")?;
    normalized.expect_kind(HeatmapKind::Normalized2d, "compose_depth")?;
    if (latent_depth.width, latent_depth.height, latent_depth.slices)
        != (normalized.width, normalized.height, normalized.slices)
    {
        return Err(Error::Contract("compose_depth: heatmap shapes differ".into()));
    }
    let data = latent_depth
        .data
        .iter()
        .zip(&normalized.data)
        .map(|(a, b)| a * b)
        .collect();
    HeatmapStack::new(
        latent_depth.width,
        latent_depth.height,
        latent_depth.slices,
        data,
        HeatmapKind::ComposedDepth,
    )
}

/// Per-joint root-relative depth: the sum of each composed slice.
pub fn per_joint_depth(composed: &HeatmapStack) -> Result<Vec<f64>> {
    composed.expect_kind(HeatmapKind::ComposedDepth, "per_joint_depth")?;
    Ok((0..composed.slices).map(|k| composed.slice(k).iter().sum()).collect())
}

/// Probability over `bins` evenly spaced relative-depth values in `[min_mm, max_mm]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelDepthDistribution {
    pub p: Vec<f64>,
    pub min_mm: f64,
    pub max_mm: f64,
}

impl RelDepthDistribution {
    pub fn bins(&self) -> usize {
        self.p.len()
    }

    /// Millimeters per bin.
    pub fn step_mm(&self) -> f64 {
        if self.p.len() > 1 {
            (self.max_mm - self.min_mm) / (self.p.len() - 1) as f64
        } else {
            0.0
        }
    }

    pub fn bin_to_mm(&self, k: f64) -> f64 {
        self.min_mm + k * self.step_mm()
    }

    pub fn mm_to_bin(&self, mm: f64) -> f64 {
        (mm - self.min_mm) / self.step_mm()
    }

    /// Expected bin index `Σ k·p[k]`.
    pub fn expected_bin(&self) -> Result<f64> {
        let s: f64 = self.p.iter().sum();
        if (s - 1.0).abs() > 1e-5 || self.p.iter().any(|&v| v < 0.0) {
            return Err(Error::Contract(format!("relative-depth distribution sums to {s}")));
        }
        Ok(self.p.iter().enumerate().map(|(k, p)| k as f64 * p).sum())
    }
}

/// Right-to-left root depth in millimeters.
pub fn expected_rel_depth(d: &RelDepthDistribution) -> Result<f64> {
    Ok(d.bin_to_mm(d.expected_bin()?))
}

/// `d z / d p[k]` of [`expected_rel_depth`].
pub fn expected_rel_depth_backward(d: &RelDepthDistribution, grad: f64) -> Vec<f64> {
    (0..d.bins()).map(|k| grad * d.step_mm() * k as f64).collect()
}

// ----------------------------------------------------------------------
// Batched tape operations. Heatmaps are `[N, K, H, W]` tensors.

fn stack_of(t: &Tensor, s: usize, kind: HeatmapKind) -> HeatmapStack {
    let (_, k, h, w) = t.dims4();
    HeatmapStack {
        width: w,
        height: h,
        slices: k,
        data: t.sample(s).iter().map(|&v| v as f64).collect(),
        kind,
    }
}

/// Spatial softmax of latent 2D heatmaps.
pub fn spatial_softmax_node(tape: &mut Tape, latent: Var) -> Result<Var> {
    let t = tape.value(latent);
    let n = t.shape()[0];
    let mut out = Vec::with_capacity(t.len());
    for s in 0..n {
        let st = spatial_softmax(&stack_of(t, s, HeatmapKind::Latent2d))?;
        out.extend(st.data.iter().map(|&v| v as f32));
    }
    let out = Tensor::new(t.shape(), out);
    Ok(tape.custom(
        &[latent],
        out,
        Box::new(move |g, _, out, _| {
            let mut dx = Vec::with_capacity(g.len());
            for s in 0..n {
                let probs = stack_of(out, s, HeatmapKind::Normalized2d);
                let gs: Vec<f64> = g.sample(s).iter().map(|&v| v as f64).collect();
                dx.extend(spatial_softmax_backward(&probs, &gs).into_iter().map(|v| v as f32));
            }
            vec![Some(Tensor::new(g.shape(), dx))]
        }),
    ))
}

/// Soft-argmax in crop pixels: `[N, K, H, W] -> [N, K, 2]`.
pub fn soft_argmax_node(tape: &mut Tape, probs: Var, ratio: f64) -> Result<Var> {
    let t = tape.value(probs);
    let (n, k, h, w) = t.dims4();
    let mut out = Vec::with_capacity(n * k * 2);
    for s in 0..n {
        for p in soft_argmax_2d(&stack_of(t, s, HeatmapKind::Normalized2d))? {
            let c = heatmap_to_crop(p, ratio);
            out.push(c[0] as f32);
            out.push(c[1] as f32);
        }
    }
    let out = Tensor::new(&[n, k, 2], out);
    Ok(tape.custom(
        &[probs],
        out,
        Box::new(move |g, _, _, _| {
            let mut dx = Vec::with_capacity(n * k * h * w);
            for s in 0..n {
                let gxy: Vec<[f64; 2]> = g
                    .sample(s)
                    .chunks(2)
                    .map(|c| [c[0] as f64 * ratio, c[1] as f64 * ratio])
                    .collect();
                dx.extend(soft_argmax_2d_backward(w, h, &gxy).into_iter().map(|v| v as f32));
            }
            vec![Some(Tensor::new(&[n, k, h, w], dx))]
        }),
    ))
}

/// Slice sums of composed depth maps scaled by `unit_mm`: `[N, K, H, W] -> [N, K]`.
pub fn per_joint_depth_node(tape: &mut Tape, composed: Var, unit_mm: f64) -> Result<Var> {
    let t = tape.value(composed);
    let (n, k, h, w) = t.dims4();
    let mut out = Vec::with_capacity(n * k);
    for s in 0..n {
        for z in per_joint_depth(&stack_of(t, s, HeatmapKind::ComposedDepth))? {
            out.push((z * unit_mm) as f32);
        }
    }
    let out = Tensor::new(&[n, k], out);
    let area = h * w;
    Ok(tape.custom(
        &[composed],
        out,
        Box::new(move |g, _, _, _| {
            let mut dx = Vec::with_capacity(n * k * area);
            for &gv in g.data() {
                dx.extend(std::iter::repeat(gv * unit_mm as f32).take(area));
            }
            vec![Some(Tensor::new(&[n, k, h, w], dx))]
        }),
    ))
}

/// Expected relative root depth in mm from softmax-normalized bins: `[N, D] -> [N]`.
pub fn expected_rel_depth_node(tape: &mut Tape, probs: Var, min_mm: f64, max_mm: f64) -> Result<Var> {
    let t = tape.value(probs);
    let (n, d) = (t.shape()[0], t.shape()[1]);
    let dist = move |row: &[f32]| RelDepthDistribution {
        p: row.iter().map(|&v| v as f64).collect(),
        min_mm,
        max_mm,
    };
    let mut out = Vec::with_capacity(n);
    for row in t.data().chunks(d) {
        let mut dd = dist(row);
        // f32 rounding can leave the sum a few ulps off
        let s: f64 = dd.p.iter().sum();
        dd.p.iter_mut().for_each(|v| *v /= s);
        out.push(expected_rel_depth(&dd)? as f32);
    }
    let out = Tensor::new(&[n], out);
    Ok(tape.custom(
        &[probs],
        out,
        Box::new(move |g, ins, _, _| {
            let mut dx = Vec::with_capacity(n * d);
            for (row, &gv) in ins[0].data().chunks(d).zip(g.data()) {
                dx.extend(
                    expected_rel_depth_backward(&dist(row), gv as f64)
                        .into_iter()
                        .map(|v| v as f32),
                );
            }
            vec![Some(Tensor::new(&[n, d], dx))]
        }),
    ))
}

/// Joins `[N, K, 2]` coordinates and `[N, K]` depths into `[N, K, 3]`.
pub fn assemble_pose_node(tape: &mut Tape, xy: Var, z: Var) -> Var {
    let (txy, tz) = (tape.value(xy), tape.value(z));
    let (n, k) = (tz.shape()[0], tz.shape()[1]);
    assert_eq!(txy.shape(), &[n, k, 2]);
    let mut out = Vec::with_capacity(n * k * 3);
    for i in 0..n * k {
        out.extend_from_slice(&[txy.data()[2 * i], txy.data()[2 * i + 1], tz.data()[i]]);
    }
    let out = Tensor::new(&[n, k, 3], out);
    tape.custom(
        &[xy, z],
        out,
        Box::new(move |g, _, _, needs| {
            let gd = g.data();
            let dxy = needs[0].then(|| {
                Tensor::new(
                    &[n, k, 2],
                    (0..n * k).flat_map(|i| [gd[3 * i], gd[3 * i + 1]]).collect(),
                )
            });
            let dz = needs[1].then(|| Tensor::new(&[n, k], (0..n * k).map(|i| gd[3 * i + 2]).collect()));
            vec![dxy, dz]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_latent(rng: &mut ChaCha8Rng, kind: HeatmapKind) -> HeatmapStack {
        let data = (0..8 * 8 * 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        HeatmapStack::new(8, 8, 2, data, kind).unwrap()
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64]) {
        for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < 1e-3, "entry {i}: analytic {a} numeric {n}");
        }
    }

    fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let step = 1e-4;
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                p[i] += step;
                let fp = f(&p);
                p[i] -= 2.0 * step;
                (fp - f(&p)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn soft_argmax_chain_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let latent = random_latent(&mut rng, HeatmapKind::Latent2d);
        let weights: Vec<[f64; 2]> = (0..2).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let objective = |x: &[f64]| {
            let h = HeatmapStack::new(8, 8, 2, x.to_vec(), HeatmapKind::Latent2d).unwrap();
            let xy = soft_argmax_2d(&spatial_softmax(&h).unwrap()).unwrap();
            xy.iter().zip(&weights).map(|(p, w)| p[0] * w[0] + p[1] * w[1]).sum::<f64>()
        };
        let probs = spatial_softmax(&latent).unwrap();
        let g_probs = soft_argmax_2d_backward(8, 8, &weights);
        let analytic = spatial_softmax_backward(&probs, &g_probs);
        assert_grad_close(&analytic, &central_diff(&latent.data, objective));
    }

    #[test]
    fn per_joint_depth_chain_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let latent = random_latent(&mut rng, HeatmapKind::Latent2d);
        let hz = random_latent(&mut rng, HeatmapKind::LatentDepth);
        let weights = [0.7, -1.3];
        let objective = |l2d: &[f64], lz: &[f64]| {
            let h = HeatmapStack::new(8, 8, 2, l2d.to_vec(), HeatmapKind::Latent2d).unwrap();
            let z = HeatmapStack::new(8, 8, 2, lz.to_vec(), HeatmapKind::LatentDepth).unwrap();
            let composed = compose_depth(&z, &spatial_softmax(&h).unwrap()).unwrap();
            per_joint_depth(&composed).unwrap().iter().zip(weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let probs = spatial_softmax(&latent).unwrap();
        let area = 64;
        // d/d hz = w_k · h2d ; d/d h2d = w_k · hz
        let g_hz: Vec<f64> = probs.data.iter().enumerate().map(|(i, p)| weights[i / area] * p).collect();
        let g_h2d: Vec<f64> = hz.data.iter().enumerate().map(|(i, z)| weights[i / area] * z).collect();
        let g_latent = spatial_softmax_backward(&probs, &g_h2d);
        assert_grad_close(&g_hz, &central_diff(&hz.data, |x| objective(&latent.data, x)));
        assert_grad_close(&g_latent, &central_diff(&latent.data, |x| objective(x, &hz.data)));
    }

    #[test]
    fn expected_rel_depth_chain_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let logits: Vec<f64> = (0..64).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let dist = |x: &[f64]| {
            let mut p = x.to_vec();
            softmax_in_place(&mut p);
            RelDepthDistribution { p, min_mm: -400.0, max_mm: 400.0 }
        };
        let d = dist(&logits);
        let g_p = expected_rel_depth_backward(&d, 1.0);
        let mean: f64 = g_p.iter().zip(&d.p).map(|(g, p)| g * p).sum();
        let analytic: Vec<f64> = d.p.iter().zip(&g_p).map(|(p, g)| p * (g - mean)).collect();
        let numeric = central_diff(&logits, |x| expected_rel_depth(&dist(x)).unwrap());
        assert_grad_close(&analytic, &numeric);
    }

    fn one_hot(w: usize, h: usize, m: usize, n: usize) -> HeatmapStack {
        let mut s = HeatmapStack::zeros(w, h, 1, HeatmapKind::Normalized2d);
        s.set(0, m, n, 1.0);
        s
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let h = HeatmapStack::zeros(4, 3, 2, HeatmapKind::Latent2d);
        let p = spatial_softmax(&h).unwrap();
        assert!(p.data.iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_saturates_and_hand_example() {
        let mut h = HeatmapStack::zeros(3, 3, 1, HeatmapKind::Latent2d);
        h.set(0, 2, 1, 1000.0);
        let p = spatial_softmax(&h).unwrap();
        assert!((p.at(0, 2, 1) - 1.0).abs() < 1e-12);
        let h = HeatmapStack::new(2, 2, 1, vec![0.0, 2f64.ln(), 0.0, 0.0], HeatmapKind::Latent2d).unwrap();
        let p = spatial_softmax(&h).unwrap();
        let expect = [0.2, 0.4, 0.2, 0.2];
        for (a, b) in p.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let h = HeatmapStack::new(1, 1, 1, vec![f64::NAN], HeatmapKind::Latent2d).unwrap();
        assert!(matches!(spatial_softmax(&h), Err(Error::Domain(_))));
    }

    #[test]
    fn soft_argmax_examples() {
        assert_eq!(soft_argmax_2d(&one_hot(64, 64, 10, 20)).unwrap(), vec![[10.0, 20.0]]);
        let u = spatial_softmax(&HeatmapStack::zeros(64, 64, 1, HeatmapKind::Latent2d)).unwrap();
        let c = soft_argmax_2d(&u).unwrap()[0];
        assert!((c[0] - 31.5).abs() < 1e-9 && (c[1] - 31.5).abs() < 1e-9);
        // two equal modes: the estimate lands between them
        let mut two = HeatmapStack::zeros(64, 64, 1, HeatmapKind::Normalized2d);
        two.set(0, 0, 0, 0.5);
        two.set(0, 62, 0, 0.5);
        assert_eq!(soft_argmax_2d(&two).unwrap(), vec![[31.0, 0.0]]);
    }

    #[test]
    fn soft_argmax_requires_normalized_input() {
        let mut h = one_hot(4, 4, 1, 1);
        h.set(0, 2, 2, 0.01);
        assert!(matches!(soft_argmax_2d(&h), Err(Error::Contract(_))));
        let mut latent = one_hot(4, 4, 1, 1);
        latent.kind = HeatmapKind::Latent2d;
        assert!(soft_argmax_2d(&latent).is_err());
    }

    #[test]
    fn soft_argmax_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut base = HeatmapStack::zeros(12, 12, 1, HeatmapKind::Normalized2d);
        for n in 0..6 {
            for m in 0..6 {
                base.set(0, m, n, rng.gen_range(0.0..1.0));
            }
        }
        let s: f64 = base.data.iter().sum();
        base.data.iter_mut().for_each(|v| *v /= s);
        let c0 = soft_argmax_2d(&base).unwrap()[0];
        for (dm, dn) in [(1usize, 0usize), (3, 5), (6, 6)] {
            let mut shifted = HeatmapStack::zeros(12, 12, 1, HeatmapKind::Normalized2d);
            for n in 0..6 {
                for m in 0..6 {
                    shifted.set(0, m + dm, n + dn, base.at(0, m, n));
                }
            }
            let c = soft_argmax_2d(&shifted).unwrap()[0];
            assert!((c[0] - c0[0] - dm as f64).abs() < 1e-12);
            assert!((c[1] - c0[1] - dn as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_composition_examples() {
        let hz = HeatmapStack::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0], HeatmapKind::LatentDepth).unwrap();
        let h2 = HeatmapStack::new(2, 2, 1, vec![0.25; 4], HeatmapKind::Normalized2d).unwrap();
        let c = compose_depth(&hz, &h2).unwrap();
        assert_eq!(c.data, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(per_joint_depth(&c).unwrap(), vec![2.5]);

        let constant = HeatmapStack::new(3, 3, 1, vec![7.5; 9], HeatmapKind::LatentDepth).unwrap();
        let c = compose_depth(&constant, &one_hot(3, 3, 2, 0)).unwrap();
        assert_eq!(c.data.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(c.at(0, 2, 0), 7.5);
        assert_eq!(per_joint_depth(&c).unwrap(), vec![7.5]);

        let uniform = HeatmapStack::new(3, 3, 1, vec![1.0 / 9.0; 9], HeatmapKind::Normalized2d).unwrap();
        let z = per_joint_depth(&compose_depth(&constant, &uniform).unwrap()).unwrap()[0];
        assert!((z - 7.5).abs() < 1e-12);

        let zeros = HeatmapStack::zeros(3, 3, 1, HeatmapKind::LatentDepth);
        assert!(compose_depth(&zeros, &uniform).unwrap().data.iter().all(|&v| v == 0.0));
        let wrong = HeatmapStack::zeros(2, 3, 1, HeatmapKind::LatentDepth);
        assert!(matches!(compose_depth(&wrong, &uniform), Err(Error::Contract(_))));
    }

    #[test]
    fn relative_depth_expectation() {
        let mut p = vec![0.0; 64];
        p[17] = 1.0;
        let d = RelDepthDistribution { p, min_mm: 0.0, max_mm: 63.0 };
        assert_eq!(d.expected_bin().unwrap(), 17.0);
        let u = RelDepthDistribution { p: vec![1.0 / 64.0; 64], min_mm: 0.0, max_mm: 63.0 };
        assert!((u.expected_bin().unwrap() - 31.5).abs() < 1e-12);
        let mut p = vec![0.0; 11];
        p[0] = 0.5;
        p[10] = 0.5;
        let d = RelDepthDistribution { p, min_mm: 0.0, max_mm: 10.0 };
        assert_eq!(expected_rel_depth(&d).unwrap(), 5.0);
        let bad = RelDepthDistribution { p: vec![0.3, 0.3], min_mm: 0.0, max_mm: 1.0 };
        assert!(matches!(expected_rel_depth(&bad), Err(Error::Contract(_))));
        let default = RelDepthDistribution { p: vec![1.0 / 64.0; 64], min_mm: -400.0, max_mm: 400.0 };
        assert!(expected_rel_depth(&default).unwrap().abs() < 1e-9);
    }

    #[test]
    fn batched_nodes_match_per_sample_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let latent = tape.leaf(Tensor::new(&[2, 3, 4, 5], data.clone()));
        let probs = spatial_softmax_node(&mut tape, latent).unwrap();
        let xy = soft_argmax_node(&mut tape, probs, 4.0).unwrap();
        let stack = HeatmapStack::new(
            5,
            4,
            3,
            data[60..].iter().map(|&v| v as f64).collect(),
            HeatmapKind::Latent2d,
        )
        .unwrap();
        let expect = soft_argmax_2d(&spatial_softmax(&stack).unwrap()).unwrap();
        let got = &tape.value(xy).data()[6..];
        for (k, e) in expect.iter().enumerate() {
            let c = heatmap_to_crop(*e, 4.0);
            assert!((got[2 * k] as f64 - c[0]).abs() < 1e-4);
            assert!((got[2 * k + 1] as f64 - c[1]).abs() < 1e-4);
        }
    }
}
