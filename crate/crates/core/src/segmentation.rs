//! Probabilistic part segmentation: the part taxonomy, the segmentation
//! volume and its loss, and the layers that turn visual features into
//! segmentation logits, project the logits to semantic features, and fuse
//! those with the visual features.
//!
//! Logits flow into the semantic projection untouched. [`argmax_labels`]
//! exists for display, mIoU, and the class-label ablation arm only.

use std::fmt::Write as _;

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::Hand;
use crate::nn::{BatchNorm2d, Conv2d, ConvBlock, Ctx, DoubleConv, ParamStore};
use crate::tensor::Tensor;

pub const PARTS_PER_HAND: usize = 16;
pub const TAXONOMY_VERSION: u32 = 1;

const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "little"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TaxonomyKind {
    /// Background plus 16 parts per hand: 33 classes.
    Parts,
    /// Background, right hand, left hand.
    LeftRight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartClass {
    pub id: u8,
    pub name: String,
    pub hand: Option<Hand>,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartTaxonomy {
    pub kind: TaxonomyKind,
    pub classes: Vec<PartClass>,
}

/// Local part of a bone given its child joint (21-joint hand layout):
/// 0 is the palm, then three phalanges per finger from thumb to little finger.
pub fn bone_part(child_local: usize) -> usize {
    assert!((1..21).contains(&child_local), "joint {child_local} is not a bone child");
    let seg = (child_local - 1) % 4;
    if seg == 0 {
        0
    } else {
        1 + 3 * ((child_local - 1) / 4) + seg - 1
    }
}

/// Local parts touching a joint.
pub fn joint_parts(local: usize) -> Vec<usize> {
    match local {
        0 => vec![0],
        j => {
            let seg = (j - 1) % 4;
            let f = (j - 1) / 4;
            match seg {
                0 => vec![0, 1 + 3 * f],
                3 => vec![1 + 3 * f + 2],
                s => vec![1 + 3 * f + s - 1, 1 + 3 * f + s],
            }
        }
    }
}

fn local_part_name(p: usize) -> String {
    if p == 0 {
        "palm".into()
    } else {
        format!("{}_{}", FINGERS[(p - 1) / 3], (p - 1) % 3 + 1)
    }
}

impl PartTaxonomy {
    pub fn new(kind: TaxonomyKind) -> Self {
        match kind {
            TaxonomyKind::Parts => Self::hand_parts(),
            TaxonomyKind::LeftRight => Self::left_right(),
        }
    }

    /// 33 classes: background, 16 right-hand parts, 16 left-hand parts.
    pub fn hand_parts() -> Self {
        let mut classes = vec![PartClass {
            id: 0,
            name: "background".into(),
            hand: None,
            color: [0, 0, 0],
        }];
        for hand in Hand::BOTH {
            for p in 0..PARTS_PER_HAND {
                // hue walk over the parts; left hand slightly brighter
                let hue = p as f64 / PARTS_PER_HAND as f64;
                let light = if hand == Hand::Left { 0.75 } else { 0.5 };
                classes.push(PartClass {
                    id: (1 + hand.index() * PARTS_PER_HAND + p) as u8,
                    name: format!("{}_{}", hand.name(), local_part_name(p)),
                    hand: Some(hand),
                    color: hsl_to_rgb(hue, 0.8, light),
                });
            }
        }
        PartTaxonomy {
            kind: TaxonomyKind::Parts,
            classes,
        }
    }

    pub fn left_right() -> Self {
        PartTaxonomy {
            kind: TaxonomyKind::LeftRight,
            classes: vec![
                PartClass { id: 0, name: "background".into(), hand: None, color: [0, 0, 0] },
                PartClass { id: 1, name: "right_hand".into(), hand: Some(Hand::Right), color: [40, 90, 200] },
                PartClass { id: 2, name: "left_hand".into(), hand: Some(Hand::Left), color: [230, 200, 40] },
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Class id of a local part of `hand`.
    pub fn class_of(&self, hand: Hand, local_part: usize) -> u8 {
        match self.kind {
            TaxonomyKind::Parts => (1 + hand.index() * PARTS_PER_HAND + local_part) as u8,
            TaxonomyKind::LeftRight => 1 + hand.index() as u8,
        }
    }

    /// Re-labels a full part map into this taxonomy.
    pub fn relabel(&self, parts: &PartLabelMap) -> PartLabelMap {
        match self.kind {
            TaxonomyKind::Parts => parts.clone(),
            TaxonomyKind::LeftRight => PartLabelMap {
                width: parts.width,
                height: parts.height,
                labels: parts
                    .labels
                    .iter()
                    .map(|&l| if l == 0 { 0 } else { 1 + ((l as usize - 1) / PARTS_PER_HAND) as u8 })
                    .collect(),
            },
        }
    }

    /// Tab-separated manifest: a version header, then one row per class.
    pub fn to_manifest(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            TaxonomyKind::Parts => "parts",
            TaxonomyKind::LeftRight => "left_right",
        };
        writeln!(s, "# handseg part taxonomy").unwrap();
        writeln!(s, "version\t{TAXONOMY_VERSION}").unwrap();
        writeln!(s, "kind\t{kind}").unwrap();
        writeln!(s, "classes\t{}", self.len()).unwrap();
        writeln!(s, "id\tname\thand\tcolor").unwrap();
        for c in &self.classes {
            let hand = c.hand.map_or("-", Hand::name);
            let [r, g, b] = c.color;
            writeln!(s, "{}\t{}\t{}\t#{r:02x}{g:02x}{b:02x}", c.id, c.name, hand).unwrap();
        }
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Contract(format!("taxonomy manifest: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(bad(format!("expected {key}, got {line:?}"))),
            }
        };
        let version: u32 = header("version")?.parse().map_err(|_| bad("bad version".into()))?;
        if version != TAXONOMY_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let kind = match header("kind")?.as_str() {
            "parts" => TaxonomyKind::Parts,
            "left_right" => TaxonomyKind::LeftRight,
            k => return Err(bad(format!("unknown kind {k}"))),
        };
        let count: usize = header("classes")?.parse().map_err(|_| bad("bad class count".into()))?;
        if lines.next() != Some("id\tname\thand\tcolor") {
            return Err(bad("missing column header".into()));
        }
        let mut classes = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("malformed row {line:?}")));
            }
            let hand = match f[2] {
                "-" => None,
                "right" => Some(Hand::Right),
                "left" => Some(Hand::Left),
                h => return Err(bad(format!("unknown hand {h}"))),
            };
            let hex = f[3].trim_start_matches('#');
            let ch = |i: usize| u8::from_str_radix(hex.get(i..i + 2).unwrap_or("zz"), 16);
            let color = match (ch(0), ch(2), ch(4)) {
                (Ok(r), Ok(g), Ok(b)) if hex.len() == 6 => [r, g, b],
                _ => return Err(bad(format!("bad color {}", f[3]))),
            };
            classes.push(PartClass {
                id: f[0].parse().map_err(|_| bad(format!("bad id {}", f[0])))?,
                name: f[1].to_string(),
                hand,
                color,
            });
        }
        if classes.len() != count || classes.iter().enumerate().any(|(i, c)| c.id as usize != i) {
            return Err(bad("class ids must be 0..count in order".into()));
        }
        Ok(PartTaxonomy { kind, classes })
    }
}

fn hsl_to_rgb(h: f64, s: f64, l: f64) -> [u8; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Per-pixel class logits, stored class-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationVolume {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub logits: Vec<f64>,
}

impl SegmentationVolume {
    pub fn new(width: usize, height: usize, classes: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != width * height * classes {
            return Err(Error::Contract("segmentation volume size mismatch".into()));
        }
        Ok(SegmentationVolume {
            width,
            height,
            classes,
            logits,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn logit(&self, class: usize, pixel: usize) -> f64 {
        self.logits[class * self.pixels() + pixel]
    }

    /// Sample `s` of an `[N, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor, s: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        SegmentationVolume {
            width: w,
            height: h,
            classes: c,
            logits: t.sample(s).iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Ground-truth class id per pixel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartLabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl PartLabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Contract("label map size mismatch".into()));
        }
        Ok(PartLabelMap { width, height, labels })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

fn check_pair(s: &SegmentationVolume, t: &PartLabelMap) -> Result<()> {
    if (s.width, s.height) != (t.width, t.height) {
        return Err(Error::Contract(format!(
            "segmentation is {}x{}, labels are {}x{}",
            s.width, s.height, t.width, t.height
        )));
    }
    if let Some(&bad) = t.labels.iter().find(|&&l| l as usize >= s.classes) {
        return Err(Error::Contract(format!("label {bad} out of range for {} classes", s.classes)));
    }
    Ok(())
}

/// Mean over pixels of `-log softmax(logits)[true class]`.
pub fn segmentation_loss(s: &SegmentationVolume, t: &PartLabelMap) -> Result<f64> {
    check_pair(s, t)?;
    let np = s.pixels();
    let mut total = 0.0;
    for px in 0..np {
        let mx = (0..s.classes).map(|c| s.logit(c, px)).fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + (0..s.classes).map(|c| (s.logit(c, px) - mx).exp()).sum::<f64>().ln();
        total += lse - s.logit(t.labels[px] as usize, px);
    }
    Ok(total / np as f64)
}

/// Gradient of [`segmentation_loss`] w.r.t. the logits.
pub fn segmentation_loss_grad(s: &SegmentationVolume, t: &PartLabelMap) -> Result<Vec<f64>> {
    check_pair(s, t)?;
    let np = s.pixels();
    let mut g = vec![0.0; s.logits.len()];
    let mut col = vec![0.0; s.classes];
    for px in 0..np {
        for (c, v) in col.iter_mut().enumerate() {
            *v = s.logit(c, px);
        }
        crate::heatmap::softmax_in_place(&mut col);
        for (c, p) in col.iter().enumerate() {
            let target = if c == t.labels[px] as usize { 1.0 } else { 0.0 };
            g[c * np + px] = (p - target) / np as f64;
        }
    }
    Ok(g)
}

/// Per-pixel most likely class; ties go to the lowest class id.
pub fn argmax_labels(s: &SegmentationVolume) -> PartLabelMap {
    let np = s.pixels();
    let labels = (0..np)
        .map(|px| {
            let mut best = 0;
            for c in 1..s.classes {
                if s.logit(c, px) > s.logit(best, px) {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    PartLabelMap {
        width: s.width,
        height: s.height,
        labels,
    }
}

/// Batch-mean segmentation loss over `[N, C, H, W]` logits.
pub fn segmentation_loss_node(tape: &mut Tape, logits: Var, labels: &[&PartLabelMap]) -> Result<Var> {
    let t = tape.value(logits);
    let n = t.shape()[0];
    if labels.len() != n {
        return Err(Error::Contract(format!("{} label maps for a batch of {n}", labels.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(t.len());
    for (s, lab) in labels.iter().enumerate() {
        let vol = SegmentationVolume::from_tensor(t, s);
        total += segmentation_loss(&vol, lab)?;
        grad.extend(segmentation_loss_grad(&vol, lab)?.into_iter().map(|g| (g / n as f64) as f32));
    }
    let grad = Tensor::new(t.shape(), grad);
    Ok(tape.custom(
        &[logits],
        Tensor::scalar((total / n as f64) as f32),
        Box::new(move |g, _, _, _| {
            let mut d = grad.clone();
            d.scale_in_place(g.item());
            vec![Some(d)]
        }),
    ))
}

/// Quantizes logits to one-hot argmax maps. No gradient flows through.
pub fn one_hot_argmax_node(tape: &mut Tape, logits: Var) -> Var {
    let t = tape.value(logits);
    let (n, c, h, w) = t.dims4();
    let mut out = vec![0.0f32; t.len()];
    for s in 0..n {
        let lab = argmax_labels(&SegmentationVolume::from_tensor(t, s));
        for (px, &l) in lab.labels.iter().enumerate() {
            out[(s * c + l as usize) * h * w + px] = 1.0;
        }
    }
    tape.constant(Tensor::new(&[n, c, h, w], out))
}

// ----------------------------------------------------------------------
// Layers

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureRole {
    /// Backbone output.
    Visual,
    /// Projected segmentation logits.
    Semantic,
    /// Output of the fusion network.
    Fused,
}

/// A feature map on the tape together with the role it plays in the model.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub var: Var,
    pub role: FeatureRole,
}

impl FeatureMap {
    pub fn expect(&self, role: FeatureRole) -> Result<Var> {
        if self.role != role {
            return Err(Error::Contract(format!("expected {role:?} features, got {:?}", self.role)));
        }
        Ok(self.var)
    }
}

/// Visual features to segmentation logits at twice the feature resolution.
#[derive(Clone, Debug)]
pub struct SegmentationHead {
    blocks: Vec<ConvBlock>,
    in_channels: usize,
}

impl SegmentationHead {
    /// `widths` are the two hidden widths (16 and 64 in the reference design).
    pub fn new(
        store: &mut ParamStore,
        in_channels: usize,
        widths: [usize; 2],
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let chans = [in_channels, widths[0], widths[1], classes, classes];
        let blocks = (0..4)
            .map(|i| {
                let name = format!("seg_head.conv{i}");
                let last = i == 3;
                ConvBlock {
                    conv: Conv2d::same3(store, &name, chans[i], chans[i + 1], rng),
                    bn: (!last).then(|| BatchNorm2d::new(store, &format!("seg_head.bn{i}"), chans[i + 1])),
                    relu: !last,
                }
            })
            .collect();
        SegmentationHead { blocks, in_channels }
    }

    pub fn forward(&self, ctx: &mut Ctx, features: FeatureMap) -> Result<Var> {
        let x = features.expect(FeatureRole::Visual)?;
        let (_, c, h, w) = ctx.tape.value(x).dims4();
        if c != self.in_channels {
            return Err(Error::Contract(format!(
                "segmentation head expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let mut y = ctx.tape.resize_bilinear(x, 2 * h, 2 * w);
        for b in &self.blocks {
            y = b.forward(ctx, y);
        }
        Ok(y)
    }
}

/// Segmentation logits to semantic features at the visual-feature resolution.
#[derive(Clone, Debug)]
pub struct SemanticProjection {
    first: Conv2d,
    second: Conv2d,
}

impl SemanticProjection {
    pub fn new(store: &mut ParamStore, classes: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Self {
        SemanticProjection {
            first: Conv2d::same3(store, "sem_proj.conv0", classes, hidden, rng),
            second: Conv2d::same3(store, "sem_proj.conv1", hidden, out, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, logits: Var) -> FeatureMap {
        let y = self.first.forward(ctx, logits);
        let y = ctx.tape.relu(y);
        let y = self.second.forward(ctx, y);
        let y = ctx.tape.relu(y);
        FeatureMap {
            var: ctx.tape.max_pool2(y),
            role: FeatureRole::Semantic,
        }
    }
}

/// Encoder-decoder with two down and two up stages and skip connections.
#[derive(Clone, Debug)]
pub struct FusionNet {
    inc: DoubleConv,
    down1: DoubleConv,
    down2: DoubleConv,
    up1: DoubleConv,
    up2: DoubleConv,
    out: Conv2d,
    in_channels: usize,
}

impl FusionNet {
    /// `widths = [w0, w1, w2]` with `w2` the bottleneck width.
    pub fn new(store: &mut ParamStore, in_channels: usize, widths: [usize; 3], rng: &mut impl Rng) -> Self {
        let [w0, w1, w2] = widths;
        FusionNet {
            inc: DoubleConv::new(store, "fusion.inc", in_channels, w0, rng),
            down1: DoubleConv::new(store, "fusion.down1", w0, w1, rng),
            down2: DoubleConv::new(store, "fusion.down2", w1, w2, rng),
            up1: DoubleConv::new(store, "fusion.up1", w2 + w1, w1, rng),
            up2: DoubleConv::new(store, "fusion.up2", w1 + w0, w0, rng),
            out: Conv2d::new(store, "fusion.out", w0, in_channels, 1, 1, 0, rng),
            in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels
    }

    /// Concatenates the available inputs along channels and fuses them.
    pub fn forward(&self, ctx: &mut Ctx, visual: Option<FeatureMap>, semantic: FeatureMap) -> Result<FeatureMap> {
        let s = semantic.expect(FeatureRole::Semantic)?;
        let x = match visual {
            Some(v) => {
                let v = v.expect(FeatureRole::Visual)?;
                ctx.tape.concat_channels(&[v, s])
            }
            None => s,
        };
        let (_, c, h, w) = ctx.tape.value(x).dims4();
        if c != self.in_channels {
            return Err(Error::Contract(format!("fusion expects {} channels, got {c}", self.in_channels)));
        }
        let x1 = self.inc.forward(ctx, x);
        let d = ctx.tape.resize_bilinear(x1, h / 2, w / 2);
        let x2 = self.down1.forward(ctx, d);
        let d = ctx.tape.resize_bilinear(x2, h / 4, w / 4);
        let x3 = self.down2.forward(ctx, d);
        let u = ctx.tape.resize_bilinear(x3, h / 2, w / 2);
        let u = ctx.tape.concat_channels(&[u, x2]);
        let y = self.up1.forward(ctx, u);
        let u = ctx.tape.resize_bilinear(y, h, w);
        let u = ctx.tape.concat_channels(&[u, x1]);
        let y = self.up2.forward(ctx, u);
        Ok(FeatureMap {
            var: self.out.forward(ctx, y),
            role: FeatureRole::Fused,
        })
    }
}
